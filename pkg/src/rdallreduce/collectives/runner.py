"""Drive back-to-back all-reduce calls on a transport and time them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from ..costmodel import ClusterTopology, CostParams
from ..engine import RunResult, run_ranks
from ..errors import InvalidArgument
from .nvrar import nvrar
from .ring import ring_allreduce
from .state import NvrarConfig, RankState
from .tree import tree_allreduce

ALGORITHMS = {
    "ring": ring_allreduce,
    "tree": tree_allreduce,
    "nvrar": nvrar,
}


def serial_sum(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Reference result: left-to-right elementwise sum in global rank order."""
    total = np.array(inputs[0], copy=True)
    for x in inputs[1:]:
        total = total + x
    return total


@dataclass
class AllreduceRun:
    algorithm: str
    outputs: List[List[np.ndarray]]   # [call][gid]
    call_times: list                  # per call, max-rank completion delta
    final_seqs: List[int]
    run: RunResult

    @property
    def mean_time(self):
        return sum(self.call_times, type(self.call_times[0])(0)) / len(self.call_times)


def run_allreduce(topo: ClusterTopology, algorithm: str, inputs, *, calls: int = 1,
                  mode: str = "virtual", params: CostParams = None,
                  config: NvrarConfig = None, initial_seq: int = 0, **transport_opts
                  ) -> AllreduceRun:
    """Run ``calls`` consecutive all-reduces of ``algorithm`` on every rank.

    ``inputs`` is either a list over ranks (reused for each call) or a callable
    ``inputs(call, gid) -> array``.  The time of call ``i`` is the latest rank
    completion of call ``i`` minus that of call ``i - 1`` (run start for the
    first call), matching back-to-back replay with no host barrier.
    """
    try:
        fn = ALGORITHMS[algorithm]
    except KeyError:
        raise InvalidArgument(f"unknown algorithm {algorithm!r}; expected one of "
                              f"{sorted(ALGORITHMS)}") from None
    if calls < 1:
        raise InvalidArgument("calls must be >= 1")
    source: Callable = inputs if callable(inputs) else (lambda call, gid: inputs[gid])

    def program(ctx):
        state = RankState(ctx.rank, algorithm, seq=initial_seq)
        outs, ends = [], []
        for call in range(calls):
            out = yield from fn(ctx, state, source(call, ctx.gid), config)
            outs.append(out)
            ends.append(ctx.now())
        return outs, ends, state.seq

    run = run_ranks(topo, program, mode, params, **transport_opts)
    outputs = [[run.results[g][0][c] for g in range(topo.world_size)] for c in range(calls)]
    ends = [max(run.results[g][1][c] for g in range(topo.world_size)) for c in range(calls)]
    times = [ends[0]] + [ends[i] - ends[i - 1] for i in range(1, calls)]
    seqs = [run.results[g][2] for g in range(topo.world_size)]
    return AllreduceRun(algorithm, outputs, times, seqs, run)
