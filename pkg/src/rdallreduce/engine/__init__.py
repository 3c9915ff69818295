"""Rank execution over a virtual-time or a concurrent transport."""

from __future__ import annotations

import inspect

from ..costmodel import ClusterTopology, CostParams
from ..errors import InvalidArgument
from .core import (BlockedTask, Compute, Delivery, Join, RankContext, RankId, RunResult,
                   SymmetricHeap, Tier, WaitCounter, WaitFlags, all_ranks, atomic_increment_and_wait_peers, gid_of, rank_of,
                   tier_between, write_trace)
from .threaded import ThreadedTransport
from .virtual import VirtualTransport

MODES = ("virtual", "concurrent")


def _as_generator(value):
    if inspect.isgenerator(value):
        return value

    def done():
        return value
        yield  # pragma: no cover

    return done()


def make_transport(topo, mode="virtual", params=None, *, max_delay=0.0, seed=0,
                   timeout=5.0, signal_latency=0):
    if mode == "virtual":
        return VirtualTransport(topo, params, signal_latency=signal_latency)
    if mode == "concurrent":
        return ThreadedTransport(topo, max_delay=max_delay, seed=seed, timeout=timeout)
    raise InvalidArgument(f"unknown transport {mode!r}; expected one of {MODES}")


def run_ranks(topo: ClusterTopology, program, mode: str = "virtual",
              params: CostParams = None, *, max_delay: float = 0.0, seed: int = 0,
              timeout: float = 5.0, signal_latency=0, trace_path=None) -> RunResult:
    """Run ``program(ctx)`` once per rank and collect results and finish times.

    In virtual mode finish times are exact virtual seconds (Fractions); in
    concurrent mode they are wall-clock seconds since the run started.
    """
    transport = make_transport(topo, mode, params, max_delay=max_delay, seed=seed,
                               timeout=timeout, signal_latency=signal_latency)
    gens = [_as_generator(program(RankContext(transport, r))) for r in all_ranks(topo)]
    results, finish = transport.run(gens)
    trace = list(transport.trace)
    if trace_path is not None:
        write_trace(trace, trace_path)
    return RunResult(
        topo=topo,
        mode=mode,
        results=results,
        finish_times=finish,
        trace=trace,
        issued_bytes=transport.issued_bytes,
        delivered_bytes=transport.delivered_bytes,
        puts_issued=list(transport.puts_issued),
        signals_issued=transport.signals_issued,
    )


__all__ = [
    "BlockedTask", "Compute", "Delivery", "Join", "MODES", "RankContext", "RankId", "RunResult",
    "SymmetricHeap", "ThreadedTransport", "Tier", "VirtualTransport", "WaitCounter", "WaitFlags",
    "all_ranks",
    "atomic_increment_and_wait_peers", "gid_of", "make_transport", "rank_of", "run_ranks",
    "tier_between", "write_trace",
]
