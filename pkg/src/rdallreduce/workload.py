"""Decode-phase all-reduce sizing and a tile-count GEMM cost model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .costmodel import ClusterTopology, CostParams, exact, predict
from .errors import InvalidArgument

BYTES_PER_ELEMENT = {"bf16": 2, "fp16": 2, "fp32": 4}
# attention output projection + MLP down projection
ALLREDUCES_PER_LAYER = 2


def _positive(name, value):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise InvalidArgument(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class DecodeWorkload:
    batch_size: int
    hidden_dim: int
    bytes_per_element: int = 2
    num_layers: int = 1

    def __post_init__(self):
        for name in ("batch_size", "hidden_dim", "bytes_per_element", "num_layers"):
            _positive(name, getattr(self, name))


@dataclass(frozen=True)
class GemmShape:
    m: int
    n: int
    k: int

    def __post_init__(self):
        for name in ("m", "n", "k"):
            _positive(name, getattr(self, name))


@dataclass(frozen=True)
class GemmMachine:
    tile_m: int = 128
    tile_n: int = 128
    time_per_tile_k_unit: object = Fraction(0)

    def __post_init__(self):
        _positive("tile_m", self.tile_m)
        _positive("tile_n", self.tile_n)
        cost = exact(self.time_per_tile_k_unit)
        if cost < 0:
            raise InvalidArgument("time_per_tile_k_unit must be >= 0")
        object.__setattr__(self, "time_per_tile_k_unit", cost)


def decode_msg_bytes(w: DecodeWorkload) -> int:
    """Bytes of one decode-step all-reduce: batch x hidden x element size."""
    return w.batch_size * w.hidden_dim * w.bytes_per_element


def gemm_time(shape: GemmShape, machine: GemmMachine) -> Fraction:
    """Output tiles times reduction depth times per-tile cost.

    Shrinking M inside one tile row changes nothing, halving K halves the time.
    """
    tiles = math.ceil(shape.m / machine.tile_m) * math.ceil(shape.n / machine.tile_n)
    return tiles * shape.k * machine.time_per_tile_k_unit


@dataclass(frozen=True)
class StepEstimate:
    algorithm: str
    step_time: Fraction
    comm_time: Fraction
    gemm_time: Fraction

    def speedup_vs(self, other: "StepEstimate") -> float:
        """How many times faster this estimate is than ``other``."""
        if self.step_time == 0:
            return 1.0 if other.step_time == 0 else math.inf
        return float(other.step_time / self.step_time)


def tp_decode_step_time(w: DecodeWorkload, topo: ClusterTopology, params: CostParams,
                        machine: GemmMachine, algorithm: str,
                        gemm: GemmShape = None) -> StepEstimate:
    """Per-token decode latency under tensor parallelism over all NG ranks.

    Each of ``num_layers`` layers runs its GEMM with K split across the ranks
    and two all-reduces of ``decode_msg_bytes``.  The default GEMM is
    ``M = batch, N = hidden, K = 7 * hidden``.
    """
    gemm = gemm or GemmShape(w.batch_size, w.hidden_dim, 7 * w.hidden_dim)
    shard = GemmShape(gemm.m, gemm.n, math.ceil(gemm.k / topo.world_size))
    per_gemm = gemm_time(shard, machine)
    per_comm = predict(algorithm, topo, params, decode_msg_bytes(w)).total
    layers = w.num_layers
    comm = layers * ALLREDUCES_PER_LAYER * per_comm
    compute = layers * per_gemm
    return StepEstimate(algorithm, comm + compute, comm, compute)


def speedup_vs(w: DecodeWorkload, topo: ClusterTopology, params: CostParams,
               machine: GemmMachine, algorithm: str, other: str,
               gemm: GemmShape = None) -> float:
    """Step-time ratio ``other / algorithm`` (same GEMM term, different collective)."""
    mine = tp_decode_step_time(w, topo, params, machine, algorithm, gemm)
    theirs = tp_decode_step_time(w, topo, params, machine, other, gemm)
    return mine.speedup_vs(theirs)
