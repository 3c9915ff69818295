"""Closed-form alpha-beta latency models for Ring, Tree and NVRAR all-reduce.

All arithmetic is carried out on :class:`fractions.Fraction` so that the
additive decomposition ``total = latency_term + bandwidth_term`` holds exactly
and simulated virtual times can be compared with ``==``.  An infinite
bandwidth is represented by ``math.inf`` and contributes an exact zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Union

from .errors import InvalidArgument, InvalidTopology

Number = Union[int, float, str, Fraction]

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB

ALGORITHMS = ("ring", "tree", "nvrar")
# argmin tie-break: earlier wins
_TIE_ORDER = ("nvrar", "tree", "ring")


def exact(value: Number) -> Fraction:
    """Convert ``value`` to a Fraction, reading floats by their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InvalidArgument(f"expected a number, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidArgument(f"expected a finite number, got {value!r}")
        return Fraction(repr(value))
    return Fraction(value)


def _bandwidth(value: Number):
    """Bandwidth in bytes/s: a positive Fraction or ``math.inf``."""
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(value, float) and math.isinf(value):
        if value < 0:
            raise InvalidArgument("bandwidth must be positive")
        return math.inf
    beta = exact(value)
    if beta <= 0:
        raise InvalidArgument(f"bandwidth must be positive, got {value!r}")
    return beta


def transfer_time(nbytes: Number, beta) -> Fraction:
    """Serialization time of ``nbytes`` over a link of bandwidth ``beta``."""
    if beta == math.inf:
        return Fraction(0)
    return exact(nbytes) / beta


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class ClusterTopology:
    """``nodes`` nodes with ``gpus_per_node`` GPUs each."""

    nodes: int
    gpus_per_node: int

    def __post_init__(self):
        for name in ("nodes", "gpus_per_node"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise InvalidTopology(f"{name} must be an integer >= 1, got {v!r}")

    @property
    def world_size(self) -> int:
        return self.nodes * self.gpus_per_node

    @property
    def log2_nodes(self) -> int:
        self.require_pow2_nodes()
        return self.nodes.bit_length() - 1

    def require_pow2_nodes(self) -> None:
        if not is_power_of_two(self.nodes):
            raise InvalidTopology(
                f"node count must be a power of two for tree/nvrar, got N={self.nodes}"
            )


@dataclass(frozen=True)
class CostParams:
    """Per-tier latency (seconds) and bandwidth (bytes/s), plus the flag-fusing
    payload inflation ``eta``.

    Defaults follow the worked examples: 0.5 us intra, 2 us inter, infinite
    bandwidth, ``eta = 2`` (4-byte data + 4-byte flag per word).
    """

    alpha_intra: Number = Fraction(1, 2_000_000)
    alpha_inter: Number = Fraction(2, 1_000_000)
    beta_intra: Number = math.inf
    beta_inter: Number = math.inf
    eta: Number = 2

    def __post_init__(self):
        for name in ("alpha_intra", "alpha_inter"):
            a = exact(getattr(self, name))
            if a < 0:
                raise InvalidArgument(f"{name} must be >= 0")
            object.__setattr__(self, name, a)
        for name in ("beta_intra", "beta_inter"):
            object.__setattr__(self, name, _bandwidth(getattr(self, name)))
        eta = exact(self.eta)
        if not 1 < eta <= 2:
            raise InvalidArgument(f"eta must satisfy 1 < eta <= 2, got {self.eta!r}")
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_microseconds(cls, alpha_intra_us=0.5, alpha_inter_us=2.0,
                          beta_intra=math.inf, beta_inter=math.inf, eta=2):
        us = Fraction(1, 1_000_000)
        return cls(exact(alpha_intra_us) * us, exact(alpha_inter_us) * us,
                   beta_intra, beta_inter, eta)

    def has_tier_ordering(self) -> bool:
        """Whether intra-node links are strictly faster than inter-node ones."""
        return self.alpha_intra < self.alpha_inter and self.beta_intra > self.beta_inter


@dataclass(frozen=True)
class ModelPrediction:
    latency_term: Fraction
    bandwidth_term: Fraction
    total: Fraction = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.latency_term + self.bandwidth_term)

    @property
    def total_us(self) -> float:
        return float(self.total * 1_000_000)

    @property
    def latency_us(self) -> float:
        return float(self.latency_term * 1_000_000)

    @property
    def bandwidth_us(self) -> float:
        return float(self.bandwidth_term * 1_000_000)


def _msg(msg_bytes) -> Fraction:
    m = exact(msg_bytes)
    if m < 0:
        raise InvalidArgument(f"message size must be >= 0, got {msg_bytes!r}")
    return m


def ring_allreduce_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Flat ring: ``2(NG-1) a_inter + 2 (NG-1)/NG * |M|/b_inter``."""
    m = _msg(msg_bytes)
    p = topo.world_size
    latency = 2 * (p - 1) * params.alpha_inter
    bandwidth = 2 * Fraction(p - 1, p) * transfer_time(m, params.beta_inter)
    return ModelPrediction(latency, bandwidth)


def tree_allreduce_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Intra chain plus inter-node binary tree, inter bandwidth term only."""
    m = _msg(msg_bytes)
    n, g = topo.nodes, topo.gpus_per_node
    latency = 2 * (g - 1) * params.alpha_intra + 2 * topo.log2_nodes * params.alpha_inter
    bandwidth = 2 * Fraction(n - 1, n) * transfer_time(m, params.beta_inter)
    return ModelPrediction(latency, bandwidth)


def reduce_scatter_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Intra-node ring reduce-scatter over the node's G GPUs."""
    m = _msg(msg_bytes)
    g = topo.gpus_per_node
    return ModelPrediction(
        (g - 1) * params.alpha_intra,
        Fraction(g - 1, g) * transfer_time(m, params.beta_intra),
    )


def all_gather_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Intra-node ring all-gather; same cost shape as the reduce-scatter."""
    return reduce_scatter_time(topo, params, msg_bytes)


def recursive_doubling_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Inter-node phase of NVRAR on the |M|/G shard, inflated by eta."""
    m = _msg(msg_bytes)
    n, g = topo.nodes, topo.gpus_per_node
    latency = topo.log2_nodes * params.alpha_inter
    bandwidth = Fraction(n - 1, n) * transfer_time(params.eta * m / g, params.beta_inter)
    return ModelPrediction(latency, bandwidth)


def nvrar_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Sum of reduce-scatter, recursive doubling and all-gather phases."""
    m = _msg(msg_bytes)
    n, g = topo.nodes, topo.gpus_per_node
    latency = 2 * (g - 1) * params.alpha_intra + topo.log2_nodes * params.alpha_inter
    shard = m / g
    bandwidth = (
        2 * (g - 1) * transfer_time(shard, params.beta_intra)
        + Fraction(n - 1, n) * params.eta * transfer_time(shard, params.beta_inter)
    )
    return ModelPrediction(latency, bandwidth)


def nvrar_exchange_time(topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    """Like :func:`nvrar_time` but charging what recursive doubling moves.

    Every one of the ``log2 N`` steps ships the whole fused shard to its
    peer, so the inter-node volume is ``log2 N * eta * |M| / G`` per rank
    instead of the ``(N - 1) / N`` fraction of :func:`nvrar_time`.
    """
    m = _msg(msg_bytes)
    g = topo.gpus_per_node
    latency = 2 * (g - 1) * params.alpha_intra + topo.log2_nodes * params.alpha_inter
    shard = m / g
    bandwidth = (
        2 * (g - 1) * transfer_time(shard, params.beta_intra)
        + topo.log2_nodes * params.eta * transfer_time(shard, params.beta_inter)
    )
    return ModelPrediction(latency, bandwidth)


MODELS = {
    "ring": ring_allreduce_time,
    "tree": tree_allreduce_time,
    "nvrar": nvrar_time,
}


def predict(algorithm: str, topo: ClusterTopology, params: CostParams, msg_bytes) -> ModelPrediction:
    try:
        model = MODELS[algorithm]
    except KeyError:
        raise InvalidArgument(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    return model(topo, params, msg_bytes)


@dataclass(frozen=True)
class Selection:
    algorithm: str
    predictions: Dict[str, ModelPrediction]


def best_algorithm(topo: ClusterTopology, params: CostParams, msg_bytes) -> Selection:
    """Algorithm with the smallest predicted total; ties go NVRAR, Tree, Ring."""
    topo.require_pow2_nodes()
    preds = {name: MODELS[name](topo, params, msg_bytes) for name in ALGORITHMS}
    best = min(_TIE_ORDER, key=lambda name: (preds[name].total, _TIE_ORDER.index(name)))
    return Selection(best, preds)
