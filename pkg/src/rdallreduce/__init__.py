"""Hierarchical recursive-doubling all-reduce (NVRAR) with Ring and Tree
baselines, alpha-beta cost models, and a rank-level simulator."""

from .costmodel import (ClusterTopology, CostParams, ModelPrediction, best_algorithm,
                        nvrar_exchange_time, nvrar_time, predict, ring_allreduce_time,
                        tree_allreduce_time)
from .errors import DeadlockError, InvalidArgument, InvalidTopology, ProtocolFault

__version__ = "0.1.0"

__all__ = [
    "ClusterTopology", "CostParams", "DeadlockError", "InvalidArgument", "InvalidTopology",
    "ModelPrediction", "ProtocolFault", "best_algorithm", "nvrar_exchange_time", "nvrar_time",
    "predict", "ring_allreduce_time", "tree_allreduce_time",
]
