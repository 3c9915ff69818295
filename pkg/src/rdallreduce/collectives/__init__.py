"""All-reduce algorithms written as transport-agnostic rank programs."""

from .fused import FusedWord, element_dtype, pack_fused, unpack_fused
from .nvrar import nvrar, rd_inter, rd_peers
from .ring import intra_all_gather, intra_reduce_scatter, pad_to, ring_allreduce
from .runner import ALGORITHMS, AllreduceRun, run_allreduce, serial_sum
from .state import NvrarConfig, RankState
from .tree import tree_allreduce

__all__ = [
    "ALGORITHMS", "AllreduceRun", "FusedWord", "NvrarConfig", "RankState", "element_dtype",
    "intra_all_gather", "intra_reduce_scatter", "nvrar", "pack_fused", "pad_to", "rd_inter",
    "rd_peers", "ring_allreduce", "run_allreduce", "serial_sum", "tree_allreduce",
    "unpack_fused",
]
