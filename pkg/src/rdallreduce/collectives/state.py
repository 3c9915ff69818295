from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

from ..engine import RankId
from ..errors import InvalidArgument, ProtocolFault
from .fused import SEQ_LIMIT, element_dtype


@dataclass(frozen=True)
class NvrarConfig:
    """Tuning knobs of the inter-node phase.

    ``blocks`` independent workers each own a contiguous run of chunks;
    ``chunk_bytes`` is measured on the fused (flag-carrying) buffer.  With
    ``chunk_bytes=None`` the shard is cut into one chunk per block.
    """

    blocks: int = 1
    chunk_bytes: Optional[int] = None
    dtype: str = "int32"

    def __post_init__(self):
        if isinstance(self.blocks, bool) or not isinstance(self.blocks, int) or self.blocks < 1:
            raise InvalidArgument(f"blocks must be an integer >= 1, got {self.blocks!r}")
        c = self.chunk_bytes
        if c is not None and (not isinstance(c, int) or c < 8 or c % 8):
            raise InvalidArgument(f"chunk_bytes must be a multiple of 8 and >= 8, got {c!r}")
        element_dtype(self.dtype)

    def chunk_words(self, nwords: int) -> int:
        if self.chunk_bytes is None:
            return max(1, -(-nwords // self.blocks))
        return self.chunk_bytes // 8

    def chunks(self, nwords: int):
        """Byte ranges ``(lo, hi)`` of every chunk, grouped per block."""
        if nwords == 0:
            return []
        cw = self.chunk_words(nwords)
        spans = [(q * cw * 8, min((q + 1) * cw, nwords) * 8)
                 for q in range(-(-nwords // cw))]
        per_block = -(-len(spans) // self.blocks)
        return [spans[i:i + per_block] for i in range(0, len(spans), per_block)]


@dataclass
class RankState:
    """Per-rank, per-algorithm persistent state: sequence counter and buffers.

    Buffer sets are keyed by message size so that repeated calls of one size
    reuse the same pre-allocated regions.
    """

    rank: RankId
    algorithm: str = "nvrar"
    seq: int = 0
    _sets: Dict[int, str] = field(default_factory=dict, repr=False)

    def next_seq(self) -> int:
        if self.seq + 1 >= SEQ_LIMIT:
            raise ProtocolFault("sequence number would wrap past 32 bits", self.rank)
        self.seq += 1
        return self.seq

    def buffer_set(self, nbytes: int) -> str:
        name = self._sets.get(nbytes)
        if name is None:
            name = f"{self.algorithm}.{len(self._sets)}"
            self._sets[nbytes] = name
        return name

    @property
    def counter_region(self) -> str:
        return f"{self.algorithm}.seq"
