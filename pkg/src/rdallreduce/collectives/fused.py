"""LL-style framing: each 4-byte element travels with a 4-byte sequence flag."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument, ProtocolFault

DTYPES = {"int32": np.dtype(np.int32), "float32": np.dtype(np.float32)}
SEQ_LIMIT = 2**32


def element_dtype(name_or_dtype) -> np.dtype:
    dt = np.dtype(name_or_dtype)
    if dt not in DTYPES.values():
        raise InvalidArgument(f"element type must be int32 or float32, got {dt}")
    return dt


@dataclass(frozen=True)
class FusedWord:
    data: int  # raw 32-bit pattern
    flag: int

    def to_bytes(self) -> bytes:
        return struct.pack("<II", self.data & 0xFFFFFFFF, self.flag & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "FusedWord":
        if len(raw) != 8:
            raise InvalidArgument(f"a fused word is 8 bytes, got {len(raw)}")
        return cls(*struct.unpack("<II", raw))


def _check_seq(seq: int) -> int:
    if not 0 <= seq < SEQ_LIMIT:
        raise ProtocolFault(f"sequence number {seq} outside the 32-bit flag range")
    return seq


def pack_fused(shard: np.ndarray, seq: int) -> np.ndarray:
    """Interleave ``shard`` with ``seq`` flags; returns ``8 * len(shard)`` bytes."""
    shard = np.ascontiguousarray(shard)
    element_dtype(shard.dtype)
    words = np.empty(2 * shard.size, dtype=np.uint32)
    words[0::2] = shard.view(np.uint32)
    words[1::2] = _check_seq(seq)
    return words.view(np.uint8)


def unpack_fused(buf: np.ndarray, seq: int, dtype="int32") -> np.ndarray:
    """Strip flags, raising ProtocolFault unless every flag equals ``seq``."""
    raw = np.ascontiguousarray(buf).view(np.uint8)
    if raw.size % 8:
        raise ProtocolFault(f"fused buffer length {raw.size} is not a multiple of 8")
    words = raw.view(np.uint32)
    flags = words[1::2]
    bad = np.flatnonzero(flags != np.uint32(_check_seq(seq)))
    if bad.size:
        i = int(bad[0])
        raise ProtocolFault(
            f"stale or missing data: word {i} carries flag {int(flags[i])}, expected {seq} "
            f"({bad.size} mismatched word(s))")
    return words[0::2].copy().view(element_dtype(dtype))
