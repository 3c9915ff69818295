"""Transport-independent pieces of the rank execution engine.

Rank programs are generator functions ``program(ctx)``.  Non-blocking
operations (``put_nbi``, ``atomic_set``) are plain method calls on the
context; anything that can block is expressed by *yielding* an operation
object built by the context (``yield ctx.wait_until(...)``).  Sub-routines
compose with ``yield from`` and return values through ``StopIteration``.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, List, Optional, Sequence

import numpy as np

from ..costmodel import ClusterTopology
from ..errors import InvalidArgument, ProtocolFault

WORD_BYTES = 8
COUNTER_BYTES = 4


@dataclass(frozen=True, order=True)
class RankId:
    node: int
    local: int

    def __str__(self):
        return f"({self.node},{self.local})"


def rank_of(topo: ClusterTopology, gid: int) -> RankId:
    if not 0 <= gid < topo.world_size:
        raise InvalidArgument(f"global rank {gid} outside [0, {topo.world_size})")
    return RankId(*divmod(gid, topo.gpus_per_node))


def gid_of(topo: ClusterTopology, rank: RankId) -> int:
    if not (0 <= rank.node < topo.nodes and 0 <= rank.local < topo.gpus_per_node):
        raise InvalidArgument(f"rank {rank} outside topology {topo}")
    return rank.node * topo.gpus_per_node + rank.local


def all_ranks(topo: ClusterTopology) -> List[RankId]:
    return [rank_of(topo, g) for g in range(topo.world_size)]


class Tier(enum.Enum):
    INTRA = "intra"
    INTER = "inter"


def tier_between(src: RankId, dst: RankId) -> Tier:
    return Tier.INTRA if src.node == dst.node else Tier.INTER


# ---------------------------------------------------------------------------
# blocking operations yielded by rank programs


@dataclass(frozen=True)
class WaitFlags:
    """Every fused word in ``[offset, offset + 8*nwords)`` carries ``expected``."""

    region: str
    offset: int
    nwords: int
    expected: int

    def describe(self):
        return (f"flags region={self.region} offset={self.offset} "
                f"words={self.nwords} == {self.expected}")


@dataclass(frozen=True)
class WaitCounter:
    """The 32-bit counter in ``slot`` reaches at least ``target``."""

    region: str
    slot: int
    target: int
    peer: Optional[RankId] = None

    def describe(self):
        who = f" (published by {self.peer})" if self.peer is not None else ""
        return f"counter region={self.region} slot={self.slot} >= {self.target}{who}"


@dataclass(frozen=True)
class Join:
    """Run sub-tasks of the same rank concurrently; resume with their results."""

    tasks: Sequence[Iterator]


@dataclass(frozen=True)
class Compute:
    seconds: Any


@dataclass(frozen=True)
class BlockedTask:
    rank: RankId
    task: str
    op: Any

    def describe(self):
        return f"rank {self.rank} [{self.task}] waiting on {self.op.describe()}"


@dataclass(frozen=True)
class Delivery:
    time: Any
    src: int
    dst: int
    region: str
    offset: int
    nbytes: int


# ---------------------------------------------------------------------------
# symmetric heap


class SymmetricHeap:
    """Named regions with one equally sized instance per rank.

    Allocation is collective in spirit: the first rank to allocate a name fixes
    its length for everyone and a later request with another length is a
    protocol fault.  Backing memory is materialized on first touch.
    """

    def __init__(self, world_size: int):
        self.world_size = world_size
        self.lengths = {}
        self._memory = {}
        self._lock = threading.Lock()

    def alloc(self, name: str, nbytes: int) -> None:
        with self._lock:
            known = self.lengths.setdefault(name, nbytes)
        if nbytes < 0:
            raise InvalidArgument(f"negative region length for {name!r}")
        if known != nbytes:
            raise ProtocolFault(
                f"symmetric allocation mismatch for region {name!r}: "
                f"{known} bytes already allocated, {nbytes} requested"
            )

    def memory(self, gid: int, name: str) -> np.ndarray:
        buf = self._memory.get((gid, name))
        if buf is not None:
            return buf
        with self._lock:
            buf = self._memory.get((gid, name))
            if buf is None:
                if name not in self.lengths:
                    raise ProtocolFault(f"unknown region {name!r}")
                buf = np.zeros(self.lengths[name], dtype=np.uint8)
                self._memory[gid, name] = buf
            return buf

    def check_write(self, name: str, offset: int, nbytes: int) -> None:
        length = self.lengths.get(name)
        if length is None:
            raise ProtocolFault(f"put to unknown region {name!r}")
        if offset < 0 or offset + nbytes > length:
            raise ProtocolFault(
                f"out-of-bounds put to {name!r}: [{offset}, {offset + nbytes}) "
                f"exceeds length {length}"
            )


def flags_match(buf: np.ndarray, op: WaitFlags) -> bool:
    if op.nwords == 0:
        return True
    words = buf[op.offset:op.offset + op.nwords * WORD_BYTES].view(np.uint32)
    return bool(np.all(words[1::2] == np.uint32(op.expected)))


def counter_value(buf: np.ndarray, slot: int) -> int:
    start = slot * COUNTER_BYTES
    return int(buf[start:start + COUNTER_BYTES].view(np.uint32)[0])


def is_satisfied(heap: SymmetricHeap, gid: int, op) -> bool:
    buf = heap.memory(gid, op.region)
    if isinstance(op, WaitFlags):
        return flags_match(buf, op)
    return counter_value(buf, op.slot) >= op.target


def as_bytes(payload) -> np.ndarray:
    """Snapshot a payload as a contiguous uint8 array (copied at issue)."""
    arr = np.ascontiguousarray(payload)
    return arr.view(np.uint8).reshape(-1).copy()


# ---------------------------------------------------------------------------
# rank context


class RankContext:
    """Per-rank handle through which programs touch the transport."""

    def __init__(self, transport, rank: RankId):
        self.transport = transport
        self.topo = transport.topo
        self.rank = rank
        self.gid = gid_of(self.topo, rank)

    def rank_id(self, gid: int) -> RankId:
        return rank_of(self.topo, gid)

    def global_id(self, rank: RankId) -> int:
        return gid_of(self.topo, rank)

    def alloc(self, name: str, nbytes: int) -> None:
        self.transport.heap.alloc(name, nbytes)

    def local(self, name: str) -> np.ndarray:
        """This rank's instance of a symmetric region (owner access)."""
        return self.transport.heap.memory(self.gid, name)

    def put_nbi(self, dst: RankId, region: str, offset: int, payload,
                tier: Optional[Tier] = None, signal=None) -> int:
        """Non-blocking one-sided write of ``payload`` into ``dst``'s region.

        ``signal=(region, slot, value)`` stores ``value`` into a 32-bit counter
        at ``dst`` together with the data (put-with-signal).  ``tier`` forces
        the link class instead of deriving it from the node ranks.
        """
        data = as_bytes(payload)
        self.transport.heap.check_write(region, offset, data.size)
        if signal is not None:
            sregion, slot, _ = signal
            self.transport.heap.check_write(sregion, slot * COUNTER_BYTES, COUNTER_BYTES)
        dst_gid = gid_of(self.topo, dst)
        return self.transport.issue_put(self.gid, dst_gid, region, offset, data,
                                        tier or tier_between(self.rank, dst), signal)

    def atomic_set(self, dst: RankId, region: str, slot: int, value: int) -> None:
        """Remote 32-bit store, ordered with earlier puts on the same pair."""
        self.transport.heap.check_write(region, slot * COUNTER_BYTES, COUNTER_BYTES)
        self.transport.issue_signal(self.gid, gid_of(self.topo, dst), region, slot, value)

    def read(self, name: str) -> np.ndarray:
        """Consistent snapshot of a local region (no torn words)."""
        return self.transport.snapshot(self.gid, name)

    def now(self):
        return self.transport.now()

    # blocking operations: yield the returned object
    def wait_until(self, region: str, offset: int, expected: int, nwords: int = 1) -> WaitFlags:
        if offset % WORD_BYTES:
            raise ProtocolFault(f"fused-word offset {offset} is not 8-byte aligned", self.rank)
        return WaitFlags(region, offset, nwords, int(expected))

    def wait_counter(self, region: str, slot: int, target: int, peer=None) -> WaitCounter:
        return WaitCounter(region, slot, int(target), peer)

    def join(self, tasks) -> Join:
        return Join(list(tasks))

    def compute(self, seconds) -> Compute:
        return Compute(seconds)


def atomic_increment_and_wait_peers(ctx: RankContext, region: str,
                                    peers: Sequence[RankId], target: int):
    """Publish ``target`` to every listed peer, then wait for each of them.

    Only the listed peers are waited on; this is not a barrier.  ``region``
    must be a symmetric counter region with one slot per global rank.
    """
    ctx.alloc(region, COUNTER_BYTES * ctx.topo.world_size)
    for peer in peers:
        ctx.atomic_set(peer, region, ctx.gid, target)
    for peer in peers:
        yield ctx.wait_counter(region, ctx.global_id(peer), target, peer)


@dataclass
class RunResult:
    topo: ClusterTopology
    mode: str
    results: List[Any]
    finish_times: List[Any]
    trace: List[Delivery] = field(default_factory=list)
    issued_bytes: int = 0
    delivered_bytes: int = 0
    puts_issued: List[int] = field(default_factory=list)
    signals_issued: int = 0

    @property
    def elapsed(self):
        return max(self.finish_times) if self.finish_times else 0

    def result_of(self, rank: RankId):
        return self.results[gid_of(self.topo, rank)]

    def puts_to_region(self, prefix: str) -> List[int]:
        """Per source rank count of delivered puts whose region starts with ``prefix``."""
        counts = [0] * self.topo.world_size
        for d in self.trace:
            if d.region.startswith(prefix):
                counts[d.src] += 1
        return counts


def write_trace(trace: Sequence[Delivery], path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("time_us,src,dst,region,offset,bytes\n")
        for d in trace:
            fh.write(f"{float(d.time) * 1e6:.3f},{d.src},{d.dst},{d.region},{d.offset},{d.nbytes}\n")
