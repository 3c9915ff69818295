"""Ring schedules: flat ring all-reduce and the intra-node RS / AG phases."""

from __future__ import annotations

import numpy as np

from ..engine import RankId, Tier, atomic_increment_and_wait_peers
from ..engine.core import COUNTER_BYTES
from ..errors import ProtocolFault
from .fused import element_dtype
from .state import RankState


def pad_to(vec: np.ndarray, multiple: int) -> np.ndarray:
    extra = -vec.size % multiple
    if extra:
        return np.concatenate([vec, np.zeros(extra, dtype=vec.dtype)])
    return vec.copy()


def _received(ctx, region, dtype, count):
    return ctx.local(region)[:count * dtype.itemsize].view(dtype)


def ring_reduce_scatter(ctx, ring, pieces, base, seq, tier=None):
    """Reduce-scatter ``pieces`` (one per ring position) around ``ring``.

    Position ``p`` ends up owning the fully reduced ``pieces[p]``; each hop adds
    the received partial to the local piece (received + own).
    """
    size = len(ring)
    pos = ring.index(ctx.rank)
    if size == 1:
        return pieces[0].copy()
    dtype = pieces[0].dtype
    nbytes = pieces[0].nbytes
    succ = ring[(pos + 1) % size]
    sig = f"{base}.sig"
    ctx.alloc(sig, COUNTER_BYTES * 2 * (size - 1))
    acc = [p.copy() for p in pieces]
    for s in range(size - 1):
        region = f"{base}.rs{s}"
        ctx.alloc(region, nbytes)
        ctx.put_nbi(succ, region, 0, acc[(pos - s - 1) % size], tier=tier, signal=(sig, s, seq))
        yield ctx.wait_counter(sig, s, seq)
        idx = (pos - s - 2) % size
        acc[idx] = _received(ctx, region, dtype, pieces[idx].size) + acc[idx]
    return acc[pos]


def ring_all_gather(ctx, ring, shard, base, seq, tier=None):
    """All-gather equal shards around ``ring``; returns pieces in ring order."""
    size = len(ring)
    pos = ring.index(ctx.rank)
    pieces = [None] * size
    pieces[pos] = shard.copy()
    if size == 1:
        return pieces
    succ = ring[(pos + 1) % size]
    sig = f"{base}.sig"
    ctx.alloc(sig, COUNTER_BYTES * 2 * (size - 1))
    for s in range(size - 1):
        region = f"{base}.ag{s}"
        ctx.alloc(region, shard.nbytes)
        ctx.put_nbi(succ, region, 0, pieces[(pos - s) % size], tier=tier,
                    signal=(sig, size - 1 + s, seq))
        yield ctx.wait_counter(sig, size - 1 + s, seq)
        pieces[(pos - s - 1) % size] = _received(ctx, region, shard.dtype, shard.size).copy()
    return pieces


def node_ring(ctx):
    return [RankId(ctx.rank.node, g) for g in range(ctx.topo.gpus_per_node)]


def _check_members(ctx, members):
    if members is None:
        return
    for m in members:
        if m.node != ctx.rank.node:
            raise ProtocolFault(f"intra-node collective got cross-node participant {m}", ctx.rank)
    if sorted(members) != node_ring(ctx):
        raise ProtocolFault(f"intra-node collective needs every GPU of node {ctx.rank.node}",
                            ctx.rank)


def _ring_neighbours(ring, me):
    pos = ring.index(me)
    out = []
    for r in (ring[(pos - 1) % len(ring)], ring[(pos + 1) % len(ring)]):
        if r != me and r not in out:
            out.append(r)
    return out


def intra_reduce_scatter(ctx, state: RankState, vec, members=None):
    """Reduce-scatter over the caller's node; local rank g keeps shard g.

    The input is zero-padded to a multiple of G elements.
    """
    _check_members(ctx, members)
    vec = np.asarray(vec)
    element_dtype(vec.dtype)
    g = ctx.topo.gpus_per_node
    padded = pad_to(vec, g)
    if g == 1:
        return padded
    ring = node_ring(ctx)
    seq = state.next_seq()
    yield from atomic_increment_and_wait_peers(ctx, state.counter_region,
                                               _ring_neighbours(ring, ctx.rank), seq)
    base = state.buffer_set(padded.nbytes) + ".rs"
    return (yield from ring_reduce_scatter(ctx, ring, np.split(padded, g), base, seq))


def intra_all_gather(ctx, state: RankState, shard, members=None):
    """All-gather equal shards over the caller's node in local-rank order."""
    _check_members(ctx, members)
    shard = np.asarray(shard)
    element_dtype(shard.dtype)
    g = ctx.topo.gpus_per_node
    if g == 1:
        return shard.copy()
    ring = node_ring(ctx)
    seq = state.next_seq()
    yield from atomic_increment_and_wait_peers(ctx, state.counter_region,
                                               _ring_neighbours(ring, ctx.rank), seq)
    base = state.buffer_set(shard.nbytes) + ".ag"
    return np.concatenate((yield from ring_all_gather(ctx, ring, shard, base, seq)))


def ring_allreduce(ctx, state: RankState, vec, config=None):
    """Flat ring over all NG ranks in global-id order.

    Every hop is priced as an inter-node link: the ring is treated as a single
    flat ring whose cost is set by its slowest (inter-node) links.
    """
    vec = np.asarray(vec)
    element_dtype(vec.dtype)
    topo = ctx.topo
    p = topo.world_size
    seq = state.next_seq()
    if p == 1:
        return vec.copy()
    ring = [ctx.rank_id(i) for i in range(p)]
    padded = pad_to(vec, p)
    yield from atomic_increment_and_wait_peers(ctx, state.counter_region,
                                               _ring_neighbours(ring, ctx.rank), seq)
    base = state.buffer_set(padded.nbytes)
    mine = yield from ring_reduce_scatter(ctx, ring, np.split(padded, p), base, seq, Tier.INTER)
    pieces = yield from ring_all_gather(ctx, ring, mine, base, seq, Tier.INTER)
    return np.concatenate(pieces)[:vec.size]
