"""Three-phase hierarchical all-reduce: intra-node reduce-scatter, inter-node
recursive doubling on fused data+flag words, intra-node all-gather."""

from __future__ import annotations

import numpy as np

from ..engine import RankId, atomic_increment_and_wait_peers
from .fused import element_dtype, pack_fused, unpack_fused
from .ring import node_ring, pad_to, ring_all_gather, ring_reduce_scatter
from .state import NvrarConfig, RankState


def rd_peers(rank: RankId, log2n: int):
    return [RankId(rank.node ^ (1 << i), rank.local) for i in range(log2n)]


def _rd_block(ctx, send, recv, spans, log2n, seq, dtype):
    """One worker: every step, every chunk of its span is put, awaited, reduced."""
    for step in range(log2n):
        peer = RankId(ctx.rank.node ^ (1 << step), ctx.rank.local)
        src_buf = ctx.local(send[step])
        dst_buf = ctx.local(recv[step])
        out_buf = ctx.local(send[step + 1])
        for lo, hi in spans:
            ctx.put_nbi(peer, recv[step], lo, src_buf[lo:hi])
            yield ctx.wait_until(recv[step], lo, seq, (hi - lo) // 8)
            theirs = dst_buf[lo:hi].view(np.uint32)[0::2].view(dtype)
            mine = src_buf[lo:hi].view(np.uint32)[0::2].view(dtype)
            out_buf[lo:hi] = pack_fused(theirs + mine, seq)


def rd_inter(ctx, state: RankState, packed, config: NvrarConfig, seq=None):
    """Recursive-doubling all-reduce of a fused shard across the node ranks.

    Step ``l`` exchanges with node ``r_n XOR 2**l`` (same local rank).  Send and
    receive buffers are distinct per step; ``config.blocks`` workers progress
    independently over disjoint chunk runs.  Returns the fused reduced shard.
    """
    packed = np.ascontiguousarray(packed).view(np.uint8)
    dtype = element_dtype(config.dtype)
    log2n = ctx.topo.log2_nodes
    seq = state.seq if seq is None else seq
    if log2n == 0:
        return packed.copy()
    base = state.buffer_set(packed.size // 2) + ".rd"
    send = [f"{base}.send{i}" for i in range(log2n + 1)]
    recv = [f"{base}.recv{i}" for i in range(log2n)]
    for name in send + recv:
        ctx.alloc(name, packed.size)
    ctx.local(send[0])[:] = packed
    blocks = config.chunks(packed.size // 8)
    yield ctx.join(_rd_block(ctx, send, recv, spans, log2n, seq, dtype) for spans in blocks)
    return ctx.local(send[log2n]).copy()


def nvrar(ctx, state: RankState, vec, config: NvrarConfig = None):
    """Hierarchical all-reduce; every rank returns the global elementwise sum.

    Summation order is fixed: intra-node ring order, then one pairwise add per
    recursive-doubling step in ascending step order.
    """
    config = config or NvrarConfig(dtype=np.asarray(vec).dtype.name)
    vec = np.asarray(vec)
    element_dtype(vec.dtype)
    topo = ctx.topo
    log2n = topo.log2_nodes
    G = topo.gpus_per_node
    seq = state.next_seq()
    if topo.world_size == 1:
        return vec.copy()

    yield from atomic_increment_and_wait_peers(ctx, state.counter_region,
                                               rd_peers(ctx.rank, log2n), seq)

    padded = pad_to(vec, G)
    base = state.buffer_set(padded.nbytes)
    ring = node_ring(ctx)
    shard = yield from ring_reduce_scatter(ctx, ring, np.split(padded, G), base + ".rs", seq)

    packed = pack_fused(shard, seq)
    out = yield from rd_inter(ctx, state, packed, config, seq)
    reduced = unpack_fused(out, seq, vec.dtype)

    pieces = yield from ring_all_gather(ctx, ring, reduced, base + ".ag", seq)
    return np.concatenate(pieces)[:vec.size]
