"""Hierarchical tree baseline: intra-node chain plus inter-node binary tree.

Reduce: local rank G-1 -> ... -> 0 along a chain, then node leaders combine
over ``log2 N`` binomial-tree rounds towards node 0.  Broadcast mirrors the
reduction.  A single tree is used (not a double binary tree); the latency
term is the same.
"""

from __future__ import annotations

import numpy as np

from ..engine import RankId, atomic_increment_and_wait_peers
from ..engine.core import COUNTER_BYTES
from .fused import element_dtype
from .state import RankState


def _tree_links(node: int, log2n: int):
    """(parent, children) of ``node`` in the binomial tree rooted at node 0."""
    parent = None
    children = []
    for i in range(log2n):
        bit = 1 << i
        if node & bit:
            parent = node - bit
            break
        children.append(node + bit)
    return parent, children


def tree_allreduce(ctx, state: RankState, vec, config=None):
    vec = np.asarray(vec)
    dtype = element_dtype(vec.dtype)
    topo = ctx.topo
    log2n = topo.log2_nodes
    n_g, g_count = ctx.rank.node, ctx.rank.local
    G = topo.gpus_per_node
    seq = state.next_seq()
    if topo.world_size == 1:
        return vec.copy()

    leader = g_count == 0
    parent, children = _tree_links(n_g, log2n) if leader else (None, [])
    peers = []
    if g_count > 0:
        peers.append(RankId(n_g, g_count - 1))
    if g_count < G - 1:
        peers.append(RankId(n_g, g_count + 1))
    if parent is not None:
        peers.append(RankId(parent, 0))
    peers.extend(RankId(c, 0) for c in children)

    yield from atomic_increment_and_wait_peers(ctx, state.counter_region, peers, seq)

    base = state.buffer_set(vec.nbytes)
    sig = f"{base}.sig"
    # slots: 0 chain-up, 1 chain-down, 2 tree-down, 3.. tree-up per round
    ctx.alloc(sig, COUNTER_BYTES * (3 + log2n))
    up_chain, down_chain, down_tree = f"{base}.cu", f"{base}.cd", f"{base}.td"
    for name in (up_chain, down_chain, down_tree):
        ctx.alloc(name, vec.nbytes)
    for i in range(log2n):
        ctx.alloc(f"{base}.tu{i}", vec.nbytes)

    def incoming(region):
        return ctx.local(region)[:vec.nbytes].view(dtype)

    acc = vec.copy()
    if g_count < G - 1:
        yield ctx.wait_counter(sig, 0, seq)
        acc = incoming(up_chain) + acc
    if g_count > 0:
        ctx.put_nbi(RankId(n_g, g_count - 1), up_chain, 0, acc, signal=(sig, 0, seq))
        yield ctx.wait_counter(sig, 1, seq)
        result = incoming(down_chain).copy()
    else:
        for i, child in enumerate(children):
            region = f"{base}.tu{i}"
            yield ctx.wait_counter(sig, 3 + i, seq)
            acc = incoming(region) + acc
        if parent is not None:
            round_ = len(children)
            ctx.put_nbi(RankId(parent, 0), f"{base}.tu{round_}", 0, acc,
                        signal=(sig, 3 + round_, seq))
            yield ctx.wait_counter(sig, 2, seq)
            result = incoming(down_tree).copy()
        else:
            result = acc
        for child in reversed(children):
            ctx.put_nbi(RankId(child, 0), down_tree, 0, result, signal=(sig, 2, seq))
    if g_count < G - 1:
        ctx.put_nbi(RankId(n_g, g_count + 1), down_chain, 0, result, signal=(sig, 1, seq))
    return result
