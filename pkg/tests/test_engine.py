from fractions import Fraction

import numpy as np
import pytest

from rdallreduce.costmodel import ClusterTopology, CostParams
from rdallreduce.engine import RankId, atomic_increment_and_wait_peers, run_ranks
from rdallreduce.errors import DeadlockError, InvalidArgument, ProtocolFault

from conftest import US


def fused(data, flag):
    return np.array([data, flag], dtype=np.uint32)


def ping(ctx, region="buf", nbytes=8):
    """Rank 0 puts one fused word to rank 1, rank 1 waits for it."""
    ctx.alloc(region, nbytes)
    if ctx.gid == 0:
        ctx.put_nbi(ctx.rank_id(1), region, 0, fused(42, 1))
        return ctx.now()
    yield ctx.wait_until(region, 0, 1)
    return ctx.now(), int(ctx.local(region).view(np.uint32)[0])


def test_inter_node_put_visible_after_alpha(latency_params):
    run = run_ranks(ClusterTopology(2, 1), ping, params=latency_params)
    assert run.results[1] == (2 * US, 42)
    assert run.trace[0].time == 2 * US
    assert (run.trace[0].src, run.trace[0].dst, run.trace[0].nbytes) == (0, 1, 8)


def test_empty_intra_put_costs_alpha_intra(latency_params):
    def prog(ctx):
        ctx.alloc("r", 8)
        if ctx.rank.local == 0:
            ctx.put_nbi(RankId(0, 1), "r", 0, np.zeros(0, dtype=np.uint8))
        return None

    run = run_ranks(ClusterTopology(1, 2), prog, params=latency_params)
    assert run.trace[0].time == US / 2
    assert run.trace[0].nbytes == 0


def test_puts_on_a_pair_arrive_in_issue_order():
    params = CostParams(alpha_inter=2 * US, beta_inter=1000)

    def prog(ctx):
        ctx.alloc("r", 2000)
        if ctx.gid == 0:
            ctx.put_nbi(ctx.rank_id(1), "r", 0, np.ones(1000, dtype=np.uint8))
            ctx.put_nbi(ctx.rank_id(1), "r", 1000, np.ones(8, dtype=np.uint8))
        return None
        yield

    run = run_ranks(ClusterTopology(2, 1), prog, params=params)
    assert [d.offset for d in run.trace] == [0, 1000]
    # the second message queues behind the first on the link
    assert run.trace[0].time == 1 + 2 * US
    assert run.trace[1].time == 1 + Fraction(8, 1000) + 2 * US


def test_wait_already_satisfied_takes_no_time():
    def prog(ctx):
        ctx.alloc("r", 8)
        ctx.local("r")[:] = fused(0, 7).view(np.uint8)
        yield ctx.wait_until("r", 0, 7)
        return ctx.now()

    assert run_ranks(ClusterTopology(1, 1), prog).results == [0]


def test_missing_flag_reports_deadlock():
    def prog(ctx):
        ctx.alloc("r", 8)
        if ctx.gid == 1:
            yield ctx.wait_until("r", 0, 99)

    with pytest.raises(DeadlockError) as info:
        run_ranks(ClusterTopology(2, 1), prog)
    assert info.value.blocked_ranks == [RankId(1, 0)]
    assert "== 99" in str(info.value)


def test_out_of_bounds_put_is_a_protocol_fault():
    def prog(ctx):
        ctx.alloc("r", 8)
        ctx.put_nbi(ctx.rank_id(0), "r", 4, fused(1, 1))
        yield

    with pytest.raises(ProtocolFault, match="out-of-bounds") as info:
        run_ranks(ClusterTopology(2, 1), prog)
    assert info.value.rank == RankId(0, 0)


def test_unknown_region_is_a_protocol_fault():
    def prog(ctx):
        ctx.put_nbi(ctx.rank_id(0), "nope", 0, fused(1, 1))
        yield

    with pytest.raises(ProtocolFault, match="unknown region"):
        run_ranks(ClusterTopology(1, 1), prog)


def test_asymmetric_allocation_is_a_protocol_fault():
    def prog(ctx):
        ctx.alloc("r", 8 * (ctx.gid + 1))
        yield ctx.compute(0)

    with pytest.raises(ProtocolFault, match="allocation mismatch"):
        run_ranks(ClusterTopology(2, 1), prog)


def test_misaligned_fused_wait_rejected():
    def prog(ctx):
        ctx.alloc("r", 16)
        yield ctx.wait_until("r", 4, 1)

    with pytest.raises(ProtocolFault, match="aligned"):
        run_ranks(ClusterTopology(1, 1), prog)


def test_unknown_transport_rejected():
    with pytest.raises(InvalidArgument):
        run_ranks(ClusterTopology(1, 1), lambda ctx: None, mode="mpi")


def test_empty_program_finishes_at_zero():
    run = run_ranks(ClusterTopology(2, 2), lambda ctx: None)
    assert run.finish_times == [0, 0, 0, 0]
    assert run.results == [None] * 4


def test_join_runs_subtasks_and_collects_results(latency_params):
    def worker(ctx, i):
        yield ctx.compute(i * US)
        return i * 10

    def prog(ctx):
        out = yield ctx.join(worker(ctx, i) for i in range(3))
        return out, ctx.now()

    run = run_ranks(ClusterTopology(1, 1), prog, params=latency_params)
    assert run.results[0] == ([0, 10, 20], 2 * US)


# -- sequence-number peer synchronization -------------------------------------------

def sync_program(target, stalled=None, done=None):
    def prog(ctx):
        if ctx.rank == stalled:
            return None
        log2n = ctx.topo.log2_nodes
        peers = [RankId(ctx.rank.node ^ (1 << i), ctx.rank.local) for i in range(log2n)]
        yield from atomic_increment_and_wait_peers(ctx, "seq", peers, target)
        if done is not None:
            done.append(ctx.rank)
        return ctx.now()

    return prog


def test_two_ranks_sync_and_proceed():
    run = run_ranks(ClusterTopology(2, 1), sync_program(1))
    assert run.results == [0, 0]
    assert run.signals_issued == 2


def test_four_nodes_wait_only_on_xor_peers():
    seen = []

    def prog(ctx):
        peers = [RankId(ctx.rank.node ^ 1, 0), RankId(ctx.rank.node ^ 2, 0)]
        ctx.alloc("seq", 16)
        ops = []
        for peer in peers:
            ctx.atomic_set(peer, "seq", ctx.gid, 1)
        for peer in peers:
            op = ctx.wait_counter("seq", ctx.global_id(peer), 1, peer)
            ops.append(op)
            yield op
        seen.append((ctx.rank.node, sorted(o.slot for o in ops)))

    run_ranks(ClusterTopology(4, 1), prog)
    assert sorted(seen) == [(0, [1, 2]), (1, [0, 3]), (2, [0, 3]), (3, [1, 2])]


@pytest.mark.parametrize("mode", ["virtual", "concurrent"])
def test_stalled_rank_blocks_only_its_peers(mode):
    done = []
    with pytest.raises(DeadlockError) as info:
        run_ranks(ClusterTopology(4, 1), sync_program(1, stalled=RankId(0, 0), done=done),
                  mode=mode, timeout=0.5)
    blocked = info.value.blocked
    assert sorted(b.rank for b in blocked) == [RankId(1, 0), RankId(2, 0)]
    assert all(b.op.peer == RankId(0, 0) for b in blocked)
    assert done == [RankId(3, 0)]


# -- determinism, conservation, trace --------------------------------------------------

def chatter(ctx):
    """Every rank sends two words to every other rank and waits for all of them."""
    n = ctx.topo.world_size
    ctx.alloc("inbox", 16 * n)
    for dst in range(n):
        if dst != ctx.gid:
            for k in range(2):
                ctx.put_nbi(ctx.rank_id(dst), "inbox", 16 * ctx.gid + 8 * k,
                            fused(1000 * ctx.gid + k, 1))
    for src in range(n):
        if src != ctx.gid:
            yield ctx.wait_until("inbox", 16 * src, 1, nwords=2)
    words = ctx.read("inbox").view(np.uint32)[0::2]
    return [int(w) for i, w in enumerate(words) if i // 2 != ctx.gid]


def test_virtual_runs_are_bit_identical():
    params = CostParams(beta_intra=10**9, beta_inter=10**8)
    a = run_ranks(ClusterTopology(2, 2), chatter, params=params)
    b = run_ranks(ClusterTopology(2, 2), chatter, params=params)
    assert a.trace == b.trace
    assert a.finish_times == b.finish_times
    assert a.results == b.results


def test_bytes_are_conserved():
    run = run_ranks(ClusterTopology(2, 2), chatter)
    assert run.issued_bytes == run.delivered_bytes == 4 * 3 * 2 * 8
    assert run.puts_issued == [6, 6, 6, 6]


def test_pair_order_holds_under_random_delays():
    def prog(ctx):
        ctx.alloc("r", 8 * 50)
        if ctx.gid == 0:
            for k in range(50):
                ctx.put_nbi(ctx.rank_id(1), "r", 8 * k, fused(k, 1))
        else:
            yield ctx.wait_until("r", 0, 1, nwords=50)

    for seed in range(5):
        run = run_ranks(ClusterTopology(2, 1), prog, "concurrent", max_delay=2e-4, seed=seed)
        assert [d.offset for d in run.trace] == [8 * k for k in range(50)]


def test_concurrent_results_independent_of_schedule():
    ref = run_ranks(ClusterTopology(2, 2), chatter).results
    for seed in range(100):
        run = run_ranks(ClusterTopology(2, 2), chatter, "concurrent",
                        max_delay=5e-5 if seed % 2 else 0.0, seed=seed)
        assert run.results == ref


def test_no_torn_fused_words_under_fuzzing():
    """Rank 0 rewrites the same words with new (data, flag) pairs; rank 1 polls
    snapshots and checks every word it sees is one whole write."""
    rounds, words = 30, 64

    def canary(flag, i):
        return (flag * 7919 + i * 104729) & 0xFFFFFFFF

    def prog(ctx):
        ctx.alloc("r", 8 * words)
        ctx.alloc("ack", 4 * ctx.topo.world_size)
        if ctx.gid == 0:
            for flag in range(1, rounds + 1):
                payload = np.empty(2 * words, dtype=np.uint32)
                payload[0::2] = [canary(flag, i) for i in range(words)]
                payload[1::2] = flag
                ctx.put_nbi(ctx.rank_id(1), "r", 0, payload)
                yield ctx.wait_counter("ack", 1, flag)
            return 0
        torn = 0
        for flag in range(1, rounds + 1):
            yield ctx.wait_until("r", 0, flag, nwords=words)
            snap = ctx.read("r").view(np.uint32)
            for i in range(words):
                f, d = int(snap[2 * i + 1]), int(snap[2 * i])
                torn += f != 0 and d != canary(f, i)
            ctx.atomic_set(ctx.rank_id(0), "ack", 1, flag)
        return torn

    for seed in range(10):
        run = run_ranks(ClusterTopology(2, 1), prog, "concurrent", max_delay=1e-4, seed=seed)
        assert run.results[1] == 0


def test_concurrent_deadlock_times_out():
    def prog(ctx):
        ctx.alloc("r", 8)
        yield ctx.wait_until("r", 0, 5)

    with pytest.raises(DeadlockError, match="timeout") as info:
        run_ranks(ClusterTopology(1, 2), prog, "concurrent", timeout=0.2)
    assert info.value.blocked_ranks == [RankId(0, 0), RankId(0, 1)]


def test_trace_dump_format(tmp_path, latency_params):
    path = tmp_path / "trace.csv"
    run_ranks(ClusterTopology(2, 1), ping, params=latency_params, trace_path=path)
    assert path.read_text() == "time_us,src,dst,region,offset,bytes\n2.000,0,1,buf,0,8\n"
