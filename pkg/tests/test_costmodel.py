import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from rdallreduce.costmodel import (ClusterTopology, CostParams, GiB, KiB, MiB, all_gather_time,
                                   best_algorithm, nvrar_time, reduce_scatter_time,
                                   ring_allreduce_time, tree_allreduce_time)
from rdallreduce.errors import InvalidArgument, InvalidTopology

from conftest import US


def test_ring_latency_term_n8_g4(latency_params):
    p = ring_allreduce_time(ClusterTopology(8, 4), latency_params, 12345)
    assert p.latency_term == 124 * US
    assert p.bandwidth_term == 0


def test_ring_single_rank_is_free():
    p = ring_allreduce_time(ClusterTopology(1, 1), CostParams(beta_inter=GiB), MiB)
    assert p.total == 0


def test_ring_bandwidth_substitution():
    params = CostParams(alpha_inter=US, beta_inter=GiB)
    p = ring_allreduce_time(ClusterTopology(2, 1), params, MiB)
    # 2us + 2 * (1/2) * (1 MiB / 1 GiB/s) = 2us + 1/1024 s
    assert p.total == 2 * US + Fraction(1, 1024)
    assert p.total_us == pytest.approx(978.5625)


def test_tree_latency_term_n8_g4(latency_params):
    assert tree_allreduce_time(ClusterTopology(8, 4), latency_params, 0).latency_term == 15 * US


def test_tree_single_rank_is_free(latency_params):
    assert tree_allreduce_time(ClusterTopology(1, 1), latency_params, MiB).total == 0


def test_tree_bandwidth_substitution():
    params = CostParams(alpha_inter=US, beta_inter=GiB)
    p = tree_allreduce_time(ClusterTopology(4, 1), params, 512 * KiB)
    assert p.latency_term == 4 * US
    assert p.bandwidth_term == 2 * Fraction(3, 4) * Fraction(512 * KiB, GiB)


def test_tree_rejects_non_power_of_two(latency_params):
    with pytest.raises(InvalidTopology, match="power of two"):
        tree_allreduce_time(ClusterTopology(3, 2), latency_params, 8)


def test_nvrar_latency_term_n8_g4(latency_params):
    assert nvrar_time(ClusterTopology(8, 4), latency_params, 0).latency_term == 9 * US


def test_nvrar_single_node_is_rs_plus_ag(latency_params):
    p = nvrar_time(ClusterTopology(1, 4), latency_params, MiB)
    assert p.latency_term == 3 * US
    assert p.bandwidth_term == 0


def test_nvrar_bandwidth_substitution():
    params = CostParams(alpha_inter=2 * US, beta_inter=GiB, eta=2)
    p = nvrar_time(ClusterTopology(4, 1), params, MiB)
    assert p.total == 4 * US + Fraction(3, 4) * Fraction(2 * MiB, GiB)


def test_nvrar_rejects_non_power_of_two(latency_params):
    with pytest.raises(InvalidTopology):
        nvrar_time(ClusterTopology(6, 1), latency_params, 8)


@pytest.mark.parametrize("fn", [reduce_scatter_time, all_gather_time])
def test_intra_phase_models(fn, latency_params):
    assert fn(ClusterTopology(4, 1), latency_params, MiB).total == 0
    assert fn(ClusterTopology(1, 4), latency_params, MiB).total == Fraction(3, 2) * US
    params = CostParams(alpha_intra=US, beta_intra=100 * GiB)
    p = fn(ClusterTopology(1, 2), params, MiB)
    assert p.total == US + Fraction(1, 2) * Fraction(MiB, 100 * GiB)


def test_best_algorithm_examples(latency_params):
    sel = best_algorithm(ClusterTopology(8, 4), latency_params, 0)
    assert sel.algorithm == "nvrar"
    assert [sel.predictions[a].total / US for a in ("nvrar", "tree", "ring")] == [9, 15, 124]
    assert best_algorithm(ClusterTopology(1, 1), latency_params, MiB).algorithm == "nvrar"
    sel = best_algorithm(ClusterTopology(2, 1), CostParams(alpha_inter=US), 0)
    assert sel.algorithm == "nvrar"
    assert (sel.predictions["nvrar"].total, sel.predictions["ring"].total,
            sel.predictions["tree"].total) == (US, 2 * US, 2 * US)


def test_best_algorithm_tie_prefers_tree_over_ring():
    # one node of two GPUs: ring pays 2 alpha_inter, tree 2 alpha_intra, nvrar also
    # pays the (slow) intra bandwidth term
    params = CostParams(alpha_intra=2 * US, alpha_inter=2 * US, beta_intra=1000)
    sel = best_algorithm(ClusterTopology(1, 2), params, 1000)
    assert sel.predictions["tree"].total == sel.predictions["ring"].total == 4 * US
    assert sel.predictions["nvrar"].total == 4 * US + 1
    assert sel.algorithm == "tree"


@pytest.mark.parametrize("kwargs", [
    dict(eta=1), dict(eta=Fraction(5, 2)), dict(beta_inter=0), dict(alpha_intra=-1),
    dict(alpha_inter=math.inf), dict(alpha_intra=math.nan), dict(beta_intra=-math.inf),
])
def test_invalid_params_rejected(kwargs):
    with pytest.raises(InvalidArgument):
        CostParams(**kwargs)


def test_negative_message_rejected(latency_params):
    with pytest.raises(InvalidArgument):
        ring_allreduce_time(ClusterTopology(2, 1), latency_params, -1)


def test_topology_validation():
    with pytest.raises(InvalidTopology):
        ClusterTopology(0, 1)
    with pytest.raises(InvalidTopology):
        ClusterTopology(1, 0)


def test_tier_ordering_flag():
    assert CostParams(beta_intra=300 * GiB, beta_inter=25 * GiB).has_tier_ordering()
    assert not CostParams().has_tier_ordering()  # both bandwidths infinite


# -- properties -------------------------------------------------------------------

alphas = st.fractions(min_value=0, max_value=100).map(lambda f: f * US)
betas = st.one_of(st.just(math.inf), st.integers(1, 10**12))
params_st = st.builds(CostParams, alphas, alphas, betas, betas,
                      st.fractions(min_value=Fraction(101, 100), max_value=2))
pow2 = st.integers(0, 6).map(lambda k: 2**k)
gpus = st.integers(1, 16)
sizes = st.integers(0, 64 * MiB)


@given(k=st.integers(1, 6), g=gpus, a_intra=alphas, a_inter=alphas)
def test_nvrar_latency_below_tree(k, g, a_intra, a_inter):
    params = CostParams(alpha_intra=a_intra, alpha_inter=a_inter + US)
    topo = ClusterTopology(2**k, g)
    assert nvrar_time(topo, params, 0).latency_term < tree_allreduce_time(topo, params, 0).latency_term


@given(k=st.integers(0, 5), g=gpus, params=params_st)
def test_latency_increments_when_nodes_double(k, g, params):
    small, big = ClusterTopology(2**k, g), ClusterTopology(2**(k + 1), g)
    d_ring = (ring_allreduce_time(big, params, 0).latency_term
              - ring_allreduce_time(small, params, 0).latency_term)
    d_tree = (tree_allreduce_time(big, params, 0).latency_term
              - tree_allreduce_time(small, params, 0).latency_term)
    d_nvrar = nvrar_time(big, params, 0).latency_term - nvrar_time(small, params, 0).latency_term
    assert d_ring == 2 * 2**k * g * params.alpha_inter
    assert d_tree == 2 * params.alpha_inter
    assert d_nvrar == params.alpha_inter


@given(n=pow2, g=gpus, params=params_st, m1=sizes, m2=sizes)
def test_monotone_in_size_and_linear_bandwidth(n, g, params, m1, m2):
    topo = ClusterTopology(n, g)
    for fn in (ring_allreduce_time, tree_allreduce_time, nvrar_time):
        a, b = fn(topo, params, min(m1, m2)), fn(topo, params, max(m1, m2))
        assert a.total <= b.total
        assert a.latency_term == b.latency_term
        both = fn(topo, params, m1 + m2)
        assert both.bandwidth_term == (fn(topo, params, m1).bandwidth_term
                                       + fn(topo, params, m2).bandwidth_term)
        assert both.total == both.latency_term + both.bandwidth_term


@given(n=pow2, g=gpus, params=params_st, m=sizes)
def test_monotone_in_alpha_and_inverse_beta(n, g, params, m):
    topo = ClusterTopology(n, g)
    slower = CostParams(params.alpha_intra * 2, params.alpha_inter * 2,
                        params.beta_intra if params.beta_intra == math.inf else params.beta_intra / 2,
                        params.beta_inter if params.beta_inter == math.inf else params.beta_inter / 2,
                        params.eta)
    for fn in (ring_allreduce_time, tree_allreduce_time, nvrar_time):
        assert fn(topo, params, m).total <= fn(topo, slower, m).total
