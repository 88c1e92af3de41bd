import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wmpsbm.errors import DimensionMismatch, NoBoundaryLabels
from wmpsbm.flow import min_energy_flow, regular_tree_energy, uniform_flow_assignment
from wmpsbm.harness import fixed_shape_experiment
from wmpsbm.model import SbmParams, build_kernel, kernel_from_mean
from wmpsbm.sbm import Graph, SideInfo, SideInfoMode, make_side_info, sample_graph
from wmpsbm.tree import random_tree, regular_tree, sample_gw_tree, tree_from_parents
from wmpsbm.wmp import (WmpOptions, classify_root, decide, evolve_moments, init_messages, propagate,
                        revealed_cutset, run_tree, wmp_classify_graph)


def sym_kernel(theta, b=3.0, k=2):
    K = np.full((k, k), (1 - theta) / k) + theta * np.eye(k)
    return kernel_from_mean(b * K)


def noisy(prior, delta=0.3):
    return SideInfo(SideInfoMode.noisy(delta), np.asarray(prior), 0)


def run(state):
    for _ in range(state.tree.depth_cap):
        state = propagate(state, rescale=False)
    return state


def test_star_example():
    kern = sym_kernel(0.5)
    star = tree_from_parents([-1, 0, 0, 0]).with_prior([-1, 0, 0, 0])
    flow = min_energy_flow(star, 0.5**-2)
    assert np.allclose(flow.flow[1:], 1 / 3)
    st0 = init_messages(star, noisy(star.prior), flow, kern)
    assert np.allclose(st0.messages[1:], 4 / 3)
    st1 = propagate(st0, rescale=False)
    assert st1.messages[0] == pytest.approx(2.0)
    # rescaling divides by the largest message and records it
    st2 = propagate(st0)
    assert st2.messages[0] == pytest.approx(1.0) and st2.scales == [pytest.approx(2.0)]
    assert st2.unscaled(st2.messages[0]) == pytest.approx(2.0)
    assert classify_root(st2).label == 0


def test_three_communities_use_eigenvector_weight():
    K = np.array([[0.6, 0.3, 0.1], [0.3, 0.5, 0.2], [0.1, 0.2, 0.7]])
    kern = kernel_from_mean(4 * K)
    t = tree_from_parents([-1, 0]).with_prior([-1, 1])
    st0 = init_messages(t, noisy(t.prior), min_energy_flow(t, kern.theta**-2), kern)
    assert st0.messages[1] == pytest.approx(kern.theta**-2 * kern.w[1])


def test_initial_moment_ratio_is_inverse_delta_squared():
    delta = 0.37
    kern = sym_kernel(0.6)
    t = regular_tree(3, 2)
    t = t.with_prior(np.zeros(t.size, dtype=int))
    s = init_messages(t, noisy(t.prior, delta), min_energy_flow(t, kern.theta**-2), kern)
    u = np.flatnonzero(s.sites)
    half_gap = (s.mu[u, 0] - s.mu[u, 1]) / 2
    assert np.allclose(s.sigma2[u] / half_gap**2, 1 / delta**2)


def test_no_boundary_labels():
    kern = sym_kernel(0.5)
    t = tree_from_parents([-1, 0, 0]).with_prior([0, -1, -1])
    with pytest.raises(NoBoundaryLabels):
        init_messages(t, SideInfo(SideInfoMode.partial(0.2), t.prior, 0), min_energy_flow(t, 4.0), kern)


def test_zero_messages_tie():
    kern = sym_kernel(0.5)
    t = regular_tree(2, 2).with_prior([0] * 7)
    s = init_messages(t, noisy(t.prior), min_energy_flow(t, 4.0), kern)
    s.messages[:] = 0.0
    s = run(s)
    assert s.messages[0] == 0
    dec = classify_root(s)
    assert dec.tie and dec.label == 0


def test_chain_root_message():
    theta, depth = -0.6, 5
    kern = sym_kernel(theta)
    t = tree_from_parents([-1] + list(range(depth))).with_prior([-1] * depth + [1])
    s = init_messages(t, noisy(t.prior), min_energy_flow(t, theta**-2), kern)
    m = s.messages[-1]
    assert s.unscaled(run(s).messages[0]) == pytest.approx(theta**depth * s.unscaled(m))


def test_evolve_moments_depth_zero_and_dims():
    t = tree_from_parents([-1])
    mom = evolve_moments(t, np.eye(2), 0.5, [[1.0, -1.0]], [0.3])
    assert mom.mu.tolist() == [1.0, -1.0] and mom.sigma2 == 0.3
    with pytest.raises(DimensionMismatch):
        evolve_moments(t, np.eye(2), 0.5, [[1.0, -1.0, 0.0]], [0.3])


def test_evolve_moments_matrix_power_on_chain(rng):
    K = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]])
    for theta, KK in ((1.0, np.eye(3)), (0.55, K)):
        depth = 6
        t = tree_from_parents([-1] + list(range(depth)))
        mu0 = np.zeros((t.size, 3))
        mu0[-1] = rng.normal(size=3)
        mom = evolve_moments(t, KK, theta, mu0, np.zeros(t.size))
        assert np.allclose(mom.mu, np.linalg.matrix_power(theta * KK, depth) @ mu0[-1], atol=1e-12)


@pytest.mark.parametrize("b,theta,depth,delta", [(3, 0.7, 4, 0.4), (2, 0.8, 6, 0.25), (5, 0.5, 3, 0.9)])
def test_regular_tree_variance_formula(b, theta, depth, delta):
    kern = sym_kernel(theta, b=b)
    t = regular_tree(b, depth).with_prior(np.zeros(sum(b**d for d in range(depth + 1)), dtype=int))
    flow = min_energy_flow(t, theta**-2)
    s = init_messages(t, noisy(t.prior, delta), flow, kern)
    mom = evolve_moments(t, kern.K, theta, s.mu, s.sigma2, s.sites, check=(flow, delta, np.array([1.0, -1.0])))
    assert mom.violations == 0
    ratio = mom.sigma2 / ((mom.mu[0] - mom.mu[1]) / 2) ** 2
    E = regular_tree_energy(b, theta**2, depth)
    E1 = regular_tree_energy(b, theta**2, depth - 1)
    assert ratio == pytest.approx(E + (E - E1) / delta**2, rel=1e-10)


def test_eigenvector_closed_form_on_random_trees(rng):
    K = np.array([[0.6, 0.3, 0.1], [0.3, 0.5, 0.2], [0.1, 0.2, 0.7]])
    kern = kernel_from_mean(3 * K)
    for _ in range(20):
        t = random_tree(int(rng.integers(3, 60)), rng, boundary="cap")
        if not t.boundary.any():
            continue
        t = t.with_prior(rng.integers(0, 3, t.size))
        flow = min_energy_flow(t, kern.theta**-2)
        s = init_messages(t, noisy(t.prior, 0.4), flow, kern)
        mom = evolve_moments(t, kern.K, kern.theta, s.mu, s.sigma2, s.sites, check=(flow, 0.4, kern.w))
        assert mom.violations == 0


def test_decide_rules():
    assert decide(0.9, [1.0, 0.0, -1.0], [1, 1, 1]).label == 0
    assert decide(-0.2, [1.0, -0.1, -1.0], [1, 1, 1]).label == 1
    dec = decide(0.0, [1.0, -1.0], [400, 600])
    assert dec.tie and dec.label == 1
    dec = decide(0.0, [1.0, -1.0], [600, 400])
    assert dec.tie and dec.label == 0
    assert decide(0.3, [1.0, -1.0], [1, 1]).margin == pytest.approx(0.6)


def test_symmetric_midpoint_agrees_with_sign(rng):
    msgs = rng.normal(size=10_000)
    a = rng.uniform(0.01, 3, size=10_000)
    for m, c in zip(msgs, a):
        assert decide(m, [c, -c], [1, 1]).label == (0 if m > 0 else 1)


def _random_instance(rng, k=2):
    theta = float(rng.uniform(0.3, 0.9))
    kern = sym_kernel(theta, b=3.0, k=k)
    t = random_tree(int(rng.integers(3, 50)), rng, boundary="cap")
    prior = rng.integers(0, k, t.size)
    return kern, t.with_prior(prior), noisy(prior, float(rng.uniform(0.05, 0.95)))


def test_scale_invariance_random(rng):
    for _ in range(200):
        kern, t, si = _random_instance(rng, k=int(rng.integers(2, 4)))
        if not t.boundary.any():
            continue
        flow = min_energy_flow(t, kern.theta**-2)
        base = init_messages(t, si, flow, kern)
        big = init_messages(t, si, flow, kern)
        big.messages *= 1e3
        big.mu *= 1e3
        big.sigma2 *= 1e6
        for _ in range(t.depth_cap):
            base, big = propagate(base), propagate(big)
        assert classify_root(base).label == classify_root(big).label


def test_regular_tree_weighted_majority(rng):
    kern = sym_kernel(0.6, b=3.0)
    t = regular_tree(3, 3)
    for _ in range(200):
        prior = rng.integers(0, 2, t.size)
        ti = t.with_prior(prior)
        flow = min_energy_flow(ti, kern.theta**-2)
        s = init_messages(ti, noisy(prior), flow, kern)
        u = np.flatnonzero(s.sites)
        assert np.allclose(s.unscaled(s.messages[u]), 3.0**-3 * 0.6**-6 * np.where(prior[u] == 0, 1, -1))
        votes = np.sum(np.where(prior[u] == 0, 1, -1))
        dec, _ = run_tree(ti, noisy(prior), kern, WmpOptions(depth=3))
        assert dec.label == (0 if votes > 0 else 1)


def test_two_community_weights_equivalence(rng):
    w = np.array([1.0, -1.0]) / math.sqrt(2)
    for _ in range(1000):
        kern, t, si = _random_instance(rng)
        a = run_tree(t, si, kern, WmpOptions(depth=t.depth_cap))
        b = run_tree(t, si, kern, WmpOptions(depth=t.depth_cap, weights=tuple(w)))
        assert (a is None) == (b is None)
        if a is not None:
            assert a[0].label == b[0].label


@pytest.mark.parametrize("k", [2, 3])
def test_moment_recursion_matches_sampling(k):
    kern = sym_kernel(0.7, b=3.0, k=k)
    t = sample_gw_tree(kern.M, 0, 4, 21)
    res = fixed_shape_experiment(t, kern, 0.5, 10_000, 3)
    assert res.violations == 0
    assert np.all(np.abs(res.mean - res.mu) <= 4 * res.se)
    assert np.all(res.error <= res.bound + 3 * res.error_se)


def test_revealed_cutset():
    t = tree_from_parents([-1, 0, 0, 1, 1, 2, 5])
    prior = np.array([0, 1, -1, 0, 1, -1, 0])
    # tree order: 0 | 1 2 | 3 4 5 | 6
    cut = revealed_cutset(t, prior[t.node_ids])
    assert t.node_ids[cut].tolist() == [1, 6]


def test_graph_with_no_edges_is_uninformed():
    g = sample_graph(SbmParams(200, 2, [120, 80], np.zeros((2, 2))), 0)
    si = make_side_info(g.truth, SideInfoMode.noisy(0.3), 2, 1)
    kern = build_kernel(SbmParams(200, 2, [120, 80], [[0.1, 0.02], [0.02, 0.1]]))
    res = wmp_classify_graph(g, si, kern, 2)
    assert not res.informed.any()
    assert np.array_equal(res.pred, si.prior)
    assert res.stats.overall == pytest.approx((si.prior != g.truth).mean())
    assert res.strict_stats.overall == 1.0


def test_partial_mode_fallbacks_and_exclusion():
    g = sample_graph(SbmParams(300, 2, [200, 100], np.zeros((2, 2))), 0)
    si = make_side_info(g.truth, SideInfoMode.partial(0.3), 2, 1)
    kern = build_kernel(SbmParams(300, 2, [200, 100], [[0.1, 0.02], [0.02, 0.1]]))
    res = wmp_classify_graph(g, si, kern, 2, exclude_revealed=True)
    assert np.array_equal(res.pred[si.revealed], si.prior[si.revealed])
    assert np.all(res.pred[~si.revealed] == 0)  # larger community
    assert res.stats.n_evaluated == int((~si.revealed).sum())


def test_classify_graph_workers_and_treatments():
    params = SbmParams.vanilla(2000, 12.0, 2.0)
    g = sample_graph(params, 3)
    kern = build_kernel(params)
    si = make_side_info(g.truth, SideInfoMode.partial(0.2), 2, 4)
    one = wmp_classify_graph(g, si, kern, 2, chunk=500)
    two = wmp_classify_graph(g, si, kern, 2, chunk=500, workers=2)
    assert np.array_equal(one.pred, two.pred)
    rev = wmp_classify_graph(g, si, kern, 2, all_revealed=True)
    amp = wmp_classify_graph(g, si, kern, 2, uniform_flow=True)
    for r in (one, rev, amp):
        assert r.stats.overall < 0.25
    assert rev.stats.uninformed_rate <= one.stats.uninformed_rate


def test_below_threshold_is_random_guessing():
    n = 100_000
    params = SbmParams.vanilla(n, 5.5, 4.5)
    g = sample_graph(params, 5)
    kern = build_kernel(params)
    assert kern.snr == pytest.approx(0.05)
    si = make_side_info(g.truth, SideInfoMode.noisy(0.1), 2, 6)
    roots = np.random.default_rng(0).choice(n, 1000, replace=False)
    res = wmp_classify_graph(g, si, kern, 6, roots=roots)
    err = (res.pred[roots] != g.truth[roots]).mean()
    assert abs(err - 0.5) <= 0.05
