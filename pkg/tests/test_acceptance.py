"""Acceptance criteria, one test each.

Every test appends a ``criterion N: PASS|FAIL ...`` line that the terminal
summary prints in an "acceptance criteria" section.
"""
import contextlib
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from wmpsbm.baselines import bp_classify_root, exact_posterior_oracle
from wmpsbm.errors import DatasetMissing
from wmpsbm.flow import effective_resistance, min_energy_flow, regular_tree_energy
from wmpsbm.harness import (ExperimentConfig, fixed_shape_experiment, gw_engine, load_polblogs, median_table,
                            polblogs_experiment)
from wmpsbm.metrics import within_set_error
from wmpsbm.model import SbmParams, build_kernel, kernel_from_mean
from wmpsbm.oracles import (conservation_error, kkt_min_energy_flow, perturbation_energies, random_kernel,
                            random_labelled_tree)
from wmpsbm.sbm import SideInfo, SideInfoMode, make_side_info, sample_graph
from wmpsbm.tree import random_tree, regular_tree, sample_gw_tree
from wmpsbm.wmp import classify_root, init_messages, propagate, wmp_classify_graph


@contextlib.contextmanager
def criterion(num, what):
    """Record PASS/FAIL for criterion ``num``; the body fills ``info`` with a summary."""
    info = {}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        took = time.perf_counter() - start
        detail = " ".join(f"{k}={v}" for k, v in info.items())
        ACCEPTANCE_LINES.append(f"criterion {num}: {'PASS' if ok else 'FAIL'} {what} ({took:.1f}s) {detail}")


def sym(theta, k=2):
    return np.full((k, k), (1 - theta) / k) + theta * np.eye(k)


def test_criterion_1_kernel_closed_forms():
    rng = np.random.default_rng(1)
    with criterion(1, "vanilla SNR closed form") as info:
        start = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            n = 2 * int(rng.integers(50, 50_000))
            a, b = sorted(rng.uniform(0.1, 40.0, 2), reverse=True)
            kern = build_kernel(SbmParams.vanilla(n, a, b))
            worst = max(worst, abs(kern.snr - (a - b) ** 2 / (2 * (a + b))))
        took = time.perf_counter() - start
        info.update(max_abs_err=f"{worst:.2e}")
        assert worst <= 1e-9
        assert took < 5


def test_criterion_2_flow_correctness():
    rng = np.random.default_rng(2)
    with criterion(2, "minimum-energy flow") as info:
        start = time.perf_counter()
        worst_cons = worst_eq = worst_kkt = 0.0
        beaten = 0
        for _ in range(500):
            t = random_tree(int(rng.integers(2, 201)), rng)
            r = 1.0 / float(rng.uniform(0.25, 0.95))
            best, energies = perturbation_energies(t, r, 10_000, rng)
            scale = max(1.0, best.energy)
            worst_cons = max(worst_cons, conservation_error(t, best.flow))
            worst_eq = max(worst_eq, abs(best.energy - best.effective_resistance) / scale)
            worst_eq = max(worst_eq, abs(best.energy - effective_resistance(t, r)) / scale)
            worst_kkt = max(worst_kkt, abs(kkt_min_energy_flow(t, r)[1] - best.energy) / scale)
            beaten += int((energies < best.energy - 1e-10 * scale).sum())
        reg = 0.0
        for b, theta2, depth in [(2, 0.8, 6), (3, 0.5, 5), (4, 0.3, 4), (2, 0.4, 7), (5, 0.9, 3)]:
            t = regular_tree(b, depth)
            e = min_energy_flow(t, 1.0 / theta2).energy
            closed = sum((1.0 / (b * theta2)) ** d for d in range(1, depth + 1))
            reg = max(reg, abs(e - closed), abs(regular_tree_energy(b, theta2, depth) - closed))
        limit = max(abs(regular_tree_energy(b, th2, 40) - 1.0 / (b * th2 - 1.0))
                    for b, th2 in [(2, 0.9), (3, 0.7), (4, 0.49), (8, 0.3)])
        took = time.perf_counter() - start
        info.update(conservation=f"{worst_cons:.1e}", energy_vs_R=f"{worst_eq:.1e}", kkt=f"{worst_kkt:.1e}",
                    beaten=beaten, regular=f"{reg:.1e}", depth40_limit=f"{limit:.1e}")
        assert worst_cons <= 1e-10
        assert worst_eq <= 1e-10
        assert worst_kkt <= 1e-10
        assert beaten == 0
        assert reg <= 1e-10
        assert limit <= 1e-6
        assert took < 60


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(3)
    with criterion(3, "BP vs enumeration") as info:
        start = time.perf_counter()
        worst = worst_logit = 0.0
        n_logit = 0
        for i in range(500):
            k = 2 + i % 2
            t = random_labelled_tree(rng, k, max_nodes=14 if k == 2 else 10)
            if k == 2 and i % 4 == 0:
                d = rng.uniform(0.55, 0.98, 2)  # both theta_i in (0, 1) so the f recursion applies
                K = np.array([[d[0], 1 - d[0]], [1 - d[1], d[1]]])
            else:
                K = random_kernel(k, rng)
            delta = float(rng.uniform(0.05, 0.95))
            root_prior = rng.random(k) + 0.1
            si = SideInfo(SideInfoMode.noisy(delta), t.prior, 0)
            bp = bp_classify_root(t, K, si, root_prior=root_prior)
            ex = exact_posterior_oracle(t, K, delta, root_prior=root_prior)
            worst = max(worst, float(np.abs(bp.posterior - ex).max()))
            if bp.logit is not None:
                n_logit += 1
                ref = math.log(ex[0]) - math.log(ex[1])
                worst_logit = max(worst_logit, abs(bp.logit - ref) / max(1.0, abs(ref)))
        took = time.perf_counter() - start
        info.update(max_gap=f"{worst:.1e}", logit_gap=f"{worst_logit:.1e}", logit_cases=n_logit)
        assert worst <= 1e-9
        assert n_logit >= 100
        assert worst_logit <= 1e-9
        assert took < 60


def test_criterion_4_moments_and_concentration():
    with criterion(4, "moment recursion and concentration bound") as info:
        start = time.perf_counter()
        kern = kernel_from_mean(4 * sym(0.7))
        tree = sample_gw_tree(kern.M, 0, 6, 5)
        trials = 20_000
        res = fixed_shape_experiment(tree, kern, 0.5, trials, seed=4)
        z = np.abs(res.mean - res.mu) / res.se
        err = float(res.error @ res.counts / trials)
        se = math.sqrt(max(err * (1 - err), 1.0 / trials) / trials)
        took = time.perf_counter() - start
        info.update(z=np.array2string(z, precision=2), error=f"{err:.4f}", bound=f"{res.bound:.4f}",
                    violations=res.violations)
        assert (z <= 4).all()
        assert err <= res.bound + 3 * se
        assert took < 300


def test_criterion_5_phase_transition():
    with criterion(5, "GW phase transition") as info:
        start = time.perf_counter()
        trials = 10_000
        # b theta^2 = 3 with b = 12, theta = 0.5
        above = gw_engine(12 * sym(0.5), 0.5, 8, trials, seed=5, engine="pool", pool_size=100_000)
        e_wmp = above.preds["wmp"] != above.truth
        e_bp = above.preds["bp"] != above.truth
        bound = math.exp(-1.0 / (2 * (1.0 / (3 - 1)))) + 0.05
        diff = e_wmp.astype(float) - e_bp
        se_pair = diff.std(ddof=1) / math.sqrt(trials)
        # b theta^2 = 0.5 with b = 2, theta = 0.5
        below = gw_engine(2 * sym(0.5), 0.1, 10, trials, seed=6, engine="pool", pool_size=100_000)
        b_wmp = float((below.preds["wmp"] != below.truth).mean())
        b_bp = float((below.preds["bp"] != below.truth).mean())
        took = time.perf_counter() - start
        info.update(wmp=f"{e_wmp.mean():.4f}", bp=f"{e_bp.mean():.4f}", bound=f"{bound:.4f}",
                    below_wmp=f"{b_wmp:.4f}", below_bp=f"{b_bp:.4f}")
        assert e_wmp.mean() <= bound
        assert e_bp.mean() <= e_wmp.mean() + 3 * se_pair
        assert 0.45 <= b_wmp <= 0.55 and 0.45 <= b_bp <= 0.55
        assert took < 600


def test_criterion_6_set_identification():
    with criterion(6, "k=3 set identification") as info:
        start = time.perf_counter()
        K = np.array([[0.45, 0.45, 0.1], [0.45, 0.45, 0.1], [0.1, 0.1, 0.8]])
        kern = kernel_from_mean(6 * K)
        assert [tuple(s) for s in kern.equiv_sets] == [(0, 1), (2,)]
        out = gw_engine(kern.M, 0.6, 5, 5000, seed=7, engine="pool", pool_size=100_000, bp=False)
        stats = out.stats("wmp", kern.equiv_sets, k=3)
        set_err = stats.set_errors[(0, 1)]
        inner = within_set_error(out.preds["wmp"], out.truth, (0, 1))
        took = time.perf_counter() - start
        info.update(snr=f"{kern.snr:.3g}", set_error=f"{set_err:.4f}", within_01=f"{inner:.4f}")
        assert kern.snr > 1
        assert set_err <= 0.1
        assert 0.4 <= inner <= 0.6
        assert took < 600


def test_criterion_7_scale_invariance():
    rng = np.random.default_rng(8)
    with criterion(7, "scale invariance") as info:
        start = time.perf_counter()
        done = same = 0
        while done < 1000:
            k = int(rng.integers(2, 4))
            theta = float(rng.uniform(0.2, 0.9))
            kern = kernel_from_mean(float(rng.uniform(1.5, 5.0)) * sym(theta, k))
            t = random_tree(int(rng.integers(3, 60)), rng, boundary="cap")
            if not t.boundary.any():
                continue
            prior = rng.integers(0, k, t.size)
            t = t.with_prior(prior)
            si = SideInfo(SideInfoMode.noisy(float(rng.uniform(0.05, 0.95))), prior, 0)
            flow = min_energy_flow(t, kern.theta**-2)
            base = init_messages(t, si, flow, kern)
            big = init_messages(t, si, flow, kern)
            big.messages *= 1e3
            big.mu *= 1e3
            big.sigma2 *= 1e6
            for _ in range(t.depth_cap):
                base, big = propagate(base), propagate(big)
            a, b = classify_root(base), classify_root(big)
            same += int(a.label == b.label and a.tie == b.tie)
            done += 1
        took = time.perf_counter() - start
        info.update(identical=f"{same}/{done}")
        assert same == done
        assert took < 30


def test_criterion_8_polblogs():
    try:
        load_polblogs()
    except DatasetMissing as exc:
        ACCEPTANCE_LINES.append(f"criterion 8: SKIP polblogs replication (dataset missing: {exc})")
        pytest.skip(str(exc))
    with criterion(8, "polblogs replication") as info:
        start = time.perf_counter()
        cfg = ExperimentConfig("polblogs", deltas=[0.1], depths=[1, 2, 3, 4, 5], seed=0,
                               estimators=["amp_uniform_flow", "spectral"])
        table = median_table(polblogs_experiment(cfg, repetitions=50))
        got = {d: 100 * table[("amp_uniform_flow", 0.1, d)] for d in (2, 3, 4)}
        spectral = 100 * table[("spectral", 0.1, 1)]
        took = time.perf_counter() - start
        info.update(**{f"depth{d}": f"{v:.2f}%" for d, v in got.items()}, spectral=f"{spectral:.2f}%")
        for d, target in zip((2, 3, 4), (6.31, 5.22, 5.01)):
            assert abs(got[d] - target) <= 1.5
        assert abs(spectral - 6.68) <= 1.5
        assert took < 1800


def test_criterion_9_full_sbm():
    with criterion(9, "vanilla SBM n=1e5") as info:
        start = time.perf_counter()
        params = SbmParams.vanilla(100_000, 8.0, 2.0)
        kern = build_kernel(params)
        g = sample_graph(params, 9)
        si = make_side_info(g.truth, SideInfoMode.noisy(0.3), 2, 10)
        res = wmp_classify_graph(g, si, kern, 4)
        err = res.stats.overall
        # the stated numeric target exp(-1.3) + 0.05 is stricter than the formula at this model's SNR
        formula = math.exp(-1.0 / (2 * (1.0 / (kern.snr - 1)))) + 0.05
        target = min(math.exp(-1.3) + 0.05, formula)
        took = time.perf_counter() - start
        info.update(snr=f"{kern.snr:.3g}", error=f"{err:.4f}", target=f"{target:.4f}")
        assert err <= target
        assert took < 900
