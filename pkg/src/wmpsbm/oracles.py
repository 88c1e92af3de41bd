"""Independent reference computations used to cross-check the main algorithms.

Each oracle takes a different route to the same quantity: a quadratic
formula instead of an eigensolver, a dense KKT solve instead of the
series-parallel recursion, enumeration instead of sum-product.
"""
from __future__ import annotations

import math

import numpy as np

from .baselines import bp_classify_root, exact_posterior_oracle
from .flow import _relative_resistance, flow_energy, min_energy_flow
from .sbm import SideInfo, SideInfoMode
from .tree import LocalTree, random_tree


def eig2(A) -> tuple:
    """Eigenvalues of a real 2x2 matrix with a real spectrum, larger first."""
    (a, b), (c, d) = np.asarray(A, dtype=float)
    tr, det = a + d, a * d - b * c
    disc = math.sqrt(max(tr * tr / 4 - det, 0.0))
    return tr / 2 + disc, tr / 2 - disc


def flow_support(tree: LocalTree, boundary=None) -> np.ndarray:
    return _relative_resistance(tree, 1.0, boundary)[1]


def kkt_min_energy_flow(tree: LocalTree, r: float, boundary=None):
    """Minimise ``sum i(v)^2 r^|v|`` under conservation with a dense solver.

    With ``z = r^(|v|/2) i(v)`` the problem becomes the minimum-norm solution
    of a linear system, which is the KKT point and stays well conditioned.
    """
    bnd = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    sup = flow_support(tree, bnd)
    var = np.flatnonzero(sup)
    col = {int(v): j for j, v in enumerate(var)}
    rows = []
    b = []
    # root: flow into its supported children sums to one
    rows.append({col[int(c)]: 1.0 for c in var if tree.parent[c] == 0})
    b.append(1.0)
    for v in var:
        if bnd[v]:
            continue
        kids = [c for c in var if tree.parent[c] == v]
        row = {col[int(v)]: 1.0}
        for c in kids:
            row[col[int(c)]] = -1.0
        rows.append(row)
        b.append(0.0)
    A = np.zeros((len(rows), len(var)))
    for i, row in enumerate(rows):
        for j, val in row.items():
            A[i, j] = val
    s = np.power(r, tree.depth[var].astype(float) / 2)
    z = np.linalg.lstsq(A / s[None, :], np.asarray(b), rcond=None)[0]
    flow = np.zeros(tree.size)
    flow[0] = 1.0
    flow[var] = z / s
    return flow, flow_energy(tree, flow, r)


def random_unit_flows(tree: LocalTree, count: int, rng, boundary=None) -> np.ndarray:
    """``count`` random valid unit flows (random positive splits on the support)."""
    bnd = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    sup = flow_support(tree, bnd)
    flows = np.zeros((count, tree.size))
    flows[:, 0] = 1.0
    passes = sup.copy()
    passes[0] = True
    passes &= ~bnd
    for lo, hi in tree.levels()[1:]:
        par = tree.parent[lo:hi]
        ok = sup[lo:hi] & passes[par]
        w = rng.random((count, hi - lo)) * ok
        w = w ** rng.uniform(0.2, 5.0)  # vary how lopsided the splits are
        ind = np.zeros((hi - lo, tree.size))
        ind[np.arange(hi - lo), par] = 1.0
        tot = w @ ind
        denom = tot[:, par]
        share = np.divide(w, denom, out=np.zeros_like(w), where=denom > 0)
        flows[:, lo:hi] = flows[:, par] * share
    return flows


def perturbation_energies(tree: LocalTree, r: float, count: int, rng, boundary=None) -> tuple:
    """Energy of the minimum flow and of ``count`` valid flows mixed towards it."""
    best = min_energy_flow(tree, r, boundary)
    rand = random_unit_flows(tree, count, rng, boundary)
    t = rng.random((count, 1)) ** 3  # many small perturbations, some large
    mixed = (1 - t) * best.flow[None, :] + t * rand
    w = np.power(r, tree.depth[1:].astype(float))
    energies = (mixed[:, 1:] ** 2) @ w
    return best, energies


def conservation_error(tree: LocalTree, flow, boundary=None) -> float:
    """Largest violation of conservation or absorption for a unit flow."""
    bnd = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    inflow = np.bincount(tree.parent[1:], weights=flow[1:], minlength=tree.size)
    carry = (flow > 0) & ~bnd
    carry[0] = True
    err = np.abs(inflow[carry] - flow[carry]).max()
    absorbed = flow[bnd & (np.arange(tree.size) > 0)].sum()
    return float(max(err, abs(absorbed - 1.0), abs(flow[0] - 1.0)))


def random_kernel(k: int, rng, floor: float = 0.05) -> np.ndarray:
    K = rng.random((k, k)) + floor
    return K / K.sum(axis=1, keepdims=True)


def random_labelled_tree(rng, k: int, max_nodes: int = 10) -> LocalTree:
    size = int(rng.integers(2, max_nodes + 1))
    t = random_tree(size, rng, max_children=3)
    return t.with_prior(rng.integers(-1, k, size=t.size))


def bp_oracle_gap(rng, k: int, max_nodes: int = 10) -> float:
    """Largest posterior gap between sum-product and enumeration on one random instance."""
    t = random_labelled_tree(rng, k, max_nodes)
    K = random_kernel(k, rng)
    delta = float(rng.uniform(0.05, 0.95))
    root_prior = rng.random(k) + 0.1
    si = SideInfo(SideInfoMode.noisy(delta), t.prior, 0)
    bp = bp_classify_root(t, K, si, root_prior=root_prior)
    ex = exact_posterior_oracle(t, K, delta, root_prior=root_prior)
    return float(np.abs(bp.posterior - ex).max())


def run_oracle_checks(n_instances: int = 100, seed: int = 0, perturbations: int = 1000) -> tuple:
    """BP against enumeration and flow minimality; returns ``(passed, total, failures)``."""
    rng = np.random.default_rng(seed)
    passed, failures = 0, []
    for i in range(n_instances):
        k = 2 + i % 2
        gap = bp_oracle_gap(rng, k)
        if gap <= 1e-9:
            passed += 1
        else:
            failures.append(f"bp/enumeration instance {i}: gap {gap:.3g}")
    for i in range(n_instances):
        t = random_tree(int(rng.integers(2, 60)), rng)
        r = float(rng.uniform(0.5, 4.0))
        best, energies = perturbation_energies(t, r, perturbations, rng)
        ok = (energies >= best.energy - 1e-12).all()
        ok &= abs(best.energy - best.effective_resistance) <= 1e-10
        ok &= conservation_error(t, best.flow) <= 1e-10
        if ok:
            passed += 1
        else:
            failures.append(f"flow instance {i} failed")
    return passed, 2 * n_instances, failures
