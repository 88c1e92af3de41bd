"""Minimum-energy unit flows on rooted trees (Thomson's principle).

The edge into a node at depth ``d`` has resistance ``r**d``.  For a node
``v`` we track its *relative* subtree resistance ``rho(v) = R(v) / r**|v|``,
which obeys ``rho = 1`` on the boundary and
``rho(v) = 1 + r / sum(1 / rho(c))`` above it.  This keeps the numbers
independent of absolute depth; when ``depth * |log r|`` is large the same
recursion is run on ``log rho``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DivergentEnergy, EmptyBoundary
from .tree import LocalTree

LOG_SPACE_THRESHOLD = 600.0


@dataclass(frozen=True)
class FlowAssignment:
    r: float
    flow: np.ndarray
    energy: float
    effective_resistance: float
    support: np.ndarray  # nodes carrying flow
    boundary: np.ndarray  # the sinks the flow was computed for


def _relative_resistance(tree: LocalTree, r: float, boundary=None):
    """Return ``(log_rho, support)``; ``log_rho`` is -inf-free only on the support."""
    boundary = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    n = tree.size
    support = boundary.copy()
    support[0] = False
    log_rho = np.full(n, np.inf)
    log_rho[support] = 0.0
    log_r = math.log(r)
    use_log = tree.depth_cap * abs(log_r) > LOG_SPACE_THRESHOLD
    rho = np.where(support, 1.0, np.inf)
    levels = tree.levels()
    for lo, hi in reversed(levels[1:]):
        par = tree.parent[lo:hi]
        live = support[lo:hi]
        if not live.any():
            continue
        idx = par[live]
        if use_log:
            vals = -log_rho[lo:hi][live]
            # group logsumexp over contiguous children of each parent
            acc = np.full(n, -np.inf)
            order_break = np.flatnonzero(np.diff(idx)) + 1
            starts = np.concatenate([[0], order_break])
            groups = np.split(vals, order_break)
            acc[idx[starts]] = [logsumexp(g) for g in groups]
            upd = idx[starts]
            upd = upd[~boundary[upd]]
            log_rho[upd] = np.logaddexp(0.0, log_r - acc[upd])
        else:
            inv = np.bincount(idx, weights=1.0 / rho[lo:hi][live], minlength=n)
            upd = np.unique(idx)
            upd = upd[~boundary[upd]]
            rho[upd] = 1.0 + r / inv[upd]
            log_rho[upd] = np.log(rho[upd])
        support[upd] = True
    if not use_log:
        log_rho = np.where(support, np.log(np.where(support, rho, 1.0)), np.inf)
    return log_rho, support


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _check_nonempty(tree, support):
    kids = support & (tree.depth == 1)
    if not kids.any():
        raise EmptyBoundary("no boundary node is reachable from the root")


def _root_log_resistance(tree, log_rho, support, r):
    kids = np.flatnonzero(support & (tree.parent == 0))
    return math.log(r) - logsumexp(-log_rho[kids])


def effective_resistance(tree: LocalTree, r: float, boundary=None) -> float:
    """Effective resistance between the root and the boundary at level ``r``."""
    if r <= 0:
        raise ValueError("resistance level must be positive")
    log_rho, support = _relative_resistance(tree, r, boundary)
    _check_nonempty(tree, support)
    return _exp(_root_log_resistance(tree, log_rho, support, r))


def _flow_from_weights(tree: LocalTree, weight, support, boundary):
    """Top-down split: each supported child gets a share proportional to ``weight``."""
    n = tree.size
    flow = np.zeros(n)
    flow[0] = 1.0
    passes = support.copy()
    passes[0] = True
    passes &= ~boundary  # flow stops at boundary nodes
    for lo, hi in tree.levels()[1:]:
        par = tree.parent[lo:hi]
        ok = support[lo:hi] & passes[par]
        wv = np.where(ok, weight[lo:hi], 0.0)
        tot = np.bincount(par - par.min(), weights=wv) if hi > lo else wv
        denom = tot[par - par.min()]
        share = np.divide(wv, denom, out=np.zeros_like(wv), where=denom > 0)
        flow[lo:hi] = flow[par] * share
    return flow


def _energy(tree, flow, r):
    nz = np.flatnonzero(flow[1:] > 0) + 1
    if nz.size == 0:
        return 0.0
    logs = 2 * np.log(flow[nz]) + tree.depth[nz] * math.log(r)
    return _exp(float(logsumexp(logs)))


def flow_energy(tree: LocalTree, flow, r: float) -> float:
    """Energy ``sum_v i(v)^2 r^|v|`` over non-root nodes."""
    return _energy(tree, np.asarray(flow, dtype=float), r)


def min_energy_flow(tree: LocalTree, r: float, boundary=None) -> FlowAssignment:
    if r <= 0:
        raise ValueError("resistance level must be positive")
    bnd = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    log_rho, support = _relative_resistance(tree, r, bnd)
    _check_nonempty(tree, support)
    # shares proportional to 1/rho; shift by the per-level minimum for range
    weight = np.zeros(tree.size)
    for lo, hi in tree.levels()[1:]:
        seg = log_rho[lo:hi]
        fin = np.isfinite(seg)
        if fin.any():
            weight[lo:hi][fin] = np.exp(seg[fin].min() - seg[fin])
    flow = _flow_from_weights(tree, weight, support, bnd)
    reff = _exp(_root_log_resistance(tree, log_rho, support, r))
    return FlowAssignment(r, flow, _energy(tree, flow, r), reff, flow > 0, bnd)


def uniform_leaf_flow(tree: LocalTree, boundary=None) -> np.ndarray:
    """Unit flow giving every boundary node the same share."""
    bnd = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    _, support = _relative_resistance(tree, 1.0, bnd)
    _check_nonempty(tree, support)
    count = np.where(bnd, 1.0, 0.0)
    count[0] = 0.0
    for lo, hi in reversed(tree.levels()[1:]):
        par = tree.parent[lo:hi]
        add = np.where(bnd[par], 0.0, count[lo:hi])
        np.add.at(count, par, add)
    return _flow_from_weights(tree, count, support, bnd)


def uniform_flow_assignment(tree: LocalTree, r: float, boundary=None) -> FlowAssignment:
    flow = uniform_leaf_flow(tree, boundary)
    bnd = tree.boundary if boundary is None else np.asarray(boundary, dtype=bool)
    return FlowAssignment(r, flow, _energy(tree, flow, r), effective_resistance(tree, r, bnd), flow > 0, bnd)


def regular_tree_energy(b: int, theta2: float, depth) -> float:
    """Minimum energy of the ``b``-ary tree at conductance level ``theta2``.

    ``depth`` may be ``math.inf`` for the infinite tree.
    """
    if b < 1 or theta2 <= 0:
        raise ValueError("need b >= 1 and theta2 > 0")
    q = 1.0 / (b * theta2)
    if math.isinf(depth):
        if b * theta2 <= 1:
            raise DivergentEnergy(f"b * theta^2 = {b * theta2:g} <= 1: energy is infinite")
        return 1.0 / (b * theta2 - 1.0)
    t = int(depth)
    if q == 1.0:
        return float(t)
    return q * (1 - q**t) / (1 - q)
