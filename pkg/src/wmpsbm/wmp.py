"""Weighted message passing on local trees.

Boundary messages are weighted by a unit flow (minimum-energy by default)
and, for three or more communities, by the second eigenvector of the
kernel.  Messages then travel to the root through the linear update
``M(u) = theta * sum_children M(v)`` while the conditional-mean vectors
``mu`` and the variance proxy ``sigma2`` follow the matching recursions.
The root is assigned the community whose mean is closest to its message.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .errors import DimensionMismatch, EmptyBoundary, NoBoundaryLabels, NotSymmetric
from .flow import FlowAssignment, min_energy_flow, uniform_flow_assignment
from .metrics import ErrStats, misclassification_stats
from .model import BroadcastKernel
from .sbm import Graph, SideInfo
from .tree import LocalTree, extract_tree

TIE_RTOL = 1e-9
CHECK_TOL = 1e-8
LOG_INIT_LIMIT = 600.0


@dataclass
class MessageState:
    tree: LocalTree
    theta: float
    K: np.ndarray
    sites: np.ndarray  # nodes whose messages were initialised (kept fixed)
    messages: np.ndarray
    mu: np.ndarray  # (n, k) conditional means
    sigma2: np.ndarray
    weight: np.ndarray  # community tie-break weights
    t: int = 0
    log_scale: float = 0.0  # log of the total factor divided out so far
    scales: list = field(default_factory=list)

    @property
    def root_message(self) -> float:
        return float(self.messages[0])

    def unscaled(self, values):
        return np.asarray(values) * math.exp(self.log_scale)


class RootDecision(NamedTuple):
    label: int
    margin: float
    tie: bool


class Moments(NamedTuple):
    mu: np.ndarray
    sigma2: float
    violations: Optional[int] = None


def label_weights(kernel: BroadcastKernel, weights=None) -> np.ndarray:
    """Per-community weights used to initialise messages.

    Two communities use the sign convention ``[+1, -1]``; more need the
    kernel's second eigenvector (available only for symmetric kernels).
    """
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (kernel.k,):
            raise DimensionMismatch(f"weights need length {kernel.k}")
        return w
    if kernel.k == 2:
        return np.array([1.0, -1.0])
    if kernel.w is None:
        raise NotSymmetric("eigenvector weights need a symmetric kernel; pass weights explicitly")
    return np.asarray(kernel.w, dtype=float)


def _gap(mu):
    return mu.max(axis=-1) - mu.min(axis=-1)


def revealed_cutset(tree: LocalTree, prior) -> np.ndarray:
    """Revealed non-root nodes with no revealed proper ancestor (below the root)."""
    prior = np.asarray(prior)
    rev = prior >= 0
    rev[0] = False
    blocked = rev.copy()
    for lo, hi in tree.levels()[1:]:
        par = tree.parent[lo:hi]
        blocked[lo:hi] |= blocked[par]
    above = np.zeros(tree.size, dtype=bool)
    above[1:] = blocked[tree.parent[1:]]
    return rev & ~above


def _tree_prior(tree, side_info):
    if tree.prior is not None:
        return np.asarray(tree.prior)
    return np.asarray(side_info.prior)[tree.node_ids]


def init_messages(tree: LocalTree, side_info: SideInfo, flow: FlowAssignment, kernel: BroadcastKernel,
                  theta=None, weights=None, all_revealed: bool = False) -> MessageState:
    """Initialise boundary messages ``theta^(-2|u|) i(u) w[prior(u)]`` and their moments.

    With ``all_revealed`` the flow is expected to have been computed on the
    revealed cutset (see :func:`revealed_cutset`); those labels are exact,
    so their means carry no ``delta`` factor and their variance is zero.
    """
    theta = kernel.theta if theta is None else theta
    w = label_weights(kernel, weights)
    k = len(w)
    prior = _tree_prior(tree, side_info)
    sites = np.asarray(flow.boundary, dtype=bool) & (flow.flow > 0)
    labelled = sites & (prior >= 0)
    if not labelled.any():
        raise NoBoundaryLabels("no boundary node carries a prior label")
    n = tree.size
    depth = tree.depth
    # c(u) = theta^(-2|u|) i(u), kept in log form until the common scale is known
    log_c = np.full(n, -np.inf)
    log_c[sites] = -2 * depth[sites] * math.log(abs(theta)) + np.log(flow.flow[sites])
    shift = max(0.0, float(log_c[sites].max()) - LOG_INIT_LIMIT)
    c = np.exp(log_c - shift)
    spread = float(w.max() - w.min())
    messages = np.zeros(n)
    messages[labelled] = c[labelled] * w[prior[labelled]]
    mu = np.zeros((n, k))
    sigma2 = np.zeros(n)
    if all_revealed:
        mu[sites] = c[sites, None] * w[None, :]
    else:
        mu[sites] = side_info.mode.delta * c[sites, None] * w[None, :]
        # Hoeffding range of w[prior]; for two labels this is the usual c^2
        factor = 0.25 if k == 2 else 1.0
        sigma2[sites] = factor * (c[sites] * spread) ** 2
    return MessageState(tree, float(theta), np.asarray(kernel.K, dtype=float), sites, messages, mu, sigma2,
                        np.asarray(kernel.weight, dtype=float), log_scale=shift)


def _layer_sums(tree, lo, hi, values, n_parents_lo, n_parents_hi):
    par = tree.parent[lo:hi] - n_parents_lo
    size = n_parents_hi - n_parents_lo
    if values.ndim == 1:
        return np.bincount(par, weights=values, minlength=size)
    return np.stack([np.bincount(par, weights=values[:, j], minlength=size) for j in range(values.shape[1])],
                    axis=1)


def propagate(state: MessageState, theta=None, rescale: bool = True) -> MessageState:
    """Advance messages and moments by one layer towards the root."""
    tree = state.tree
    theta = state.theta if theta is None else theta
    d = tree.depth_cap - (state.t + 1)
    levels = tree.levels()
    st = replace(state, messages=state.messages.copy(), mu=state.mu.copy(), sigma2=state.sigma2.copy(),
                 t=state.t + 1, scales=list(state.scales))
    if 0 <= d and d + 1 < len(levels):
        plo, phi = levels[d]
        clo, chi = levels[d + 1]
        if chi > clo:
            m = _layer_sums(tree, clo, chi, st.messages[clo:chi], plo, phi)
            mu = _layer_sums(tree, clo, chi, st.mu[clo:chi], plo, phi)
            cm = st.mu[clo:chi]
            s2 = _layer_sums(tree, clo, chi, st.sigma2[clo:chi] + (_gap(cm) / 2) ** 2, plo, phi)
            keep = st.sites[plo:phi]
            st.messages[plo:phi] = np.where(keep, st.messages[plo:phi], theta * m)
            st.mu[plo:phi] = np.where(keep[:, None], st.mu[plo:phi], theta * (mu @ st.K.T))
            st.sigma2[plo:phi] = np.where(keep, st.sigma2[plo:phi], theta**2 * s2)
    if rescale:
        s = max(1.0, float(np.abs(st.messages).max()))
        if s > 1.0:
            st.messages /= s
            st.mu /= s
            st.sigma2 /= s * s
            st.log_scale += math.log(s)
        st.scales.append(s)
    return st


def evolve_moments(tree: LocalTree, K, theta: float, mu0, sigma2_0, sites=None, check=None) -> Moments:
    """Run the mean/variance recursions to the root without rescaling.

    ``check=(flow, delta, w)`` additionally verifies the eigenvector closed
    form ``mu(v) = delta * theta^(-2|v|) * i(v) * w`` on every node carrying
    flow and reports the number of violations.
    """
    K = np.asarray(K, dtype=float)
    mu = np.array(mu0, dtype=float)
    s2 = np.array(sigma2_0, dtype=float)
    if mu.ndim != 2 or mu.shape[0] != tree.size or mu.shape[1] != K.shape[0] or s2.shape != (tree.size,):
        raise DimensionMismatch("mu0 must be (tree.size, k) and sigma2_0 (tree.size,)")
    sites = tree.boundary if sites is None else np.asarray(sites, dtype=bool)
    levels = tree.levels()
    for d in range(min(tree.depth_cap, len(levels) - 1) - 1, -1, -1):
        plo, phi = levels[d]
        clo, chi = levels[d + 1]
        if chi == clo:
            continue
        cm = mu[clo:chi]
        msum = _layer_sums(tree, clo, chi, cm, plo, phi)
        ssum = _layer_sums(tree, clo, chi, s2[clo:chi] + (_gap(cm) / 2) ** 2, plo, phi)
        keep = sites[plo:phi]
        mu[plo:phi] = np.where(keep[:, None], mu[plo:phi], theta * (msum @ K.T))
        s2[plo:phi] = np.where(keep, s2[plo:phi], theta**2 * ssum)
    violations = None
    if check is not None:
        flow, delta, w = check
        on = flow.flow > 0
        on[0] = True
        expect = delta * (theta ** (-2.0 * tree.depth))[:, None] * flow.flow[:, None] * np.asarray(w)[None, :]
        err = np.abs(mu - expect)[on].max(axis=1)
        scale = np.abs(expect[on]).max(axis=1) + 1.0
        violations = int((err > CHECK_TOL * scale).sum())
    return Moments(mu[0].copy(), float(s2[0]), violations)


def decide(message: float, centers, weight, rtol: float = TIE_RTOL) -> RootDecision:
    """Nearest-center rule with ties broken towards larger communities, then lower index."""
    centers = np.asarray(centers, dtype=float)
    dist = np.abs(message - centers)
    scale = max(abs(message), float(np.abs(centers).max()), 1e-300)
    best = dist.min()
    tied = np.flatnonzero(dist <= best + rtol * scale)
    order = np.lexsort((np.arange(len(centers)), -np.asarray(weight, dtype=float)))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    label = int(tied[np.argmin(rank[tied])])
    srt = np.sort(dist)
    margin = float(srt[1] - srt[0]) if len(srt) > 1 else 0.0
    return RootDecision(label, margin, len(tied) > 1)


def classify_root(state: MessageState) -> RootDecision:
    return decide(state.messages[0], state.mu[0], state.weight)


# -- whole-graph driver -----------------------------------------------------------

@dataclass(frozen=True)
class WmpOptions:
    depth: int
    weights: Optional[tuple] = None
    all_revealed: bool = False
    uniform_flow: bool = False  # equal share per boundary node (the "AMP" variant)
    boundary: str = "cap"  # or "all-leaves"
    exclude_revealed: bool = False


@dataclass
class ClassificationResult:
    pred: np.ndarray
    margin: np.ndarray
    tie: np.ndarray
    informed: np.ndarray
    evaluated: np.ndarray
    sign_discrepancies: int = 0
    stats: Optional[ErrStats] = None
    strict_stats: Optional[ErrStats] = None  # uninformed nodes counted as errors


def run_tree(tree: LocalTree, side_info: SideInfo, kernel: BroadcastKernel, opts: WmpOptions):
    """Full pipeline on one local tree; returns ``(decision, sign_label)`` or None if uninformed."""
    theta = kernel.theta
    if theta == 0 or not np.isfinite(theta):
        return None
    prior = _tree_prior(tree, side_info)
    if opts.all_revealed:
        bnd = revealed_cutset(tree, prior)
    else:
        bnd = tree.boundary
    if not (bnd & (prior >= 0)).any():
        return None
    r = theta ** -2
    try:
        flow = uniform_flow_assignment(tree, r, bnd) if opts.uniform_flow else min_energy_flow(tree, r, bnd)
        state = init_messages(tree, side_info, flow, kernel, weights=opts.weights,
                              all_revealed=opts.all_revealed)
    except (EmptyBoundary, NoBoundaryLabels):
        return None
    for _ in range(tree.depth_cap):
        state = propagate(state)
    dec = classify_root(state)
    sign_label = None
    if kernel.k == 2:
        m = state.messages[0]
        sign_label = 0 if m > 0 else 1 if m < 0 else dec.label
    return dec, sign_label


def _classify_chunk(args):
    graph, prior, side_info, kernel, opts, roots = args
    out = []
    for o in roots:
        tree = extract_tree(graph, int(o), opts.depth, prior=prior, boundary=opts.boundary)
        out.append(run_tree(tree, side_info, kernel, opts))
    return out


def wmp_classify_graph(graph: Graph, side_info: SideInfo, kernel: BroadcastKernel, depth: int,
                       options: Optional[WmpOptions] = None, roots=None, workers: int = 1,
                       chunk: int = 2000, **kw) -> ClassificationResult:
    """Classify every node (or ``roots``) of ``graph`` from its depth-``depth`` neighbourhood.

    Nodes whose neighbourhood holds no usable label fall back to their own
    prior, else to the largest community, and are flagged as uninformed.
    """
    opts = options or WmpOptions(depth=depth, **kw)
    if opts.depth != depth:
        opts = replace(opts, depth=depth)
    if opts.weights is not None:
        opts = replace(opts, weights=tuple(opts.weights))
    n = graph.n
    roots = np.arange(n) if roots is None else np.asarray(roots, dtype=np.int64)
    prior = np.asarray(side_info.prior)
    jobs = [(graph, prior, side_info, kernel, opts, roots[i:i + chunk]) for i in range(0, len(roots), chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = [r for part in ex.map(_classify_chunk, jobs) for r in part]
    else:
        results = [r for job in jobs for r in _classify_chunk(job)]

    default = int(kernel.priority()[0])
    pred = np.full(n, -1, dtype=np.int64)
    margin = np.zeros(n)
    tie = np.zeros(n, dtype=bool)
    informed = np.zeros(n, dtype=bool)
    discrepancies = 0
    for o, res in zip(roots, results):
        if res is None:
            pred[o] = prior[o] if prior[o] >= 0 else default
            continue
        dec, sign_label = res
        pred[o], margin[o], tie[o], informed[o] = dec.label, dec.margin, dec.tie, True
        if sign_label is not None and sign_label != dec.label:
            discrepancies += 1
    evaluated = np.zeros(n, dtype=bool)
    evaluated[roots] = True
    if opts.exclude_revealed and side_info.mode.kind == "partial":
        evaluated &= prior < 0
    result = ClassificationResult(pred, margin, tie, informed, evaluated, discrepancies)
    if graph.truth is not None and evaluated.any():
        equiv = kernel.equiv_sets
        result.stats = misclassification_stats(pred, graph.truth, equiv, evaluated, kernel.k, ~informed)
        wrong_pred = np.where(informed, pred, -2)
        result.strict_stats = misclassification_stats(wrong_pred, graph.truth, equiv, evaluated, kernel.k,
                                                     ~informed)
    return result
