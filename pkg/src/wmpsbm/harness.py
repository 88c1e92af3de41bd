"""Monte Carlo drivers: Galton-Watson sweeps, SBM runs, the political-blogs replication.

Galton-Watson experiments run on a level engine that carries, for every
node, the summaries the estimators need from its subtree:

* ``log_rho``: log relative resistance (drives minimum-energy flow shares),
* ``X``, ``mu``, ``s``: the WMP message and its moments in flow-normalised
  units, so that ``M(v) = theta^(-2|v|) i(v) X(v)`` (same for ``mu``/``s``
  with ``i(v)^2`` for ``s``),
* ``Xu``, ``muu``: the same with a uniform flow over boundary nodes,
* ``bp``: log sum-product message.

The engine runs either on exact forests or, when full trees would be too
large, on a resampled population of subtrees per type and height (the
usual population-dynamics approximation of independent GW subtrees).
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from ._rng import derive_rng
from .baselines import evidence_loglik, spectral_partition
from .errors import DatasetMissing, InvalidParams
from .metrics import ErrStats, misclassification_stats
from .model import BroadcastKernel, SbmParams, build_kernel, kernel_from_mean
from .sbm import (Graph, SideInfo, SideInfoMode, attach_labels, load_edge_list, load_gml, make_side_info,
                  restrict_to_largest_component, sample_graph)
from .tree import sample_gw_forest
from .wmp import TIE_RTOL, WmpOptions, label_weights, wmp_classify_graph

__all__ = [
    "ExperimentConfig", "ResultRow", "GwOutcome", "gw_engine", "gw_monte_carlo", "sbm_experiment",
    "polblogs_experiment", "write_results", "read_results", "estimate_kernel", "median_table",
    "misclassification_stats",
]

ESTIMATORS = ("wmp", "amp_uniform_flow", "bp", "spectral")
EXACT_NODE_BUDGET = 4_000_000
POLBLOGS_DELTAS = (0.1, 0.05, 0.025)
POLBLOGS_URL = "http://www-personal.umich.edu/~mejn/netdata/polblogs.zip"


# -- configuration and rows ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str  # gw_tree, sbm or polblogs
    deltas: Sequence[float] = (0.5,)
    depths: Sequence[int] = (4,)
    trials: int = 1000
    seed: int = 0
    mode: str = "noisy"  # side-information kind
    estimators: Sequence[str] = ("wmp", "bp")
    M: Optional[np.ndarray] = None  # GW mean matrix
    params: Optional[SbmParams] = None
    dataset: Optional[str] = None
    output: Optional[str] = None
    engine: str = "auto"  # exact, pool or auto
    pool_size: int = 50_000
    workers: int = 1
    weights: Optional[Sequence[float]] = None
    all_revealed: bool = False

    def __post_init__(self):
        if self.scenario not in ("gw_tree", "sbm", "polblogs"):
            raise InvalidParams(f"unknown scenario {self.scenario!r}")
        if not len(self.deltas) or not len(self.depths):
            raise InvalidParams("delta and depth grids must be nonempty")
        if self.trials < 1:
            raise InvalidParams("trials must be at least 1")
        bad = set(self.estimators) - set(ESTIMATORS)
        if bad:
            raise InvalidParams(f"unknown estimators {sorted(bad)}")
        if self.engine not in ("exact", "pool", "auto"):
            raise InvalidParams(f"unknown engine {self.engine!r}")
        if self.workers < 1:
            raise InvalidParams("workers must be at least 1")


@dataclass
class ResultRow:
    scenario: str
    estimator: str
    depth: int
    delta: float
    snr: float
    seed: int
    trials: int
    error: float
    worst: float
    set_errors: str  # "i-j:value" pairs joined by ';'
    uninformed: float
    wall_time: float


FIELDS = [f.name for f in fields(ResultRow)]
FLOAT_FIELDS = {"delta", "snr", "error", "worst", "uninformed", "wall_time"}
INT_FIELDS = {"depth", "seed", "trials"}


def _fmt_sets(set_errors: dict) -> str:
    return ";".join(f"{i}-{j}:{v:.6g}" for (i, j), v in sorted(set_errors.items()))


def _row(scenario, estimator, depth, delta, snr, seed, stats: ErrStats, trials, wall, uninformed=None):
    return ResultRow(scenario, estimator, int(depth), float(delta), float(snr), int(seed), int(trials),
                     stats.overall, stats.worst, _fmt_sets(stats.set_errors),
                     stats.uninformed_rate if uninformed is None else uninformed, wall)


def write_results(path, rows, json_mirror: bool = False) -> None:
    """CSV with a fixed header; floats carry 6 significant digits."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELDS)
        for r in rows:
            d = asdict(r)
            w.writerow([f"{d[k]:.6g}" if k in FLOAT_FIELDS else d[k] for k in FIELDS])
    if json_mirror:
        with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump([asdict(r) for r in read_results(path)], fh, indent=1)


def read_results(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != FIELDS:
            raise InvalidParams(f"unexpected header {rd.fieldnames}")
        out = []
        for d in rd:
            for k in FLOAT_FIELDS:
                d[k] = float(d[k])
            for k in INT_FIELDS:
                d[k] = int(d[k])
            out.append(ResultRow(**d))
    return out


def median_table(rows) -> dict:
    """Median error per ``(estimator, delta, depth)``."""
    groups = {}
    for r in rows:
        groups.setdefault((r.estimator, r.delta, r.depth), []).append(r.error)
    return {key: float(np.median(v)) for key, v in sorted(groups.items())}


# -- level engine ------------------------------------------------------------------

@dataclass
class _Ctx:
    K: np.ndarray
    logK: np.ndarray
    theta: float
    r: float
    w: np.ndarray
    delta: float
    kind: str
    s0: float  # boundary variance in flow units
    bp: bool


def _ctx(kernel: BroadcastKernel, delta, kind, weights=None, bp=True) -> _Ctx:
    w = label_weights(kernel, weights)
    k = kernel.k
    K = np.asarray(kernel.K, dtype=float)
    with np.errstate(divide="ignore"):
        logK = np.log(K)
    spread = float(w.max() - w.min())
    s0 = (0.25 if k == 2 else 1.0) * spread**2
    theta = kernel.theta
    r = theta**-2 if theta != 0 else math.inf
    return _Ctx(K, logK, theta, r, w, delta, kind, s0, bp)


def _draw_prior(labels, ctx: _Ctx, rng):
    k = ctx.K.shape[0]
    u = rng.random(labels.shape)
    if ctx.kind == "noisy":
        wrong = (labels + rng.integers(1, k, size=labels.shape)) % k
        return np.where(u < ctx.delta + (1 - ctx.delta) / k, labels, wrong)
    return np.where(u < ctx.delta, labels, -1)


def _leaves(labels, ctx: _Ctx, rng) -> dict:
    """States of boundary nodes with the given true labels."""
    return _leaf_states(_draw_prior(labels, ctx, rng), ctx)


def _leaf_states(prior, ctx: _Ctx) -> dict:
    n, k = len(prior), ctx.K.shape[0]
    has = prior >= 0
    X = np.where(has, ctx.w[np.maximum(prior, 0)], 0.0)
    mu = np.broadcast_to(ctx.delta * ctx.w, (n, k)).copy()
    st = dict(alive=np.ones(n, bool), nlab=has.astype(np.int64), log_rho=np.zeros(n), X=X, mu=mu,
              s=np.full(n, ctx.s0), cnt=np.ones(n), Xu=X.copy(), muu=mu.copy())
    if ctx.bp:
        st["bp"] = evidence_loglik(prior, k, ctx.kind, ctx.delta)
    return st


def _dead(n, k, bp) -> dict:
    st = dict(alive=np.zeros(n, bool), nlab=np.zeros(n, np.int64), log_rho=np.full(n, np.inf), X=np.zeros(n),
              mu=np.zeros((n, k)), s=np.zeros(n), cnt=np.zeros(n), Xu=np.zeros(n), muu=np.zeros((n, k)))
    if bp:
        st["bp"] = np.zeros((n, k))
    return st


def _take(st: dict, idx) -> dict:
    return {key: v[idx] for key, v in st.items()}


def _concat(parts) -> dict:
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def _wsum(par, weights, values, n):
    if values.ndim == 1:
        return np.bincount(par, weights=weights * values, minlength=n)
    return np.stack([np.bincount(par, weights=weights * values[:, j], minlength=n)
                     for j in range(values.shape[1])], axis=1)


def _combine(ch: dict, par, n: int, ctx: _Ctx) -> dict:
    """Parent states from child states; ``par`` indexes parents ``0..n-1``."""
    k = ctx.K.shape[0]
    out = _dead(n, k, ctx.bp)
    if ctx.bp and len(par):
        up = logsumexp(ctx.logK[None, :, :] + ch["bp"][:, None, :], axis=2)
        up -= up.max(axis=1, keepdims=True)
        out["bp"] = _wsum(par, np.ones(len(par)), up, n)
    a = ch["alive"]
    if not a.any():
        return out
    par, c = par[a], _take(ch, a)
    inv = np.exp(-c["log_rho"])
    tot = np.bincount(par, weights=inv, minlength=n)
    alive = tot > 0
    share = inv / tot[par]
    th = ctx.theta
    gap = c["mu"].max(axis=1) - c["mu"].min(axis=1)
    out["alive"] = alive
    out["nlab"] = np.bincount(par, weights=c["nlab"], minlength=n).astype(np.int64)
    out["log_rho"][alive] = np.logaddexp(0.0, math.log(ctx.r) - np.log(tot[alive]))
    out["X"] = _wsum(par, share, c["X"], n) / th
    out["mu"] = _wsum(par, share, c["mu"] @ ctx.K.T, n) / th
    out["s"] = _wsum(par, share**2, c["s"] + (gap / 2) ** 2, n) / th**2
    cnt = np.bincount(par, weights=c["cnt"], minlength=n)
    out["cnt"] = cnt
    ushare = c["cnt"] / cnt[par]
    out["Xu"] = _wsum(par, ushare, c["Xu"], n) / th
    out["muu"] = _wsum(par, ushare, c["muu"] @ ctx.K.T, n) / th
    return out


@dataclass
class GwOutcome:
    """Per-trial root results of a GW experiment."""

    truth: np.ndarray
    root_prior: np.ndarray
    informed: np.ndarray
    preds: dict  # estimator -> labels
    ties: dict
    X: np.ndarray  # root WMP message (flow units)
    mu: np.ndarray  # (trials, k) centers
    s: np.ndarray
    posterior: Optional[np.ndarray] = None
    engine: str = "exact"

    def stats(self, estimator: str, equiv_sets=None, k=None) -> ErrStats:
        return misclassification_stats(self.preds[estimator], self.truth, equiv_sets, k=k,
                                       uninformed=~self.informed)


def _rank(weight):
    order = np.lexsort((np.arange(len(weight)), -np.asarray(weight, dtype=float)))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank


def decide_batch(X, centers, weight, rtol: float = TIE_RTOL):
    """Vectorised nearest-center rule with the same tie-break as :func:`wmp.decide`."""
    X = np.asarray(X, dtype=float)
    centers = np.asarray(centers, dtype=float)
    dist = np.abs(X[:, None] - centers)
    scale = np.maximum(np.abs(X), np.abs(centers).max(axis=1))
    scale = np.maximum(scale, 1e-300)
    tied = dist <= dist.min(axis=1, keepdims=True) + rtol * scale[:, None]
    rank = _rank(weight)
    key = np.where(tied, rank[None, :], len(rank) + 1)
    return key.argmin(axis=1), tied.sum(axis=1) > 1


def _finish_roots(root: dict, labels, ctx: _Ctx, weight, rng, engine) -> GwOutcome:
    k = ctx.K.shape[0]
    T = len(labels)
    prior = _draw_prior(labels, ctx, rng)
    informed = root["alive"] & (root["nlab"] > 0)
    rank = _rank(weight)
    default = int(np.argmin(rank))
    fallback = np.where(prior >= 0, prior, default)
    preds, ties = {}, {}
    for name, X, mu in (("wmp", root["X"], root["mu"]), ("amp_uniform_flow", root["Xu"], root["muu"])):
        lab, tie = decide_batch(X, mu, weight)
        preds[name] = np.where(informed, lab, fallback)
        ties[name] = tie & informed
    post = None
    if ctx.bp:
        logp = root["bp"] + np.log(np.maximum(np.asarray(weight, float), 1e-300) / np.sum(weight))[None, :]
        post = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        best = post.max(axis=1, keepdims=True)
        tied = post >= best * (1 - 1e-12)
        key = np.where(tied, rank[None, :], k + 1)
        preds["bp"] = key.argmin(axis=1)
        ties["bp"] = tied.sum(axis=1) > 1
    return GwOutcome(np.asarray(labels), prior, informed, preds, ties, root["X"], root["mu"], root["s"], post,
                     engine)


def _exact_chunk(args):
    M, kernel, delta, kind, depth, labels, weights, bp, seed, chunk_id = args
    rng = derive_rng(seed, 0x6E, chunk_id)
    ctx = _ctx(kernel, delta, kind, weights, bp)
    par, dep, lab, _ = sample_gw_forest(M, labels, depth, rng)
    starts = np.searchsorted(dep, np.arange(depth + 2))
    lo, hi = starts[depth], starts[depth + 1]
    st = _leaves(lab[lo:hi], ctx, rng)
    for d in range(depth - 1, -1, -1):
        plo, phi = starts[d], starts[d + 1]
        st = _combine(st, par[lo:hi] - plo, phi - plo, ctx)
        lo, hi = plo, phi
    return st, rng.integers(2**63)


def tree_engine(tree, prior, kernel: BroadcastKernel, delta: float, kind: str = "noisy", weights=None,
                bp: bool = True) -> dict:
    """Run the level engine on one given tree; returns the root state.

    ``prior`` holds the observed label of every tree node (-1 for none);
    only boundary nodes at the depth cap are used.  The root entries are
    directly comparable with the unscaled WMP root message and moments.
    """
    ctx = _ctx(kernel, delta, kind, weights, bp)
    levels = tree.levels()
    cap = tree.depth_cap
    if cap == 0 or cap >= len(levels):
        return _dead(1, kernel.k, bp) if cap else _leaf_states(np.asarray(prior)[:1], ctx)
    lo, hi = levels[cap]
    st = _leaf_states(np.asarray(prior, dtype=np.int64)[lo:hi], ctx)
    for d in range(cap - 1, -1, -1):
        plo, phi = levels[d]
        st = _combine(st, tree.parent[lo:hi] - plo, phi - plo, ctx)
        lo, hi = plo, phi
    return st


@dataclass
class FixedShapeResult:
    mean: np.ndarray  # empirical E[root message | root label]
    se: np.ndarray
    mu: np.ndarray  # predicted centers
    sigma2: float
    error: np.ndarray  # per-class misclassification
    error_se: np.ndarray
    counts: np.ndarray
    bound: float  # exp(-gap^2 / (8 sigma^2))
    violations: Optional[int]


def fixed_shape_experiment(tree, kernel: BroadcastKernel, delta: float, trials: int, seed: int,
                           kind: str = "noisy", weights=None, chunk: int = 1000) -> FixedShapeResult:
    """Broadcast labels on one fixed tree many times and compare WMP with its moment recursion.

    The root message is linear in the boundary priors, ``M(o) = sum a_u w[prior(u)]``
    with ``a_u = theta^(-|u|) i(u)``, which lets every broadcast be scored at once.
    """
    from .flow import min_energy_flow
    from .tree import broadcast_batch
    from .wmp import evolve_moments, init_messages

    theta = kernel.theta
    flow = min_energy_flow(tree, theta**-2)
    w = label_weights(kernel, weights)
    k = kernel.k
    dummy = SideInfo(SideInfoMode(kind, delta), np.zeros(tree.size, dtype=np.int64), 0)
    state = init_messages(tree.with_prior(np.zeros(tree.size, dtype=np.int64)), dummy, flow, kernel,
                          weights=weights)
    scale = math.exp(state.log_scale)
    mom = evolve_moments(tree, kernel.K, theta, state.mu * scale, state.sigma2 * scale**2, state.sites,
                         check=(flow, delta, w))
    sites = state.sites
    coef = np.zeros(tree.size)
    coef[sites] = flow.flow[sites] * np.power(theta, -tree.depth[sites].astype(float))
    rng = derive_rng(seed, 0xF1)
    pi = kernel.stationary()
    roots = rng.choice(k, size=trials, p=pi)
    ctx = _ctx(kernel, delta, kind, weights, bp=False)
    msgs = np.empty(trials)
    idx = np.flatnonzero(sites)
    for i in range(0, trials, chunk):
        labs = broadcast_batch(tree, kernel.K, roots[i:i + chunk], rng)[:, idx]
        prior = _draw_prior(labs, ctx, rng)
        vals = np.where(prior >= 0, w[np.maximum(prior, 0)], 0.0)
        msgs[i:i + chunk] = vals @ coef[idx]
    pred, _ = decide_batch(msgs, np.broadcast_to(mom.mu, (trials, k)), kernel.weight)
    mean, se, err, err_se, counts = (np.zeros(k) for _ in range(5))
    for l in range(k):
        sel = roots == l
        counts[l] = sel.sum()
        if counts[l] > 1:
            mean[l] = msgs[sel].mean()
            se[l] = msgs[sel].std(ddof=1) / math.sqrt(counts[l])
            e = (pred[sel] != l).astype(float)
            err[l] = e.mean()
            err_se[l] = math.sqrt(max(err[l] * (1 - err[l]), 1.0 / counts[l]) / counts[l])
    gap = np.min(np.diff(np.sort(mom.mu))) if k > 1 else 0.0
    bound = math.exp(-gap**2 / (8 * mom.sigma2)) if mom.sigma2 > 0 else 0.0
    return FixedShapeResult(mean, se, np.asarray(mom.mu), mom.sigma2, err, err_se, counts, bound,
                            mom.violations)


def _pool_roots(M, labels, depth, ctx: _Ctx, rng, pool_size):
    M = np.asarray(M, dtype=float)
    k = M.shape[0]
    pool = [_leaves(np.full(pool_size, j), ctx, rng) for j in range(k)]

    def grow(parent_labels):
        counts = rng.poisson(M[parent_labels])  # (n, k)
        parts, pars = [], []
        for j in range(k):
            c = counts[:, j]
            tot = int(c.sum())
            if tot:
                parts.append(_take(pool[j], rng.integers(0, pool_size, tot)))
                pars.append(np.repeat(np.arange(len(parent_labels)), c))
        if not parts:
            return _dead(len(parent_labels), k, ctx.bp)
        return _combine(_concat(parts), np.concatenate(pars), len(parent_labels), ctx)

    for _ in range(depth - 1):
        pool = [grow(np.full(pool_size, j)) for j in range(k)]
    return grow(np.asarray(labels))


def gw_engine(M, delta: float, depth: int, trials: int, seed: int, kind: str = "noisy",
              kernel: Optional[BroadcastKernel] = None, engine: str = "auto", pool_size: int = 50_000,
              weights=None, bp: bool = True, workers: int = 1, chunk: int = 500) -> GwOutcome:
    """Run WMP, uniform-flow WMP and BP on ``trials`` independent GW trees.

    Root labels are drawn from the stationary law of the kernel, boundary
    labels are revealed at depth ``depth`` per the side-information kind.
    ``engine="exact"`` grows every tree in full; ``"pool"`` uses population
    dynamics; ``"auto"`` picks exact when the expected node count fits a
    fixed budget.
    """
    M = np.asarray(M, dtype=float)
    kernel = kernel_from_mean(M) if kernel is None else kernel
    k = kernel.k
    rng = derive_rng(seed, 0x6A, depth)
    pi = kernel.stationary()
    labels = rng.choice(k, size=trials, p=pi)
    weight = np.asarray(kernel.weight, dtype=float)
    ctx = _ctx(kernel, delta, kind, weights, bp)
    if depth == 0:
        root = _leaves(labels, ctx, rng)
        out = _finish_roots(root, labels, ctx, weight, rng, "exact")
        for name in out.preds:
            if name != "bp":
                out.preds[name] = np.where(out.root_prior >= 0, out.root_prior, out.preds[name])
        return out
    if engine == "auto":
        lam = float(np.max(np.abs(np.linalg.eigvals(M))))
        expect = sum(lam**d for d in range(depth + 1)) * trials
        engine = "exact" if expect <= EXACT_NODE_BUDGET else "pool"
    if engine == "pool":
        root = _pool_roots(M, labels, depth, ctx, rng, pool_size)
    else:
        jobs = [(M, kernel, delta, kind, depth, labels[i:i + chunk], weights, bp, seed, i // chunk)
                for i in range(0, trials, chunk)]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(_exact_chunk, jobs))
        else:
            parts = [_exact_chunk(j) for j in jobs]
        root = _concat([p[0] for p in parts])
    return _finish_roots(root, labels, ctx, weight, rng, engine)


# -- experiments -------------------------------------------------------------------

def _gw_kernel(config: ExperimentConfig):
    if config.M is not None:
        M = np.asarray(config.M, dtype=float)
        return M, kernel_from_mean(M)
    if config.params is not None:
        kern = build_kernel(config.params)
        return np.asarray(kern.M), kern
    raise InvalidParams("gw_tree scenario needs M or params")


def gw_monte_carlo(config: ExperimentConfig) -> list:
    M, kern = _gw_kernel(config)
    rows = []
    for delta in config.deltas:
        for depth in config.depths:
            t0 = time.perf_counter()
            out = gw_engine(M, delta, depth, config.trials, config.seed, config.mode, kern, config.engine,
                            config.pool_size, config.weights, "bp" in config.estimators, config.workers)
            wall = time.perf_counter() - t0
            for est in config.estimators:
                if est == "spectral":
                    continue  # needs a graph
                stats = out.stats(est, kern.equiv_sets, kern.k)
                rows.append(_row("gw_tree", est, depth, delta, kern.snr, config.seed, stats, config.trials, wall))
    return rows


def estimate_kernel(graph: Graph, prior, k: int) -> BroadcastKernel:
    """Plug-in kernel from the labelled subgraph, with +1 smoothing on block edge counts."""
    prior = np.asarray(prior, dtype=np.int64)
    lab = prior >= 0
    sizes = np.bincount(prior[lab], minlength=k).astype(float)
    if sizes.sum() == 0:
        raise InvalidParams("no labelled nodes to estimate the kernel from")
    e = graph.edges()
    keep = lab[e[:, 0]] & lab[e[:, 1]]
    a, b = prior[e[keep, 0]], prior[e[keep, 1]]
    counts = np.zeros((k, k))
    np.add.at(counts, (a, b), 1.0)
    counts = counts + counts.T - np.diag(np.diag(counts))
    pairs = np.outer(sizes, sizes) - np.diag(sizes * (sizes + 1) / 2)
    Q = np.clip((counts + 1.0) / (pairs + 2.0), 0.0, 1.0)
    Q = (Q + Q.T) / 2
    share = sizes / sizes.sum() * graph.n
    N = np.floor(share).astype(np.int64)
    N[np.argsort(-(share - N), kind="stable")[: graph.n - N.sum()]] += 1
    N = np.maximum(N, 1)
    N[np.argmax(N)] += graph.n - N.sum()
    return build_kernel(SbmParams(graph.n, k, N, Q))


def _classify_rows(scenario, graph, si, kern, depth, delta, seed, estimators, workers, all_revealed,
                   exclude_revealed, strict_depth1=False):
    rows = []
    evaluated = np.ones(graph.n, bool)
    if exclude_revealed and si.mode.kind == "partial":
        evaluated &= ~si.revealed
    for est in estimators:
        t0 = time.perf_counter()
        if est in ("wmp", "amp_uniform_flow"):
            opts = WmpOptions(depth=depth, uniform_flow=est == "amp_uniform_flow", all_revealed=all_revealed,
                              exclude_revealed=exclude_revealed)
            res = wmp_classify_graph(graph, si, kern, depth, opts, workers=workers)
            use_strict = strict_depth1 and depth == 1
            stats = res.strict_stats if use_strict else res.stats
        elif est == "spectral":
            pred = spectral_partition(graph, si)
            stats = misclassification_stats(pred, graph.truth, kern.equiv_sets, evaluated, kern.k)
        else:
            continue  # BP is run on trees, not whole graphs
        rows.append(_row(scenario, est, depth, delta, kern.snr, seed, stats, 1, time.perf_counter() - t0))
    return rows


def sbm_experiment(config: ExperimentConfig) -> list:
    if config.params is None:
        raise InvalidParams("sbm scenario needs params")
    params = config.params
    graph = sample_graph(params, config.seed)
    kern = build_kernel(params)
    rows = []
    for delta in config.deltas:
        mode = SideInfoMode(config.mode, delta)
        si = make_side_info(graph.truth, mode, params.k, derive_rng(config.seed, 0xD1).integers(2**31))
        for depth in config.depths:
            ests = [e for e in config.estimators if e != "spectral" or depth == config.depths[0]]
            rows += _classify_rows("sbm", graph, si, kern, depth, delta, config.seed, ests, config.workers,
                                   config.all_revealed, True)
    return rows


def data_dir() -> Path:
    return Path(os.environ.get("WMP_DATA_DIR", Path.home() / ".wmpsbm"))


def load_polblogs(path=None) -> Graph:
    """Political-blogs graph restricted to its largest component.

    Accepts ``polblogs.gml`` (node ``value`` attribute gives the side) or an
    edge list ``polblogs.txt`` with a ``polblogs_labels.csv`` next to it.
    """
    base = Path(path) if path else data_dir()
    cands = [base] if base.is_file() else [base / "polblogs.gml", base / "polblogs.txt"]
    for p in cands:
        if p.exists():
            if p.suffix == ".gml":
                g = load_gml(p)
            else:
                g = attach_labels(load_edge_list(p), p.with_name("polblogs_labels.csv"))
            if g.truth is None or np.any(g.truth < 0):
                raise InvalidParams(f"{p} does not label every node")
            return restrict_to_largest_component(g)
    raise DatasetMissing(
        f"political-blogs data not found under {base}. Download {POLBLOGS_URL}, unzip it and place "
        f"polblogs.gml in that directory (or set WMP_DATA_DIR)."
    )


def polblogs_experiment(config: ExperimentConfig, repetitions: int = 50) -> list:
    """Uniform-flow WMP at depths 1-5 plus the spectral baseline, 50 reveals per delta.

    The kernel is estimated from the revealed labels each repetition; depth-1
    nodes without usable labels count as errors.
    """
    graph = load_polblogs(config.dataset)
    deltas = config.deltas if config.deltas else POLBLOGS_DELTAS
    depths = config.depths if config.depths else range(1, 6)
    rows = []
    for delta in deltas:
        for rep in range(repetitions):
            seed = int(derive_rng(config.seed, 0xB10C, int(delta * 1e6), rep).integers(2**31))
            si = make_side_info(graph.truth, SideInfoMode.partial(delta), 2, seed)
            kern = estimate_kernel(graph, si.prior, 2)
            for i, depth in enumerate(depths):
                ests = [e for e in config.estimators if e != "spectral" or i == 0]
                rows += _classify_rows("polblogs", graph, si, kern, depth, delta, seed, ests, config.workers,
                                       config.all_revealed, True, strict_depth1=True)
    return rows


def run_experiment(config: ExperimentConfig) -> list:
    runner = {"gw_tree": gw_monte_carlo, "sbm": sbm_experiment, "polblogs": polblogs_experiment}
    rows = runner[config.scenario](config)
    if config.output:
        write_results(config.output, rows)
    return rows
