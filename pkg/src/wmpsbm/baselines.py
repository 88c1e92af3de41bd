"""Exact belief propagation on trees, a brute-force posterior, and a spectral baseline."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from scipy.special import logsumexp

from .errors import DomainError, InvalidParams, NoConvergence, TooLarge
from .model import stationary_distribution
from .sbm import Graph, SideInfo
from .tree import LocalTree

ASYMPTOTE_X = 30.0
ORACLE_MAX_NODES = 14
LOGIT_TOL = 1e-9


def f_update(theta1: float, theta2: float, x):
    """``log((1 + theta1 tanh(x/2)) / (1 - theta2 tanh(x/2)))``, the two-community BP map."""
    if not (0 < theta1 < 1 and 0 < theta2 < 1):
        raise DomainError("f_update needs theta1, theta2 in (0, 1)")
    x = np.asarray(x, dtype=float)
    t = np.tanh(np.clip(x, -ASYMPTOTE_X, ASYMPTOTE_X) / 2)
    out = np.log1p(theta1 * t) - np.log1p(-theta2 * t)
    hi = math.log((1 + theta1) / (1 - theta2))
    lo = math.log((1 - theta1) / (1 + theta2))
    out = np.where(x > ASYMPTOTE_X, hi, np.where(x < -ASYMPTOTE_X, lo, out))
    return float(out) if out.ndim == 0 else out


def evidence_loglik(prior, k: int, mode_kind: str, delta: float) -> np.ndarray:
    """Per-node log-likelihood of the observed prior label under each true label.

    Noisy labels follow the symmetric channel (agreement ``delta + (1-delta)/k``,
    wrong labels equally likely).  Partial labels are exact when revealed.
    Nodes without a label (prior < 0) are uninformative.
    """
    prior = np.asarray(prior, dtype=np.int64)
    L = np.zeros((len(prior), k))
    obs = prior >= 0
    if not obs.any():
        return L
    if mode_kind == "noisy":
        agree = delta + (1 - delta) / k
        hit, miss = math.log(agree), math.log((1 - agree) / (k - 1))
    elif mode_kind == "partial":
        hit, miss = 0.0, -np.inf
    else:
        raise InvalidParams(f"unknown evidence model {mode_kind!r}")
    L[obs] = miss
    L[np.flatnonzero(obs), prior[obs]] = hit
    return L


def _observed(tree: LocalTree, side_info: SideInfo, evidence: str):
    prior = tree.prior if tree.prior is not None else np.asarray(side_info.prior)[tree.node_ids]
    prior = np.array(prior, dtype=np.int64)
    if evidence == "boundary":
        prior[~tree.boundary] = -1
    elif evidence != "all":
        raise InvalidParams("evidence must be 'boundary' or 'all'")
    return prior


def _log_root_prior(K, root_prior):
    pi = stationary_distribution(K) if root_prior is None else np.asarray(root_prior, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(pi / pi.sum())


def upward_messages(tree: LocalTree, K, loglik) -> np.ndarray:
    """Log of ``P(evidence in subtree(v) | label(v))`` for every node, up to a per-node constant."""
    K = np.asarray(K, dtype=float)
    with np.errstate(divide="ignore"):
        logK = np.log(K)
    msg = np.array(loglik, dtype=float)
    levels = tree.levels()
    for lo, hi in reversed(levels[1:]):
        m = msg[lo:hi]
        # log sum_y K[x, y] exp(m[y]) for each child, normalised for range
        up = logsumexp(logK[None, :, :] + m[:, None, :], axis=2)
        up -= up.max(axis=1, keepdims=True)
        np.add.at(msg, tree.parent[lo:hi], up)
    return msg


class BpResult(NamedTuple):
    posterior: np.ndarray
    label: int
    logit: Optional[float] = None  # k = 2 only: log P(0) / P(1) from the f recursion


def bp_classify_root(tree: LocalTree, K, side_info: SideInfo, root_prior=None,
                     evidence: str = "boundary") -> BpResult:
    """Exact root posterior by sum-product on the tree.

    ``evidence="boundary"`` uses only prior labels on the tree boundary (the
    information available to WMP); ``"all"`` uses every observed label.
    """
    K = np.asarray(K, dtype=float)
    k = K.shape[0]
    prior = _observed(tree, side_info, evidence)
    L = evidence_loglik(prior, k, side_info.mode.kind, side_info.mode.delta)
    msg = upward_messages(tree, K, L)
    logpost = msg[0] + _log_root_prior(K, root_prior)
    post = np.exp(logpost - logsumexp(logpost))
    post /= post.sum()
    logit = None
    if k == 2:
        th1, th2 = 2 * K[0, 0] - 1, 2 * K[1, 1] - 1
        if 0 < th1 < 1 and 0 < th2 < 1 and np.all(np.isfinite(L)):
            logit = _logit_recursion(tree, th1, th2, L) + float(np.subtract(*_log_root_prior(K, root_prior)))
            ref = float(np.log(post[0]) - np.log(post[1]))
            if np.isfinite(ref) and abs(logit - ref) > LOGIT_TOL * max(1.0, abs(ref)):
                raise AssertionError(f"logit recursion {logit} disagrees with sum-product {ref}")
    label = int(np.lexsort((np.arange(k), -post))[0])
    return BpResult(post, label, logit)


def _logit_recursion(tree, th1, th2, L) -> float:
    B = L[:, 0] - L[:, 1]
    for lo, hi in reversed(tree.levels()[1:]):
        np.add.at(B, tree.parent[lo:hi], f_update(th1, th2, B[lo:hi]))
    return float(B[0])


def exact_posterior_oracle(tree: LocalTree, K, delta: float, root_prior=None, prior=None,
                           mode_kind: str = "noisy") -> np.ndarray:
    """Root posterior by summing over every labelling of the non-root nodes.

    ``prior`` gives the observed label per tree node (-1 for none); it
    defaults to ``tree.prior`` restricted to the boundary.
    """
    n = tree.size
    if n > ORACLE_MAX_NODES:
        raise TooLarge(f"enumeration is capped at {ORACLE_MAX_NODES} nodes, tree has {n}")
    K = np.asarray(K, dtype=float)
    k = K.shape[0]
    if prior is None:
        prior = np.where(tree.boundary, tree.prior, -1) if tree.prior is not None else np.full(n, -1)
    L = evidence_loglik(prior, k, mode_kind, delta)
    with np.errstate(divide="ignore"):
        logK = np.log(K)
    m = n - 1
    codes = np.arange(k**m, dtype=np.int64)
    hidden = (codes[:, None] // (k ** np.arange(m, dtype=np.int64))[None, :]) % k
    logpost = np.empty(k)
    for r in range(k):
        lab = np.concatenate([np.full((len(codes), 1), r), hidden], axis=1)
        lw = L[0, r] + np.zeros(len(codes))
        for v in range(1, n):
            lw = lw + logK[lab[:, tree.parent[v]], lab[:, v]] + L[v, lab[:, v]]
        logpost[r] = logsumexp(lw) if len(lw) else L[0, r]
    logpost += _log_root_prior(K, root_prior)
    post = np.exp(logpost - logsumexp(logpost))
    return post / post.sum()


# -- spectral baseline ------------------------------------------------------------

def _orient(sides, graph: Graph, prior, default: int) -> dict:
    """Map side +1/-1 to labels by majority agreement with revealed neighbours."""
    A = graph.to_sparse()
    rev = prior >= 0
    votes = np.zeros(graph.n)
    votes[rev] = np.where(prior[rev] == 0, 1.0, -1.0)
    score = float(sides @ (A @ votes))  # > 0 means side +1 sits next to label 0
    if score > 0:
        return {1: 0, -1: 1}
    if score < 0:
        return {1: 1, -1: 0}
    return {1: default, -1: 1 - default}


def spectral_partition(graph: Graph, side_info: SideInfo, default: Optional[int] = None,
                       tol: float = 1e-8, max_iter: int = 100_000) -> np.ndarray:
    """Two-way split of the unrevealed subgraph by its centred adjacency.

    The leading eigenvector of ``A - (dbar/n) 11^T`` on the unrevealed nodes
    is split by sign; the sides are named by majority agreement with the
    revealed labels of neighbouring nodes.  Revealed nodes keep their label.
    """
    prior = np.asarray(side_info.prior, dtype=np.int64)
    if prior.max(initial=-1) > 1:
        raise InvalidParams("spectral_partition handles two communities")
    if default is None:
        counts = np.bincount(prior[prior >= 0], minlength=2)
        default = int(np.argmax(counts))
    hidden = np.flatnonzero(prior < 0)
    out = prior.copy()
    if hidden.size == 0:
        return out
    A = graph.to_sparse()[hidden][:, hidden].astype(float).tocsr()
    m = hidden.size
    sides = np.zeros(graph.n)
    if m >= 3 and A.nnz:
        dbar = A.nnz / m
        op = LinearOperator((m, m), matvec=lambda x: A @ x - (dbar / m) * x.sum(), dtype=float)
        v0 = np.cos(np.arange(m) + 1.0)  # fixed start for reproducibility
        try:
            _, vec = eigsh(op, k=1, which="LA", tol=tol, maxiter=max_iter, v0=v0)
        except ArpackNoConvergence as exc:
            raise NoConvergence(f"eigen-solver did not converge: {exc}") from exc
        x = vec[:, 0]
        sides[hidden] = np.where(x > tol, 1.0, np.where(x < -tol, -1.0, 0.0))
    naming = _orient(sides, graph, prior, default)
    sh = sides[hidden]
    out[hidden] = np.where(sh > 0, naming[1], np.where(sh < 0, naming[-1], default))
    return out
