"""SBM parameter bundle and the spectral quantities derived from it.

Community indices are 0-based throughout the package.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    ComplexSpectrum,
    InvalidParams,
    NoConvergence,
    NonStochastic,
    NotSymmetric,
    WrongK,
    ZeroDegreeCommunity,
)

SYMMETRY_TOL = 1e-9
EQUIV_TOL = 1e-8
EIG_TOL = 1e-10


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SbmParams:
    """General SBM: ``n`` nodes, ``k`` communities of sizes ``N``, edge probabilities ``Q``."""

    n: int
    k: int
    N: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        N = _frozen(self.N, dtype=np.int64)
        Q = _frozen(self.Q)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "Q", Q)
        if self.n < 1 or self.k < 1:
            raise InvalidParams("n and k must be positive")
        if N.shape != (self.k,) or Q.shape != (self.k, self.k):
            raise InvalidParams(f"expected N of length {self.k} and Q of shape ({self.k},{self.k})")
        if np.any(N < 1):
            raise InvalidParams("community sizes must be positive")
        if int(N.sum()) != self.n:
            raise InvalidParams(f"sum(N) = {int(N.sum())} != n = {self.n}")
        if not np.array_equal(Q, Q.T):
            raise InvalidParams("Q must be symmetric")
        if np.any(Q < 0) or np.any(Q > 1):
            raise InvalidParams("Q entries must lie in [0, 1]")

    @classmethod
    def vanilla(cls, n: int, a: float, b: float, k: int = 2) -> "SbmParams":
        """Equal-size communities with ``Q = a/n`` inside and ``b/n`` across."""
        if n % k:
            raise InvalidParams("n must be divisible by k for the vanilla model")
        Q = np.full((k, k), b / n)
        np.fill_diagonal(Q, a / n)
        return cls(n, k, [n // k] * k, Q)

    def labels(self) -> np.ndarray:
        """Block-fill truth: the first ``N[0]`` nodes get label 0, and so on."""
        return np.repeat(np.arange(self.k), self.N)


@dataclass(frozen=True)
class BroadcastKernel:
    K: np.ndarray
    M: np.ndarray
    theta: float
    lam: float
    snr: float
    weight: np.ndarray  # community sizes (or stationary mass); used for tie-breaks
    w: Optional[np.ndarray] = None
    equiv_sets: Optional[tuple] = None
    symmetric: bool = False
    warnings: tuple = field(default_factory=tuple)

    @property
    def k(self) -> int:
        return self.K.shape[0]

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.K)

    def priority(self) -> np.ndarray:
        """Community indices ordered for tie-breaking: larger weight first, then lower index."""
        return np.lexsort((np.arange(self.k), -np.asarray(self.weight)))


class ThetaBar(NamedTuple):
    quarter: float  # as displayed, with the 1/4 prefactor
    half: float  # 1/2 prefactor, equal to the second eigenvalue of K


def second_eigenvalue(K) -> float:
    """Eigenvalue with the second largest modulus, sign retained."""
    K = np.asarray(K, dtype=float)
    vals = np.linalg.eigvals(K)
    if K.shape[0] == 1:
        return 0.0
    # drop the Perron root (the eigenvalue closest to 1)
    top = int(np.argmin(np.abs(vals - 1.0)))
    rest = np.delete(vals, top)
    mod = np.abs(rest)
    cand = rest[mod >= mod.max() - 1e-12]
    real = cand[np.abs(cand.imag) <= 1e-12].real
    if real.size == 0:
        raise ComplexSpectrum(f"second eigenvalue {cand[0]} is not real")
    return float(real.max()) if np.any(real >= 0) else float(real.min())


def stationary_distribution(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    vals, vecs = np.linalg.eig(K.T)
    pi = np.real(vecs[:, int(np.argmin(np.abs(vals - 1.0)))])
    pi = np.abs(pi)
    return pi / pi.sum()


def _assemble(K, M, weight) -> BroadcastKernel:
    k = K.shape[0]
    if np.any(np.abs(K.sum(axis=1) - 1.0) > 1e-9):
        raise NonStochastic("kernel rows do not sum to one")
    theta = second_eigenvalue(K)
    lam = float(np.max(np.linalg.eigvals(M).real)) if k else 0.0
    notes = []
    w = equiv = None
    symmetric = bool(np.allclose(K, K.T, rtol=0, atol=SYMMETRY_TOL))
    if symmetric and k >= 2:
        w, equiv = second_eigvec(K)
    else:
        notes.append("K is not symmetric; eigenvector weights unavailable")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=3)
    return BroadcastKernel(
        K=_frozen(K),
        M=_frozen(M),
        theta=theta,
        lam=lam,
        snr=lam * theta**2,
        weight=_frozen(weight),
        w=None if w is None else _frozen(w),
        equiv_sets=equiv,
        symmetric=symmetric,
        warnings=tuple(notes),
    )


def build_kernel(params: SbmParams) -> BroadcastKernel:
    """K = diag(QN)^-1 Q diag(N), M = Q diag(N), theta, lambda and SNR."""
    N = params.N.astype(float)
    QN = params.Q @ N
    if np.any(QN <= 0):
        raise ZeroDegreeCommunity(f"communities {np.flatnonzero(QN <= 0).tolist()} have expected degree 0")
    M = params.Q * N[None, :]
    K = M / QN[:, None]
    return _assemble(K, M, N)


def kernel_from_mean(M) -> BroadcastKernel:
    """Kernel of a multi-type Galton-Watson tree with mean matrix ``M``."""
    M = np.asarray(M, dtype=float)
    rows = M.sum(axis=1)
    if np.any(rows <= 0):
        raise ZeroDegreeCommunity("every type needs a positive expected offspring count")
    K = M / rows[:, None]
    return _assemble(K, M, stationary_distribution(K))


def theta_bar_closed_form_k2(params: SbmParams) -> ThetaBar:
    if params.k != 2:
        raise WrongK(f"closed form needs k = 2, got k = {params.k}")
    (n1, n2), Q = params.N.astype(float), params.Q
    d1 = n1 * Q[0, 0] + n2 * Q[0, 1]
    d2 = n1 * Q[1, 0] + n2 * Q[1, 1]
    if d1 <= 0 or d2 <= 0:
        raise ZeroDegreeCommunity("closed form denominators must be positive")
    s = (n1 * Q[0, 0] - n2 * Q[0, 1]) / d1 + (n2 * Q[1, 1] - n1 * Q[1, 0]) / d2
    return ThetaBar(quarter=s / 4, half=s / 2)


def group_equal(w, tol: float = EQUIV_TOL) -> tuple:
    """Partition indices of ``w`` into runs of (chained) equal coordinates."""
    order = np.argsort(w, kind="stable")
    groups, cur = [], [int(order[0])]
    for a, b in zip(order[:-1], order[1:]):
        if abs(w[b] - w[a]) <= tol:
            cur.append(int(b))
        else:
            groups.append(cur)
            cur = [int(b)]
    groups.append(cur)
    return tuple(sorted(tuple(sorted(g)) for g in groups))


def second_eigvec(K, max_iter: int = 100_000, tol: float = EIG_TOL):
    """Unit second right eigenvector of a symmetric kernel and its equal-coordinate sets."""
    K = np.asarray(K, dtype=float)
    k = K.shape[0]
    if not np.allclose(K, K.T, rtol=0, atol=SYMMETRY_TOL):
        raise NotSymmetric("second_eigvec needs a symmetric kernel")
    theta = second_eigenvalue(K)
    vals, vecs = np.linalg.eigh((K + K.T) / 2)
    ones = np.ones(k) / np.sqrt(k)
    # skip the Perron direction, then take the eigenvector for theta
    best = None
    for i in np.argsort(np.abs(vals - theta)):
        v = vecs[:, i] - ones * (ones @ vecs[:, i])
        if np.linalg.norm(v) > 1e-6:
            best = v / np.linalg.norm(v)
            break
    if best is None:
        raise NoConvergence("no eigenvector orthogonal to the ones vector")
    w = best
    # polish: a few inverse-free Rayleigh refinements within the eigenspace
    for _ in range(max_iter):
        res = np.max(np.abs(K @ w - theta * w))
        if res <= tol:
            break
        w = K @ w
        w -= ones * (ones @ w)
        w /= np.linalg.norm(w)
    else:
        raise NoConvergence(f"eigen-residual {res:.3g} after {max_iter} iterations")
    nz = np.flatnonzero(np.abs(w) > EQUIV_TOL)
    if nz.size and w[nz[0]] < 0:
        w = -w
    return w, group_equal(w)
