from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEvaluationSet


@dataclass(frozen=True)
class ErrStats:
    """Misclassification summary over the evaluated nodes.

    ``worst`` is the largest per-class conditional error.  ``set_errors``
    maps a pair ``(i, j)`` of equivalence-set indices (``i < j``) to
    ``max(P(pred in S_i | truth in S_j), P(pred in S_j | truth in S_i))``;
    a conditional with no supporting nodes counts as 0.
    """

    overall: float
    per_class: np.ndarray
    worst: float
    set_errors: dict = field(default_factory=dict)
    n_evaluated: int = 0
    n_uninformed: int = 0

    @property
    def uninformed_rate(self) -> float:
        return self.n_uninformed / self.n_evaluated if self.n_evaluated else 0.0


def _cond(pred, truth, into, given):
    sel = np.isin(truth, given)
    if not sel.any():
        return 0.0
    return float(np.isin(pred[sel], into).mean())


def misclassification_stats(pred, truth, equiv_sets=None, evaluated_mask=None, k=None,
                            uninformed=None) -> ErrStats:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    mask = np.ones(len(truth), dtype=bool) if evaluated_mask is None else np.asarray(evaluated_mask, bool)
    mask = mask & (truth >= 0)
    if not mask.any():
        raise EmptyEvaluationSet("no node selected for evaluation")
    p, t = pred[mask], truth[mask]
    k = int(max(t.max(), p.max()) + 1) if k is None else k
    per_class = np.zeros(k)
    for l in range(k):
        sel = t == l
        per_class[l] = float((p[sel] != l).mean()) if sel.any() else 0.0
    sets = {}
    if equiv_sets:
        for i, S in enumerate(equiv_sets):
            for j in range(i + 1, len(equiv_sets)):
                T = equiv_sets[j]
                sets[(i, j)] = max(_cond(p, t, S, T), _cond(p, t, T, S))
    n_unf = 0 if uninformed is None else int(np.asarray(uninformed)[mask].sum())
    return ErrStats(
        overall=float((p != t).mean()),
        per_class=per_class,
        worst=float(per_class.max()),
        set_errors=sets,
        n_evaluated=int(mask.sum()),
        n_uninformed=n_unf,
    )


def within_set_error(pred, truth, S) -> float:
    """Error rate restricted to nodes whose truth and prediction both lie in ``S``."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    sel = np.isin(truth, S) & np.isin(pred, S)
    return float((pred[sel] != truth[sel]).mean()) if sel.any() else 0.0
