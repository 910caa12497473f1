"""Ranking metrics and the one-sided Wilcoxon signed-rank test.

Every ranking metric orders instances by descending score and breaks ties
by ascending original index, so results are exact and reproducible.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy import stats

from .errors import DataError

EXACT_MAX_N = 25


class TieMode(str, Enum):
    HALF_CREDIT = "half_credit"
    STRICT = "strict"


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise DataError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if not np.isfinite(s).all():
        raise DataError("scores contain non-finite values")
    return s, y.astype(bool)


def ranking(scores) -> np.ndarray:
    """Instance indices by descending score, ties by ascending index."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _require_pos(y: np.ndarray) -> int:
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("metric undefined: no anomalies in labels")
    return n_pos


def average_precision(scores, labels) -> float:
    s, y = _check(scores, labels)
    n_pos = _require_pos(y)
    hits = y[ranking(s)]
    cum = np.cumsum(hits)
    k = np.arange(1, hits.size + 1)
    # exactly rounded sum: the value does not depend on summation order
    return math.fsum((cum[hits] / k[hits]).tolist()) / n_pos


def precision_at_pi(scores, labels) -> float:
    s, y = _check(scores, labels)
    n_pos = _require_pos(y)
    return float(y[ranking(s)[:n_pos]].sum() / n_pos)


def roc_auc(scores, labels, tie_mode: TieMode | str = TieMode.HALF_CREDIT) -> float:
    """Probability that an anomaly outscores an inlier.

    HALF_CREDIT counts tied pairs as 1/2 (Mann-Whitney); STRICT counts them as 0.
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC-AUC needs both anomalies and inliers")
    mode = TieMode(tie_mode)
    if mode is TieMode.HALF_CREDIT:
        r = stats.rankdata(s)
        u = r[y].sum() - n_pos * (n_pos + 1) / 2.0
    else:
        neg = np.sort(s[~y])
        u = np.searchsorted(neg, s[y], side="left").sum()
    return float(u / (n_pos * n_neg))


def max_f1(scores, labels) -> float:
    """Best F1 over thresholds ``o >= t`` at every distinct score value."""
    s, y = _check(scores, labels)
    n_pos = _require_pos(y)
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    tp = np.cumsum(yy)
    # the threshold at a distinct value keeps every instance tied with it
    last_of_group = np.r_[ss[1:] != ss[:-1], True]
    tp = tp[last_of_group]
    kept = np.flatnonzero(last_of_group) + 1
    f1 = 2.0 * tp / (kept + n_pos)
    return float(f1.max())


@dataclass(frozen=True)
class EvalReport:
    ap: float
    roc_auc: float
    precision_at_pi: float
    max_f1: float
    pi: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate(scores, labels, tie_mode: TieMode | str = TieMode.HALF_CREDIT) -> EvalReport:
    _, y = _check(scores, labels)
    return EvalReport(
        ap=average_precision(scores, labels),
        roc_auc=roc_auc(scores, labels, tie_mode),
        precision_at_pi=precision_at_pi(scores, labels),
        max_f1=max_f1(scores, labels),
        pi=int(y.sum()),
    )


# -- statistics --------------------------------------------------------------------

def _exact_upper_tail(ranks: np.ndarray, w_obs: float) -> float:
    # average ranks are multiples of 1/2, so doubled ranks are integers and
    # counts[s] is the number of sign assignments with doubled rank sum s
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] = counts[r:] + counts[:-r]
    w = int(round(2.0 * w_obs))
    return float(counts[w:].sum() / 2.0 ** ranks.size)


def wilcoxon_one_sided(diffs) -> float:
    """p-value of the signed-rank test against ``median(diffs) > 0``.

    Zero differences are dropped; tied magnitudes get average ranks. Up to 25
    non-zero differences the p-value comes from the exact null distribution
    (ties included), beyond that from a normal approximation with tie and
    continuity corrections.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if not np.isfinite(d).all():
        raise DataError("differences contain non-finite values")
    d = d[d != 0]
    if d.size == 0:
        raise DataError("Wilcoxon test undefined: all differences are zero")
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    n = d.size
    if n <= EXACT_MAX_N:
        return _exact_upper_tail(ranks, w_plus)
    mean = n * (n + 1) / 4.0
    _, t = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(t ** 3 - t) / 48.0
    if var <= 0:
        return 0.5
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return float(stats.norm.sf(z))


def average_ranks(ap_matrix) -> np.ndarray:
    """Rank methods per dataset by descending AP (ties share the average rank).

    ``ap_matrix`` is datasets x methods; returns the mean rank per method.
    """
    A = np.asarray(ap_matrix, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise DataError("rank table needs a non-empty datasets x methods matrix")
    if np.isnan(A).any():
        raise DataError("rank table contains NaN")
    ranks = np.vstack([stats.rankdata(-row) for row in A])
    return ranks.mean(axis=0)


rank_table = average_ranks
