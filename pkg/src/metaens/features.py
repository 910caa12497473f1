"""Score-level state representation for the gain predictor.

A state describes adding candidate ``c`` to ensemble ``P`` whose most recent
member is ``last``. It concatenates three 20-dim pairwise blocks and |P|:

* ``block_last_cand`` = pair(o_last, o_c)
* ``block_last_ens``  = mean over f in P \\ {last} of pair(o_last, o_f)
* ``block_cand_ens``  = mean over f in P of pair(o_f, o_c)

Pooled blocks are averaged over members in sorted-id order, so any storage
order of ``P`` yields bit-identical vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import ScoreMatrix
from .errors import DataError, UsageError

LAYOUT_VERSION = 1
N_PAIR = 20
N_STATE = 3 * N_PAIR + 1
HIST_BINS = 10
KL_EPS = 1e-6
JACCARD_FRACS = (0.01, 0.05, 0.10)
JACCARD_MIN_K = 5

PAIR_FEATURE_NAMES = (
    "pearson", "spearman", "kendall_tau_b", "cosine",
    "mean_abs_diff", "rms_diff", "max_abs_diff",
    "jaccard_top1", "jaccard_top5", "jaccard_top10",
    "sym_kl_hist", "hist_intersection",
    "mean_diff", "std_diff", "entropy_diff",
    "ctx_mean", "ctx_std", "ctx_skew", "ctx_kurtosis", "ctx_entropy",
)
FEATURE_NAMES = tuple(
    [f"lc_{n}" for n in PAIR_FEATURE_NAMES]
    + [f"le_{n}" for n in PAIR_FEATURE_NAMES]
    + [f"ce_{n}" for n in PAIR_FEATURE_NAMES]
    + ["ensemble_size"]
)


def default_k_top(n: int) -> int:
    return min(n, max(10, math.ceil(0.05 * n)))


def top_k(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties by ascending index."""
    return np.argsort(-v, kind="stable")[:k]


def jaccard_topk(a, b, k_top: int) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError("jaccard_topk: vectors differ in length")
    if not 1 <= k_top <= a.size:
        raise UsageError(f"k_top={k_top} outside [1, {a.size}]")
    sa, sb = set(top_k(a, k_top).tolist()), set(top_k(b, k_top).tolist())
    return len(sa & sb) / len(sa | sb)


class _ColumnStats:
    """Everything pair features need from a single score vector."""

    __slots__ = ("v", "ranks", "centered", "rcentered", "norm", "cnorm", "rnorm",
                 "tops", "hist", "hist_s", "mean", "std", "entropy", "context")

    def __init__(self, v: np.ndarray):
        v = np.asarray(v, dtype=np.float64)
        n = v.size
        self.v = v
        self.ranks = stats.rankdata(v)
        self.centered = v - v.mean()
        self.rcentered = self.ranks - self.ranks.mean()
        self.norm = float(np.sqrt(v @ v))
        self.cnorm = float(np.sqrt(self.centered @ self.centered))
        self.rnorm = float(np.sqrt(self.rcentered @ self.rcentered))
        order = np.argsort(-v, kind="stable")
        self.tops = []
        for frac in JACCARD_FRACS:
            k = min(n, max(JACCARD_MIN_K, math.ceil(frac * n)))
            mask = np.zeros(n, dtype=bool)
            mask[order[:k]] = True
            self.tops.append(mask)
        counts = np.histogram(np.clip(v, 0.0, 1.0), bins=HIST_BINS, range=(0.0, 1.0))[0]
        self.hist = counts / n
        smooth = self.hist + KL_EPS
        self.hist_s = smooth / smooth.sum()
        nz = self.hist[self.hist > 0]
        self.entropy = float(-(nz * np.log(nz)).sum()) + 0.0
        self.mean = float(v.mean())
        self.std = float(v.std())
        if self.std > 0:
            skew = float(stats.skew(v))
            kurt = float(stats.kurtosis(v))
        else:
            skew = kurt = 0.0
        self.context = (self.mean, self.std, skew, kurt, self.entropy)


def _corr(xc: np.ndarray, xn: float, yc: np.ndarray, yn: float) -> float:
    if xn == 0.0 or yn == 0.0:
        return 0.0
    return float(np.clip((xc @ yc) / (xn * yn), -1.0, 1.0))


def _pair(a: _ColumnStats, b: _ColumnStats) -> np.ndarray:
    if a.v.shape != b.v.shape:
        raise DataError("pair_features: vectors differ in length")
    diff = a.v - b.v
    absd = np.abs(diff)
    if a.std > 0 and b.std > 0:
        tau = stats.kendalltau(a.v, b.v).statistic
        tau = 0.0 if not np.isfinite(tau) else float(tau)
    else:
        tau = 0.0
    cos = 0.0 if a.norm == 0.0 or b.norm == 0.0 else float(np.clip((a.v @ b.v) / (a.norm * b.norm), -1, 1))
    jac = [float((ta & tb).sum() / (ta | tb).sum()) for ta, tb in zip(a.tops, b.tops)]
    kl = float(np.sum(a.hist_s * np.log(a.hist_s / b.hist_s)) + np.sum(b.hist_s * np.log(b.hist_s / a.hist_s)))
    inter = float(np.minimum(a.hist, b.hist).sum())
    out = np.array([
        _corr(a.centered, a.cnorm, b.centered, b.cnorm),
        _corr(a.rcentered, a.rnorm, b.rcentered, b.rnorm),
        tau,
        cos,
        float(absd.mean()),
        float(np.sqrt(np.mean(diff * diff))),
        float(absd.max()),
        *jac,
        kl,
        inter,
        a.mean - b.mean,
        a.std - b.std,
        a.entropy - b.entropy,
        *b.context,
    ])
    return out


def pair_features(a, b) -> np.ndarray:
    """The 20 pairwise interaction features of score vectors ``a`` and ``b``.

    The five context features describe ``b``, the candidate side. Constant
    inputs give 0 for every correlation-type feature.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise DataError("pair_features: vectors differ in length")
    if a.size < 2:
        raise DataError("pair_features: need at least 2 instances")
    return _pair(_ColumnStats(a), _ColumnStats(b))


class PairFeatureCache:
    """Memoized pair features and top-k sets over one :class:`ScoreMatrix`."""

    def __init__(self, sm: ScoreMatrix):
        self.sm = sm
        self._stats: dict[str, _ColumnStats] = {}
        self._pairs: dict[tuple[str, str], np.ndarray] = {}
        self._tops: dict[tuple[str, int], frozenset] = {}

    def stats(self, model_id: str) -> _ColumnStats:
        st = self._stats.get(model_id)
        if st is None:
            st = self._stats[model_id] = _ColumnStats(self.sm.column(model_id))
        return st

    def pair(self, a: str, b: str) -> np.ndarray:
        key = (a, b)
        out = self._pairs.get(key)
        if out is None:
            out = self._pairs[key] = _pair(self.stats(a), self.stats(b))
            out.setflags(write=False)
        return out

    def top_set(self, model_id: str, k: int) -> frozenset:
        key = (model_id, k)
        s = self._tops.get(key)
        if s is None:
            s = self._tops[key] = frozenset(top_k(self.sm.column(model_id), k).tolist())
        return s

    def jaccard(self, a: str, b: str, k: int) -> float:
        sa, sb = self.top_set(a, k), self.top_set(b, k)
        return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class StateFeatures:
    block_last_cand: np.ndarray
    block_last_ens: np.ndarray
    block_cand_ens: np.ndarray
    ensemble_size: int
    layout_version: int = LAYOUT_VERSION

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.block_last_cand, self.block_last_ens, self.block_cand_ens,
                               [float(self.ensemble_size)]])


def build_state(candidate: str, last_selected: str, ensemble, sm: ScoreMatrix,
                cache: PairFeatureCache | None = None) -> StateFeatures:
    """State of adding ``candidate`` to ``ensemble`` after ``last_selected``."""
    members = sorted(set(ensemble))
    if len(members) != len(list(ensemble)):
        raise UsageError("ensemble contains duplicate members")
    if not members:
        raise UsageError("ensemble is empty")
    if candidate in members:
        raise UsageError(f"candidate {candidate!r} is already in the ensemble")
    if last_selected not in members:
        raise UsageError(f"last-selected model {last_selected!r} is not in the ensemble")
    for m in [candidate] + members:
        sm.index_of(m)
    if cache is None:
        cache = PairFeatureCache(sm)
    lc = cache.pair(last_selected, candidate)
    ce = np.mean(np.vstack([cache.pair(f, candidate) for f in members]), axis=0)
    others = [f for f in members if f != last_selected]
    if others:
        le = np.mean(np.vstack([cache.pair(last_selected, f) for f in others]), axis=0)
    else:
        le = np.zeros(N_PAIR)
    return StateFeatures(np.array(lc), le, ce, len(members))
