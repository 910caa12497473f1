"""Extremely randomized tree forests in a flat, serializable form.

Tree structure is grown with scikit-learn's extra-trees (random feature
subset of size K per node, one uniform threshold per feature, no bootstrap).
The grown trees are then copied into flat index-linked arrays and their leaf
values are recomputed from the training data:

* classifier leaves hold the class-weighted fraction of positives;
* regressor leaves hold the median target of the samples they contain.

Prediction traverses all trees at once and averages the leaf values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import ExtraTreesClassifier, ExtraTreesRegressor

from .errors import DataError, ModelFormatError

MEAN_PROB = "mean_prob"
MEDIAN_LEAF = "median_leaf"
LEAF = -1


@dataclass(frozen=True)
class Forest:
    """All trees of a forest packed into shared node arrays.

    Node ``i`` of tree ``t`` lives at ``roots[t] + i``; ``left``/``right``
    hold absolute node indices and are ``-1`` at leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    mode: str
    n_features: int
    seed: int

    @property
    def n_trees(self) -> int:
        return int(self.roots.size)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X`` in every tree (rows x trees)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DataError(f"forest expects {self.n_features} features, got {X.shape[1]}")
        # split thresholds were chosen on float32 inputs
        X32 = X.astype(np.float32).astype(np.float64)
        rows = np.arange(X.shape[0])[:, None]
        node = np.broadcast_to(self.roots, (X.shape[0], self.n_trees)).copy()
        while True:
            f = self.feature[node]
            active = f != LEAF
            if not active.any():
                return node
            go_left = X32[np.broadcast_to(rows, node.shape), np.where(active, f, 0)] <= self.threshold[node]
            nxt = np.where(go_left, self.left[node], self.right[node])
            node = np.where(active, nxt, node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        v = self.value[self.apply(X)]
        # averaging offsets from the row minimum keeps constant leaves exact
        lo = v.min(axis=1)
        return lo + (v - lo[:, None]).mean(axis=1)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_trees": self.n_trees,
            "n_features": self.n_features,
            "seed": self.seed,
            "roots": self.roots.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        try:
            f = cls(
                feature=np.asarray(d["feature"], dtype=np.int64),
                threshold=np.asarray(d["threshold"], dtype=np.float64),
                left=np.asarray(d["left"], dtype=np.int64),
                right=np.asarray(d["right"], dtype=np.int64),
                value=np.asarray(d["value"], dtype=np.float64),
                roots=np.asarray(d["roots"], dtype=np.int64),
                mode=str(d["mode"]),
                n_features=int(d["n_features"]),
                seed=int(d["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed forest: {exc}") from None
        f.validate()
        return f

    def validate(self):
        n = self.n_nodes
        if not (self.threshold.size == self.left.size == self.right.size == self.value.size == n):
            raise ModelFormatError("forest node arrays differ in length")
        if self.n_trees != int(len(self.roots)) or (self.roots.size and self.roots.max() >= n):
            raise ModelFormatError("forest root index out of range")
        internal = self.feature != LEAF
        if (self.feature[internal] >= self.n_features).any() or (self.feature[internal] < 0).any():
            raise ModelFormatError("forest feature index out of range")
        idx = np.arange(n)
        for child in (self.left, self.right):
            # children always follow their parent, which rules out cycles
            if (child[internal] <= idx[internal]).any() or (child[internal] >= n).any():
                raise ModelFormatError("forest child index out of range")
        if not np.isfinite(self.value).all():
            raise ModelFormatError("forest leaf values are not finite")


def constant_forest(value: float, n_features: int, mode: str, seed: int) -> Forest:
    """A single-leaf forest predicting ``value`` everywhere."""
    return Forest(np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]),
                  np.array([float(value)]), np.array([0]), mode, n_features, seed)


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # sort by (y, x_0, ..., x_d) so the fitted model ignores input order
    keys = [X[:, j] for j in range(X.shape[1] - 1, -1, -1)] + [y]
    return np.lexsort(keys)


def _pack(estimators, n_features: int, mode: str, seed: int) -> Forest:
    feats, thrs, lefts, rights, roots = [], [], [], [], []
    offset = 0
    for est in estimators:
        t = est.tree_
        leaf = t.children_left == -1
        feats.append(np.where(leaf, LEAF, t.feature).astype(np.int64))
        thrs.append(np.where(leaf, 0.0, t.threshold).astype(np.float64))
        lefts.append(np.where(leaf, LEAF, t.children_left + offset).astype(np.int64))
        rights.append(np.where(leaf, LEAF, t.children_right + offset).astype(np.int64))
        roots.append(offset)
        offset += t.node_count
    feature = np.concatenate(feats)
    return Forest(feature, np.concatenate(thrs), np.concatenate(lefts), np.concatenate(rights),
                  np.zeros(feature.size), np.array(roots, dtype=np.int64), mode, n_features, seed)


def default_max_features(n_features: int) -> int:
    return max(1, math.ceil(math.sqrt(n_features)))


def fit_classifier(X, y, n_trees: int = 500, seed: int = 0, max_features: int | None = None) -> Forest:
    """Extra-trees classifier for ``P(y = 1)`` with balanced class weights.

    Class ``c`` gets weight ``n / (2 n_c)``, both in the Gini criterion and in
    the leaf estimates.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise DataError("classifier needs a non-empty sample matrix with one label per row")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DataError("classifier needs samples of both classes")
    order = _canonical_order(X, y.astype(np.float64))
    X, y = X[order], y[order]
    d = X.shape[1]
    est = ExtraTreesClassifier(n_estimators=n_trees, criterion="gini", max_features=max_features or
                               default_max_features(d), bootstrap=False, class_weight="balanced",
                               random_state=seed % 2**32, n_jobs=1)
    est.fit(X, y.astype(np.int64))
    forest = _pack(est.estimators_, d, MEAN_PROB, seed)
    w = np.where(y, y.size / (2.0 * n_pos), y.size / (2.0 * (y.size - n_pos)))
    leaves = forest.apply(X)
    value = np.zeros(forest.n_nodes)
    for t in range(forest.n_trees):
        lt = leaves[:, t]
        tot = np.bincount(lt, weights=w, minlength=forest.n_nodes)
        pos = np.bincount(lt, weights=w * y, minlength=forest.n_nodes)
        hit = tot > 0
        value[hit] = pos[hit] / tot[hit]
    return _with_values(forest, value)


def fit_regressor(X, y, n_trees: int = 800, seed: int = 0, max_features: int | None = None) -> Forest:
    """Extra-trees regressor with variance-reduction splits and median leaves."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise DataError("regressor needs a non-empty sample matrix with one target per row")
    if not np.isfinite(y).all():
        raise DataError("regression targets must be finite")
    d = X.shape[1]
    if y.size == 1:
        return constant_forest(float(y[0]), d, MEDIAN_LEAF, seed)
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    est = ExtraTreesRegressor(n_estimators=n_trees, criterion="squared_error", max_features=max_features or
                              default_max_features(d), bootstrap=False, random_state=seed % 2**32, n_jobs=1)
    est.fit(X, y)
    forest = _pack(est.estimators_, d, MEDIAN_LEAF, seed)
    leaves = forest.apply(X)
    value = np.zeros(forest.n_nodes)
    for t in range(forest.n_trees):
        lt = leaves[:, t]
        srt = np.lexsort((y, lt))
        ls, ys = lt[srt], y[srt]
        starts = np.flatnonzero(np.r_[True, ls[1:] != ls[:-1]])
        ends = np.r_[starts[1:], ls.size]
        lo = starts + (ends - starts - 1) // 2
        hi = starts + (ends - starts) // 2
        value[ls[starts]] = 0.5 * (ys[lo] + ys[hi])
    return _with_values(forest, value)


def _with_values(forest: Forest, value: np.ndarray) -> Forest:
    return Forest(forest.feature, forest.threshold, forest.left, forest.right, value,
                  forest.roots, forest.mode, forest.n_features, forest.seed)
