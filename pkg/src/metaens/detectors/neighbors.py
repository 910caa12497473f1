"""Exact neighbor-based detectors: kNN, LOF, fast ABOD and COF.

All of them work from a :class:`NeighborIndex`, the k smallest distances of
every point to the other points (self excluded). Distance ties are broken
by ascending point index.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import DetectorError

# keeps reachability densities finite on duplicated points
LRD_EPS = 1e-10
_CHUNK = 512


class NeighborIndex:
    """Sorted k-nearest-neighbor lists computed by brute force."""

    def __init__(self, X: np.ndarray, k_max: int, metric: str = "euclidean"):
        n = X.shape[0]
        if k_max >= n:
            raise DetectorError(f"k={k_max} requires more than {k_max} points, dataset has {n}")
        metric = {"manhattan": "cityblock"}.get(metric, metric)
        self.X = X
        self.k_max = k_max
        self.metric = metric
        self.indices = np.empty((n, k_max), dtype=np.intp)
        self.distances = np.empty((n, k_max))
        for start in range(0, n, _CHUNK):
            rows = np.arange(start, min(start + _CHUNK, n))
            D = cdist(X[rows], X, metric=metric)
            D[np.arange(rows.size), rows] = np.inf
            order = np.argsort(D, axis=1, kind="stable")[:, :k_max]
            self.indices[rows] = order
            self.distances[rows] = np.take_along_axis(D, order, axis=1)

    def neighbors(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k > self.k_max:
            raise DetectorError(f"index built for k <= {self.k_max}, asked for {k}")
        return self.indices[:, :k], self.distances[:, :k]


def knn_scores(index: NeighborIndex, k: int, method: str = "largest") -> np.ndarray:
    _, dist = index.neighbors(k)
    if method == "largest":
        return dist[:, -1].copy()
    if method == "mean":
        return dist.mean(axis=1)
    if method == "median":
        return np.median(dist, axis=1)
    raise DetectorError(f"unknown kNN method {method!r}")


def lof_scores(index: NeighborIndex, k: int) -> np.ndarray:
    """Local outlier factor with exactly ``k`` neighbors per point."""
    nbr, dist = index.neighbors(k)
    k_distance = dist[:, -1]
    reach = np.maximum(dist, k_distance[nbr])
    lrd = 1.0 / (reach.mean(axis=1) + LRD_EPS)
    return lrd[nbr].mean(axis=1) / lrd


def abod_scores(index: NeighborIndex, k: int) -> np.ndarray:
    """Fast angle-based outlier score, negated so larger is more anomalous.

    For each point p, the variance over neighbor pairs (a, b) of
    ``<a-p, b-p> / (|a-p|^2 |b-p|^2)``. Neighbors coinciding with p are
    dropped; points left with fewer than two neighbors get the least
    anomalous score observed.
    """
    X = index.X
    nbr, _ = index.neighbors(k)
    n = X.shape[0]
    iu = np.triu_indices(k, 1)
    out = np.empty(n)
    step = max(1, _CHUNK * 64 // max(k * k, 1))
    for start in range(0, n, step):
        rows = np.arange(start, min(start + step, n))
        diff = X[nbr[rows]] - X[rows, None, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        gram = np.einsum("nkd,njd->nkj", diff, diff)
        valid = sq > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = gram / (sq[:, :, None] * sq[:, None, :])
        pair_ok = (valid[:, :, None] & valid[:, None, :])[:, iu[0], iu[1]]
        vals = w[:, iu[0], iu[1]]
        for r, i in enumerate(rows):
            v = vals[r, pair_ok[r]]
            out[i] = -np.var(v) if v.size >= 1 else np.nan
    if np.isnan(out).any():
        fill = np.nanmin(out) if (~np.isnan(out)).any() else 0.0
        out[np.isnan(out)] = fill
    return out


def cof_scores(index: NeighborIndex, k: int) -> np.ndarray:
    """Connectivity-based outlier factor with set-based nearest chaining.

    The chain of point p visits its k neighbors in distance order; the cost of
    the j-th edge is the smallest distance from the j-th neighbor to any point
    already on the chain. The average chaining distance weights edge j by
    ``2 (k + 1 - j) / (k (k + 1))``.
    """
    X = index.X
    nbr, _ = index.neighbors(k)
    n = X.shape[0]
    weights = 2.0 * (k - np.arange(k)) / (k * (k + 1))
    below = np.tril(np.ones((k, k + 1), dtype=bool))
    ac_dist = np.empty(n)
    for i in range(n):
        path = np.concatenate(([i], nbr[i]))
        D = cdist(X[path[1:]], X[path], metric="euclidean")
        cost = np.where(below, D, np.inf).min(axis=1)
        ac_dist[i] = weights @ cost
    denom = ac_dist[nbr].sum(axis=1)
    return k * ac_dist / (denom + LRD_EPS)
