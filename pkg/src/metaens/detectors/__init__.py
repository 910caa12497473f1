"""Candidate detector pool with a uniform fit-and-score interface."""
from __future__ import annotations

from typing import Mapping

import numpy as np
from sklearn.ensemble import IsolationForest

from ..data import Dataset
from ..errors import DetectorError
from .histograms import hbos_scores, loda_scores
from .neighbors import NeighborIndex, abod_scores, cof_scores, knn_scores, lof_scores
from .pool import (COARSE_FAMILIES, COARSE_FAMILY, FAMILIES, FAMILY_MODES, DetectorSpec, ModelPool,
                   build_pool, default_pool_config, family_of, load_pool_config)

__all__ = [
    "COARSE_FAMILIES", "COARSE_FAMILY", "FAMILIES", "FAMILY_MODES", "DetectorSpec", "ModelPool",
    "NeighborIndex", "build_pool", "default_pool_config", "family_of", "fit_score", "load_pool_config",
    "score_pool",
]

_NEIGHBOR_FAMILIES = {"KNN", "LOF", "ABOD", "COF"}


def _metric(spec: DetectorSpec) -> str:
    return spec.param_dict.get("metric", "euclidean")


def iforest_scores(X: np.ndarray, trees: int, max_features: float, max_samples: int, seed: int):
    forest = IsolationForest(n_estimators=trees, max_samples=min(max_samples, X.shape[0]),
                             max_features=max_features, random_state=seed)
    forest.fit(X)
    # score_samples returns the negated anomaly score 2^(-E[h(x)] / c(psi))
    return -forest.score_samples(X)


def fit_score(spec: DetectorSpec, ds: Dataset, index: NeighborIndex | None = None) -> np.ndarray:
    """Raw outlier scores of ``spec`` on ``ds`` (larger = more anomalous).

    ``index`` lets neighbor-based families share one brute-force neighbor
    search; it must have been built on ``ds.features`` with the right metric.
    """
    X = ds.features
    if np.isnan(X).any():
        raise DetectorError(f"{ds.id}: features contain NaN; preprocess the dataset first")
    p = spec.param_dict
    fam = spec.family
    if fam in _NEIGHBOR_FAMILIES:
        k = p["k"]
        if k >= ds.n:
            raise DetectorError(f"{spec.id}: k={k} must be smaller than N={ds.n}")
        if index is None or index.k_max < k or index.metric != {"manhattan": "cityblock"}.get(
                _metric(spec), _metric(spec)):
            index = NeighborIndex(X, k, _metric(spec))
        if fam == "KNN":
            s = knn_scores(index, k, p["method"])
        elif fam == "LOF":
            s = lof_scores(index, k)
        elif fam == "ABOD":
            s = abod_scores(index, k)
        else:
            s = cof_scores(index, k)
    elif fam == "HBOS":
        s = hbos_scores(X, p["bins"], p["tolerance"])
    elif fam == "LODA":
        s = loda_scores(X, p["proj"], p["bins"], spec.seed)
    elif fam == "IFOREST":
        s = iforest_scores(X, p["trees"], p["max_features"], p["max_samples"], spec.seed)
    elif fam == "OCSVM":
        raise DetectorError(f"{spec.id}: OCSVM is not built in; supply its scores as an external column")
    else:  # pragma: no cover
        raise DetectorError(f"unknown family {fam!r}")
    s = np.asarray(s, dtype=np.float64)
    if not np.isfinite(s).all():
        raise DetectorError(f"{spec.id}: produced non-finite scores on {ds.id}")
    return s


def score_pool(ds: Dataset, pool: ModelPool, external: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """Raw N x K score matrix for every pool member, columns in pool order.

    Neighbor searches are shared per metric. ``external`` supplies raw score
    vectors for members that are not built in (e.g. OCSVM).
    """
    external = dict(external or {})
    k_by_metric: dict[str, int] = {}
    for spec in pool:
        if spec.family in _NEIGHBOR_FAMILIES and spec.id not in external:
            m = _metric(spec)
            k_by_metric[m] = max(k_by_metric.get(m, 0), spec["k"])
    for m, k in k_by_metric.items():
        if k >= ds.n:
            raise DetectorError(f"{ds.id}: neighbor parameter k={k} requires N > {k}, got N={ds.n}")
    indices = {m: NeighborIndex(ds.features, k, m) for m, k in k_by_metric.items()}
    cols = []
    for spec in pool:
        if spec.id in external:
            s = np.asarray(external[spec.id], dtype=np.float64)
            if s.shape != (ds.n,) or not np.isfinite(s).all():
                raise DetectorError(f"{spec.id}: external scores must be {ds.n} finite values")
        else:
            s = fit_score(spec, ds, indices.get(_metric(spec)))
        cols.append(s)
    return np.column_stack(cols)
