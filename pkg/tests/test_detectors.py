import math

import numpy as np
import pytest
from sklearn.neighbors import LocalOutlierFactor, NearestNeighbors

from metaens.data import Dataset, preprocess
from metaens.detectors import (COARSE_FAMILY, DetectorSpec, ModelPool, NeighborIndex, build_pool, family_of,
                               fit_score, score_pool)
from metaens.detectors.histograms import hbos_scores, loda_scores
from metaens.detectors.neighbors import abod_scores, cof_scores, knn_scores, lof_scores
from metaens.errors import DetectorError, UsageError


@pytest.fixture(scope="module")
def X():
    rng = np.random.default_rng(3)
    return np.vstack([rng.normal(size=(60, 3)), rng.normal(4, 0.5, size=(5, 3))])


def test_knn_matches_sklearn(X):
    nn = NearestNeighbors(n_neighbors=8).fit(X)
    dist, _ = nn.kneighbors()
    idx = NeighborIndex(X, 8)
    np.testing.assert_allclose(knn_scores(idx, 8, "largest"), dist[:, -1], rtol=1e-12)
    np.testing.assert_allclose(knn_scores(idx, 8, "mean"), dist.mean(1), rtol=1e-12)
    np.testing.assert_allclose(knn_scores(idx, 8, "median"), np.median(dist, 1), rtol=1e-12)


def test_lof_matches_sklearn(X):
    ref = -LocalOutlierFactor(n_neighbors=10).fit(X).negative_outlier_factor_
    np.testing.assert_allclose(lof_scores(NeighborIndex(X, 10), 10), ref, rtol=1e-9)


def test_manhattan_lof_matches_sklearn(X):
    ref = -LocalOutlierFactor(n_neighbors=6, metric="manhattan").fit(X).negative_outlier_factor_
    np.testing.assert_allclose(lof_scores(NeighborIndex(X, 6, "manhattan"), 6), ref, rtol=1e-9)


def _naive_neighbors(X, k):
    out = []
    for i in range(len(X)):
        d = [(float(np.linalg.norm(X[i] - X[j])), j) for j in range(len(X)) if j != i]
        out.append([j for _, j in sorted(d)[:k]])
    return out


def test_abod_naive_oracle(X):
    k = 6
    nbrs = _naive_neighbors(X, k)
    ref = []
    for i, nb in enumerate(nbrs):
        vals = []
        for a in range(k):
            for b in range(a + 1, k):
                u, v = X[nb[a]] - X[i], X[nb[b]] - X[i]
                vals.append(float(u @ v) / (float(u @ u) * float(v @ v)))
        ref.append(-np.var(vals))
    np.testing.assert_allclose(abod_scores(NeighborIndex(X, k), k), ref, rtol=1e-9)


def test_cof_naive_oracle(X):
    k = 5
    nbrs = _naive_neighbors(X, k)
    ac = []
    for i, nb in enumerate(nbrs):
        chain, total = [i], 0.0
        for j, q in enumerate(nb):
            cost = min(float(np.linalg.norm(X[q] - X[c])) for c in chain)
            total += 2.0 * (k - j) / (k * (k + 1)) * cost
            chain.append(q)
        ac.append(total)
    ref = [k * ac[i] / (sum(ac[q] for q in nbrs[i]) + 1e-10) for i in range(len(X))]
    np.testing.assert_allclose(cof_scores(NeighborIndex(X, k), k), ref, rtol=1e-9)


def test_hbos_naive_oracle(X):
    bins = 7
    ref = np.zeros(len(X))
    for j in range(X.shape[1]):
        lo, hi = X[:, j].min(), X[:, j].max()
        width = (hi - lo) / bins
        counts = [0] * bins
        for v in X[:, j]:
            counts[min(int((v - lo) / width), bins - 1)] += 1
        for i, v in enumerate(X[:, j]):
            dens = counts[min(int((v - lo) / width), bins - 1)] / (len(X) * width)
            ref[i] -= math.log(dens + 1e-12)
    np.testing.assert_allclose(hbos_scores(X, bins), ref, rtol=1e-9)


def test_hbos_out_of_range_tolerance():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    inside = hbos_scores(X, 3, 0.5, np.array([[3.4]]))
    far = hbos_scores(X, 3, 0.5, np.array([[10.0]]))
    edge = hbos_scores(X, 3, 0.5, np.array([[3.0]]))
    assert inside[0] == edge[0]
    assert far[0] == pytest.approx(-math.log(1e-12))


def test_loda_deterministic_and_flags_outlier(X):
    a, b = loda_scores(X, 30, 10, seed=5), loda_scores(X, 30, 10, seed=5)
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, loda_scores(X, 30, 10, seed=6))
    assert a[60:].mean() > a[:60].mean()


def test_neighbor_ties_broken_by_index():
    X = np.array([[0.0], [1.0], [-1.0], [5.0]])
    idx = NeighborIndex(X, 2)
    assert idx.indices[0].tolist() == [1, 2]


def test_default_pool_shape():
    pool = build_pool()
    assert len(pool) == 72
    fams = {}
    for s in pool:
        fams[s.family] = fams.get(s.family, 0) + 1
    assert fams == {"KNN": 15, "LOF": 10, "HBOS": 8, "IFOREST": 9, "LODA": 12, "ABOD": 12, "COF": 6}
    assert len(set(pool.ids)) == 72
    assert build_pool().pool_hash == pool.pool_hash


def test_coarse_mapping():
    assert COARSE_FAMILY["LOF"] == "DensityProximity"
    assert COARSE_FAMILY["IFOREST"] == "IsolationTree"
    assert COARSE_FAMILY["LODA"] == "LinearProbabilistic"
    pool = build_pool(family_mode="coarse")
    assert pool.families() == ("DensityProximity", "IsolationTree", "LinearProbabilistic")
    spec = DetectorSpec.make("ABOD", k=5)
    assert family_of(spec, "coarse") == "LinearProbabilistic" and family_of(spec) == "ABOD"


def test_spec_validation_and_ids():
    s = DetectorSpec.make("knn", k=5, method="mean")
    assert s.id == "knn_k=5_method=mean"
    assert DetectorSpec.make("IFOREST").seed == 42 and DetectorSpec.make("KNN").seed is None
    with pytest.raises(UsageError):
        DetectorSpec.make("KNN", k=0)
    with pytest.raises(UsageError):
        DetectorSpec.make("KNN", depth=3)
    with pytest.raises(UsageError):
        DetectorSpec.make("XGB")
    with pytest.raises(UsageError):
        ModelPool((s, s))


def test_subsample_deterministic():
    pool = build_pool()
    a, b = pool.subsample(10, 7), pool.subsample(10, 7)
    assert a.ids == b.ids and len(a) == 10
    with pytest.raises(UsageError):
        pool.subsample(0, 1)


def test_fit_score_errors(toy_dataset):
    ds = preprocess(toy_dataset)
    with pytest.raises(DetectorError, match="external"):
        fit_score(DetectorSpec.make("OCSVM"), ds)
    with pytest.raises(DetectorError):
        fit_score(DetectorSpec.make("KNN", k=ds.n), ds)
    nan = Dataset("n", np.array([[1.0], [np.nan], [2.0]]))
    with pytest.raises(DetectorError, match="NaN"):
        fit_score(DetectorSpec.make("HBOS"), nan)


def test_score_pool_shared_index_matches_individual(toy_dataset, small_grid):
    ds = preprocess(toy_dataset)
    pool = build_pool(small_grid)
    S = score_pool(ds, pool)
    assert S.shape == (ds.n, len(pool))
    for j, spec in enumerate(pool):
        np.testing.assert_allclose(S[:, j], fit_score(spec, ds), rtol=1e-12)


def test_score_pool_external_column(toy_dataset):
    ds = preprocess(toy_dataset)
    pool = ModelPool((DetectorSpec.make("KNN", k=3), DetectorSpec.make("OCSVM")))
    ext = np.arange(ds.n, dtype=float)
    S = score_pool(ds, pool, {pool.ids[1]: ext})
    assert S[:, 1].tolist() == ext.tolist()
    with pytest.raises(DetectorError):
        score_pool(ds, pool, {pool.ids[1]: ext[:-1]})
