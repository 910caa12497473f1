from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from metaens.cache import CACHE_ENV, cache_scores, compute_scores, default_cache_dir, get_scores, load_cached
from metaens.data import Dataset, preprocess
from metaens.detectors import build_pool
from metaens.errors import MissingCacheError, StaleCacheError


@pytest.fixture(scope="module")
def pool(small_grid):
    return build_pool(small_grid)


def test_columns_normalized(toy_dataset, pool):
    sm = compute_scores(toy_dataset, pool)
    assert sm.scores.shape == (toy_dataset.n, len(pool))
    assert (sm.scores.min(0) == 0).all() and (sm.scores.max(0) == 1).all()
    assert sm.model_ids == pool.ids
    # normalization keeps each member's ranking (ties excepted)
    for j in range(len(pool)):
        raw = sm.raw_scores[:, j]
        assert (np.diff(sm.scores[np.argsort(raw, kind="stable"), j]) >= 0).all()


def test_round_trip_bit_exact(tmp_path, toy_dataset, pool):
    sm = cache_scores(toy_dataset, pool, tmp_path)
    back = load_cached(tmp_path, toy_dataset.id, toy_dataset, pool)
    assert back.scores.tobytes() == sm.scores.tobytes()
    assert back.model_ids == sm.model_ids
    assert back.dataset_fingerprint == sm.dataset_fingerprint


def test_missing_and_stale(tmp_path, toy_dataset, pool):
    with pytest.raises(MissingCacheError):
        load_cached(tmp_path, toy_dataset.id)
    cache_scores(toy_dataset, pool, tmp_path)
    X = np.array(toy_dataset.features)
    X[0, 0] += 1.0
    changed = Dataset(toy_dataset.id, X, toy_dataset.labels)
    with pytest.raises(StaleCacheError, match="fingerprint"):
        load_cached(tmp_path, toy_dataset.id, changed)
    with pytest.raises(StaleCacheError, match="pool"):
        load_cached(tmp_path, toy_dataset.id, pool=pool.subsample(3, 0))


def test_get_scores_rebuilds_stale(tmp_path, toy_dataset, pool):
    first = get_scores(toy_dataset, pool, tmp_path)
    sub = pool.subsample(4, 1)
    second = get_scores(toy_dataset, sub, tmp_path)
    assert second.model_ids == sub.ids
    np.testing.assert_array_equal(second.scores, first.subset(sub.ids).scores)


def test_fingerprint_uses_preprocessed_features(tmp_path, toy_dataset, pool):
    cache_scores(toy_dataset, pool, tmp_path)
    # raw or already-preprocessed input both validate against the manifest
    load_cached(tmp_path, toy_dataset.id, preprocess(toy_dataset))
    load_cached(tmp_path, toy_dataset.id, toy_dataset)


def test_concurrent_writers_leave_a_valid_cache(tmp_path, toy_dataset, pool):
    with ThreadPoolExecutor(4) as ex:
        list(ex.map(lambda _: cache_scores(toy_dataset, pool, tmp_path), range(4)))
    load_cached(tmp_path, toy_dataset.id, toy_dataset, pool)
    assert not list(tmp_path.glob("*.tmp"))


def test_default_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path))
    assert default_cache_dir() == tmp_path
    monkeypatch.delenv(CACHE_ENV)
    assert default_cache_dir().name == ".metaens_cache"
