import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metaens.data import ScoreMatrix, SynthSpec, generate_synthetic  # noqa: E402
from metaens.detectors import DetectorSpec, ModelPool  # noqa: E402

SMALL_GRID = {
    "seed": 42,
    "knn": {"k": [3, 8], "method": ["largest", "mean"]},
    "lof": {"k": [5, 10], "metric": ["euclidean"]},
    "hbos": {"bins": [8], "tolerance": [0.5]},
    "iforest": {"trees": [30], "max_features": [1.0], "max_samples": [64]},
    "loda": {"proj": [20], "bins": [10]},
    "abod": {"k": [6]},
    "cof": {"k": [6]},
}


@pytest.fixture(scope="session")
def small_grid():
    return SMALL_GRID


@pytest.fixture(scope="session")
def toy_dataset():
    return generate_synthetic(SynthSpec(80, 4, 4, 3, 2, seed=11), "toy")


def synthetic_pool(n_models: int, family_cycle=("KNN", "LOF", "HBOS")) -> ModelPool:
    specs = []
    for i in range(n_models):
        fam = family_cycle[i % len(family_cycle)]
        if fam == "KNN":
            specs.append(DetectorSpec.make("KNN", k=i + 1))
        elif fam == "LOF":
            specs.append(DetectorSpec.make("LOF", k=i + 1))
        elif fam == "HBOS":
            specs.append(DetectorSpec.make("HBOS", bins=i + 2))
        elif fam == "ABOD":
            specs.append(DetectorSpec.make("ABOD", k=i + 2))
        else:
            specs.append(DetectorSpec.make(fam))
    return ModelPool(tuple(specs))


def matrix_from_columns(pool: ModelPool, cols, dataset_id="m") -> ScoreMatrix:
    S = np.column_stack(cols)
    return ScoreMatrix(dataset_id, pool.ids, S, 0)


def random_problem(rng, n=None, k=None, discrete=False):
    """A random labeled score matrix over a synthetic pool."""
    n = n or int(rng.integers(8, 41))
    k = k or int(rng.integers(2, 7))
    y = np.zeros(n, dtype=np.int8)
    n_pos = int(rng.integers(1, max(2, n // 3)))
    y[rng.choice(n, n_pos, replace=False)] = 1
    pool = synthetic_pool(k)
    cols = []
    for _ in range(k):
        if discrete:
            c = rng.integers(0, 5, n) / 4.0
        else:
            c = rng.random(n) + 0.6 * rng.random() * y
            c = (c - c.min()) / (c.max() - c.min())
        cols.append(c)
    return pool, matrix_from_columns(pool, cols), y
