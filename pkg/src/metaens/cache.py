"""On-disk cache of per-dataset normalized score matrices.

Each dataset gets ``<id>.scores.csv`` (header = model ids, one row per
instance) and ``<id>.manifest.json`` recording the dataset fingerprint and
the pool hash. Writers serialize on an advisory lock file in the directory.
"""
from __future__ import annotations

import csv
import json
import os
import time
from pathlib import Path

import numpy as np
from filelock import FileLock

from .data import Dataset, ScoreMatrix, fingerprint, normalize_scores, preprocess
from .detectors import ModelPool, score_pool
from .errors import DataError, MissingCacheError, StaleCacheError

CACHE_ENV = "METAENS_CACHE_DIR"
LOCK_NAME = ".metaens.lock"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, ".metaens_cache"))


def _paths(directory: Path, dataset_id: str) -> tuple[Path, Path]:
    return directory / f"{dataset_id}.scores.csv", directory / f"{dataset_id}.manifest.json"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def compute_scores(ds: Dataset, pool: ModelPool, external=None) -> ScoreMatrix:
    """Fit every pool member on ``ds`` and normalize its scores column-wise."""
    if len(pool) == 0:
        raise DataError("pool is empty")
    if not ds.preprocessed:
        ds = preprocess(ds)
    raw = score_pool(ds, pool, external)
    norm = np.column_stack([normalize_scores(raw[:, j]) for j in range(raw.shape[1])])
    return ScoreMatrix(ds.id, pool.ids, norm, fingerprint(ds.features), raw)


def write_cache(sm: ScoreMatrix, directory, pool_hash: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    scores_path, manifest_path = _paths(directory, sm.dataset_id)
    manifest = {
        "dataset_id": sm.dataset_id,
        "fingerprint": f"{sm.dataset_fingerprint:016x}",
        "model_ids": list(sm.model_ids),
        "pool_hash": f"{pool_hash:016x}",
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with FileLock(str(directory / LOCK_NAME)):
        tmp = scores_path.with_suffix(".csv.tmp")
        with tmp.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(sm.model_ids)
            for row in sm.scores:
                writer.writerow([_fmt(v) for v in row])
        os.replace(tmp, scores_path)
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def cache_scores(ds: Dataset, pool: ModelPool, directory, external=None) -> ScoreMatrix:
    """Compute the score matrix of ``ds`` and write it to ``directory``."""
    sm = compute_scores(ds, pool, external)
    write_cache(sm, directory, pool.pool_hash)
    return sm


def load_cached(directory, dataset_id: str, dataset: Dataset | None = None,
                pool: ModelPool | None = None) -> ScoreMatrix:
    """Read a cached score matrix.

    When ``dataset`` is given its (preprocessed) fingerprint must match the
    manifest; when ``pool`` is given its hash and ids must match too.
    """
    directory = Path(directory)
    scores_path, manifest_path = _paths(directory, dataset_id)
    if not scores_path.exists() or not manifest_path.exists():
        raise MissingCacheError(f"no cached scores for {dataset_id!r} in {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    fp = int(manifest["fingerprint"], 16)
    if dataset is not None:
        current = fingerprint((dataset if dataset.preprocessed else preprocess(dataset)).features)
        if current != fp:
            raise StaleCacheError(f"{dataset_id}: dataset fingerprint {current:016x} does not match "
                                  f"cached {fp:016x}")
    if pool is not None:
        if int(manifest["pool_hash"], 16) != pool.pool_hash or tuple(manifest["model_ids"]) != pool.ids:
            raise StaleCacheError(f"{dataset_id}: cached scores were built for a different pool")
    with scores_path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = tuple(rows[0]), rows[1:]
    if header != tuple(manifest["model_ids"]):
        raise StaleCacheError(f"{dataset_id}: score header disagrees with manifest")
    try:
        S = np.array([[float(v) for v in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{scores_path}: corrupt score cache ({exc})") from None
    if S.shape != (len(body), len(header)):
        raise DataError(f"{scores_path}: ragged score cache")
    return ScoreMatrix(dataset_id, header, S, fp)


def get_scores(ds: Dataset, pool: ModelPool, directory=None, external=None) -> ScoreMatrix:
    """Cached score matrix of ``ds``, rebuilt when missing or stale."""
    directory = default_cache_dir() if directory is None else Path(directory)
    try:
        return load_cached(directory, ds.id, ds, pool)
    except (MissingCacheError, StaleCacheError):
        return cache_scores(ds, pool, directory, external)
