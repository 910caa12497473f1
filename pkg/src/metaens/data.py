"""Datasets, preprocessing, score normalization and synthetic benchmarks."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DataError, ParseError, UsageError
from .seeding import fnv1a64, make_rng

LOCAL_INFLATION = 5.0
_MISSING_TOKENS = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class Dataset:
    """An N x d numeric feature matrix with optional binary anomaly labels.

    ``features`` may contain NaN for missing cells until :func:`preprocess`
    has been applied. ``labels`` use 1 for anomalies.
    """

    id: str
    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    preprocessed: bool = False

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, order="C")
        if X.ndim != 2:
            raise DataError(f"{self.id}: features must be a 2-D matrix")
        if X.shape[0] < 2:
            raise DataError(f"{self.id}: need at least 2 rows, got {X.shape[0]}")
        if X.shape[1] < 1:
            raise DataError(f"{self.id}: need at least 1 feature column")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (X.shape[0],):
                raise DataError(f"{self.id}: labels length {y.shape} does not match {X.shape[0]} rows")
            if not np.isin(y, (0, 1)).all():
                raise DataError(f"{self.id}: labels must be 0/1")
            y = y.astype(np.int8)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
        if not self.feature_names:
            names = tuple(f"x{j}" for j in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_anomalies(self) -> int:
        return 0 if self.labels is None else int(self.labels.sum())

    def require_labels(self) -> np.ndarray:
        """Labels checked to contain both classes."""
        if self.labels is None:
            raise DataError(f"{self.id}: dataset is unlabeled")
        n_pos = int(self.labels.sum())
        if n_pos == 0 or n_pos == self.n:
            raise DataError(f"{self.id}: labels must contain both anomalies and inliers")
        return self.labels


@dataclass(frozen=True)
class ScoreMatrix:
    """Normalized outlier scores of every pool member on one dataset.

    Column ``j`` of ``scores`` belongs to ``model_ids[j]``.
    """

    dataset_id: str
    model_ids: tuple[str, ...]
    scores: np.ndarray
    dataset_fingerprint: int
    raw_scores: np.ndarray | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        S = np.array(self.scores, dtype=np.float64, order="F")
        ids = tuple(self.model_ids)
        if S.ndim != 2 or S.shape[1] != len(ids):
            raise DataError(f"{self.dataset_id}: score matrix shape {S.shape} does not match {len(ids)} model ids")
        if len(set(ids)) != len(ids):
            raise DataError(f"{self.dataset_id}: duplicate model ids in score matrix")
        S.setflags(write=False)
        object.__setattr__(self, "scores", S)
        object.__setattr__(self, "model_ids", ids)
        object.__setattr__(self, "_index", {m: j for j, m in enumerate(ids)})

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def index_of(self, model_id: str) -> int:
        try:
            return self._index[model_id]
        except KeyError:
            raise DataError(f"{self.dataset_id}: model {model_id!r} not in score matrix") from None

    def column(self, model_id: str) -> np.ndarray:
        return self.scores[:, self.index_of(model_id)]

    def __contains__(self, model_id) -> bool:
        return model_id in self._index

    def subset(self, model_ids) -> "ScoreMatrix":
        cols = [self.index_of(m) for m in model_ids]
        raw = None if self.raw_scores is None else self.raw_scores[:, cols]
        return ScoreMatrix(self.dataset_id, tuple(model_ids), self.scores[:, cols],
                           self.dataset_fingerprint, raw)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic benchmark dataset."""

    n_inliers: int
    n_anomaly_global: int
    n_anomaly_local: int
    d: int
    n_clusters: int = 2
    seed: int = 0

    @property
    def n_total(self) -> int:
        return self.n_inliers + self.n_anomaly_global + self.n_anomaly_local

    @property
    def contamination(self) -> float:
        return (self.n_anomaly_global + self.n_anomaly_local) / self.n_total

    def validate(self):
        if min(self.n_inliers, self.d, self.n_clusters) < 1:
            raise UsageError("n_inliers, d and n_clusters must be positive")
        if min(self.n_anomaly_global, self.n_anomaly_local) < 0:
            raise UsageError("anomaly counts must be non-negative")
        if not 0.0 < self.contamination < 0.5:
            raise UsageError(f"contamination {self.contamination:.3f} must lie in (0, 0.5)")
        if self.n_clusters > self.n_inliers:
            raise UsageError("more clusters than inliers")


# -- ingestion ---------------------------------------------------------------

def load_dataset(path, label_column: str | None = None, dataset_id: str | None = None) -> Dataset:
    """Read a CSV file (header row, '.' decimals) into a :class:`Dataset`.

    Empty cells and common NA tokens become NaN and are imputed later by
    :func:`preprocess`.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if label_column is not None and label_column not in header:
        raise ParseError(f"{path}: label column {label_column!r} not found in header")
    label_idx = header.index(label_column) if label_column is not None else None

    X = np.empty((len(body), len(header) - (label_idx is not None)), dtype=np.float64)
    y = np.empty(len(body), dtype=np.int8) if label_idx is not None else None
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != len(header):
            raise ParseError(f"{path}: row {line} has {len(row)} cells, header has {len(header)}")
        out = 0
        for c, cell in enumerate(row):
            token = cell.strip()
            if c == label_idx:
                try:
                    value = float(token)
                except ValueError:
                    value = math.nan
                if value not in (0.0, 1.0):
                    raise ParseError(f"{path}: row {line}, column {header[c]!r}: label {token!r} is not 0/1")
                y[r] = int(value)
                continue
            if token.lower() in _MISSING_TOKENS:
                X[r, out] = math.nan
            else:
                try:
                    X[r, out] = float(token)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {line}, column {header[c]!r}: non-numeric value {token!r}") from None
                if not math.isfinite(X[r, out]):
                    raise ParseError(f"{path}: row {line}, column {header[c]!r}: non-finite value {token!r}")
            out += 1
    if len(body) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, got {len(body)}")
    names = tuple(h for c, h in enumerate(header) if c != label_idx)
    return Dataset(dataset_id or path.stem, X, y, names)


def write_dataset(ds: Dataset, path, label_column: str = "label"):
    """Write a dataset as CSV with 17 significant digits per cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(ds.feature_names)
        if ds.labels is not None:
            header.append(label_column)
        w.writerow(header)
        for i in range(ds.n):
            row = [format(v, ".17g") for v in ds.features[i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            w.writerow(row)


# -- preprocessing -------------------------------------------------------------

def preprocess(ds: Dataset, missing_indicators: bool = False) -> Dataset:
    """Median imputation followed by robust scaling ``(x - median) / IQR``.

    Quartiles use linear interpolation between closest ranks. Columns with
    zero IQR become all-zero. With ``missing_indicators`` a 0/1 column is
    appended for every feature that had missing cells.
    """
    X = np.array(ds.features, dtype=np.float64)
    missing = np.isnan(X)
    names = list(ds.feature_names)
    indicators = []
    for j in range(X.shape[1]):
        col = X[:, j]
        if missing[:, j].any():
            observed = col[~missing[:, j]]
            col[missing[:, j]] = np.median(observed) if observed.size else 0.0
            if missing_indicators:
                indicators.append((f"{names[j]}_missing", missing[:, j].astype(np.float64)))
        med = np.median(col)
        q1, q3 = np.percentile(col, [25.0, 75.0], method="linear")
        iqr = q3 - q1
        X[:, j] = (col - med) / iqr if iqr > 0 else 0.0
    if indicators:
        X = np.column_stack([X] + [v for _, v in indicators])
        names += [n for n, _ in indicators]
    return replace(ds, features=X, feature_names=tuple(names), preprocessed=True)


def fingerprint(features: np.ndarray) -> int:
    """FNV-1a over the row-major little-endian float64 image of ``features``."""
    image = np.ascontiguousarray(features, dtype="<f8").tobytes()
    return fnv1a64(image)


def normalize_scores(raw) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant vector maps to 0.5 everywhere."""
    s = np.asarray(raw, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise DataError("scores must be a non-empty 1-D vector")
    if not np.isfinite(s).all():
        raise DataError("scores contain non-finite values")
    lo, hi = s.min(), s.max()
    if hi == lo:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


# -- synthetic benchmark -----------------------------------------------------------

def generate_synthetic(spec: SynthSpec, dataset_id: str | None = None) -> Dataset:
    """Gaussian-blob inliers plus global and local anomalies.

    Global anomalies are uniform over the inlier bounding box inflated by
    50% per side, rejected when they fall inside any cluster's 99.9% ellipsoid.
    Local anomalies come from a cluster's Gaussian with its covariance
    inflated ``LOCAL_INFLATION``-fold, so many of them overlap the cluster
    edge and some hide inside it. Output rows
    are shuffled; generation is a pure function of ``spec``.
    """
    spec.validate()
    rng = make_rng(spec.seed)
    d, k = spec.d, spec.n_clusters
    centers = rng.uniform(-6.0, 6.0, size=(k, d))
    scales = rng.uniform(0.5, 1.5, size=(k, d))
    sizes = np.full(k, spec.n_inliers // k)
    sizes[: spec.n_inliers % k] += 1
    inliers = np.concatenate([centers[c] + scales[c] * rng.standard_normal((sizes[c], d))
                              for c in range(k)])
    edge = math.sqrt(stats.chi2.ppf(0.999, d))

    def inside_any(p):
        return any(np.linalg.norm((p - centers[c]) / scales[c]) <= edge for c in range(k))

    lo, hi = inliers.min(axis=0), inliers.max(axis=0)
    span = hi - lo
    glob = []
    attempts = 0
    while len(glob) < spec.n_anomaly_global:
        p = rng.uniform(lo - 0.5 * span, hi + 0.5 * span)
        attempts += 1
        if not inside_any(p) or attempts > 1000 * (spec.n_anomaly_global + 1):
            glob.append(p)
    # local anomalies: a cluster's own Gaussian with inflated covariance
    local = []
    for _ in range(spec.n_anomaly_local):
        c = int(rng.integers(k))
        local.append(centers[c] + LOCAL_INFLATION ** 0.5 * scales[c] * rng.standard_normal(d))

    parts = [inliers] + [np.array(g).reshape(-1, d) for g in (glob, local) if g]
    X = np.concatenate(parts)
    y = np.concatenate([np.zeros(spec.n_inliers, np.int8),
                        np.ones(spec.n_anomaly_global + spec.n_anomaly_local, np.int8)])
    order = rng.permutation(X.shape[0])
    return Dataset(dataset_id or f"synth_{spec.seed}", X[order], y[order])


def synthetic_corpus(n_datasets: int, seed: int, n_inliers=(200, 320), contamination=(0.03, 0.12),
                     d=(2, 8), clusters=(1, 4), prefix="synth") -> list[Dataset]:
    """A family of synthetic datasets with varied shape and anomaly mix.

    Ranges are inclusive ``(low, high)`` pairs; each dataset draws its own
    spec from a stream seeded by ``seed``.
    """
    rng = make_rng(seed)
    out = []
    for i in range(n_datasets):
        n_in = int(rng.integers(n_inliers[0], n_inliers[1] + 1))
        n_anom = max(2, round(n_in * rng.uniform(*contamination) / (1 - contamination[1])))
        local_frac = rng.uniform(0.2, 0.8)
        n_local = int(round(n_anom * local_frac))
        spec = SynthSpec(
            n_inliers=n_in,
            n_anomaly_global=n_anom - n_local,
            n_anomaly_local=n_local,
            d=int(rng.integers(d[0], d[1] + 1)),
            n_clusters=int(rng.integers(clusters[0], clusters[1] + 1)),
            seed=int(rng.integers(2**31)),
        )
        out.append(generate_synthetic(spec, dataset_id=f"{prefix}_{seed}_{i:03d}"))
    return out
