"""Two-part (hurdle) predictor of the marginal AP gain of a candidate.

``G_hat = P(gain > 0) * E[gain | gain > 0]``, with both factors given by
extra-trees forests over the 61-dim state vector.
"""
from __future__ import annotations

import gzip
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DataError, FeatureLayoutError, FormatVersionError, ModelFormatError
from .features import LAYOUT_VERSION, N_STATE, StateFeatures
from .forest import MEAN_PROB, MEDIAN_LEAF, Forest, constant_forest, fit_classifier, fit_regressor

FORMAT_VERSION = 1
N_CLS_TREES = 500
N_REG_TREES = 800


@dataclass(frozen=True)
class TwoPartGainModel:
    cls: Forest
    reg: Forest
    family_risk: dict = field(default_factory=dict)
    family_counts: dict = field(default_factory=dict)
    family_mode: str = "fine"
    meta_perf: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    feature_layout_version: int = LAYOUT_VERSION

    def predict_gains(self, X) -> np.ndarray:
        """Predicted gains of a batch of state vectors (rows x 61)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != N_STATE:
            raise FeatureLayoutError(f"state vectors must have {N_STATE} entries, got {X.shape[1]}")
        return self.cls.predict(X) * self.reg.predict(X)

    def predict_gain(self, state: StateFeatures | np.ndarray) -> float:
        if isinstance(state, StateFeatures):
            if state.layout_version != self.feature_layout_version:
                raise FeatureLayoutError(f"state layout v{state.layout_version} does not match model "
                                         f"layout v{self.feature_layout_version}")
            state = state.vector
        return float(self.predict_gains(state)[0])

    def risk(self, family: str) -> float:
        return float(self.family_risk.get(family, 0.0))

    # -- persistence --------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "feature_layout_version": self.feature_layout_version,
            "config": self.config,
            "family_mode": self.family_mode,
            "family_risk": {k: float(v) for k, v in sorted(self.family_risk.items())},
            "family_counts": {k: int(v) for k, v in sorted(self.family_counts.items())},
            "meta_perf": {k: float(v) for k, v in sorted(self.meta_perf.items())},
            "cls": self.cls.to_dict(),
            "reg": self.reg.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TwoPartGainModel":
        layout = doc.get("feature_layout_version")
        if layout != LAYOUT_VERSION:
            raise FeatureLayoutError(f"model uses feature layout v{layout}, this build expects v{LAYOUT_VERSION}")
        try:
            model = cls(
                cls=Forest.from_dict(doc["cls"]),
                reg=Forest.from_dict(doc["reg"]),
                family_risk={k: float(v) for k, v in doc["family_risk"].items()},
                family_counts={k: int(v) for k, v in doc.get("family_counts", {}).items()},
                family_mode=doc.get("family_mode", "fine"),
                meta_perf={k: float(v) for k, v in doc.get("meta_perf", {}).items()},
                config=dict(doc.get("config", {})),
                feature_layout_version=layout,
            )
        except (KeyError, AttributeError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from None
        if any(v < 0 or not math.isfinite(v) for v in model.family_risk.values()):
            raise ModelFormatError("family risk values must be finite and non-negative")
        return model


def _canonical(doc: dict) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _is_gzip(path: Path) -> bool:
    return path.suffix == ".gz"


def save_model(model: TwoPartGainModel, path) -> Path:
    """Write ``model`` as one JSON document with a CRC-32 of its content.

    Paths ending in ``.gz`` are gzip-compressed (with a zero mtime so the
    bytes stay reproducible).
    """
    path = Path(path)
    doc = model.to_dict()
    body = _canonical(doc)
    doc["crc32"] = f"{zlib.crc32(body):08x}"
    data = _canonical(doc) + b"\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_gzip(path):
        data = gzip.compress(data, compresslevel=6, mtime=0)
    path.write_bytes(data)
    return path


def load_model(path) -> TwoPartGainModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file {path} does not exist")
    data = path.read_bytes()
    if _is_gzip(path):
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as exc:
            raise ChecksumError(f"{path}: corrupt compressed model ({exc})") from None
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError(f"{path}: model file is truncated or corrupt") from None
    if not isinstance(doc, dict):
        raise ChecksumError(f"{path}: model file is not a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: model format version {version!r} is not supported "
                                 f"(expected {FORMAT_VERSION})")
    stored = doc.pop("crc32", None)
    actual = f"{zlib.crc32(_canonical(doc)):08x}"
    if stored != actual:
        raise ChecksumError(f"{path}: checksum mismatch (stored {stored}, computed {actual})")
    return TwoPartGainModel.from_dict(doc)


def train_two_part(X, gains, seed: int = 0, n_cls_trees: int = N_CLS_TREES,
                   n_reg_trees: int = N_REG_TREES) -> tuple[Forest, Forest]:
    """Fit the improvement classifier and the positive-gain regressor.

    Degenerate sample sets fall back to constant forests: no positive gains
    gives a zero classifier, no non-positive gains a one classifier.
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, N_STATE)
    g = np.asarray(gains, dtype=np.float64)
    if X.shape[0] != g.size:
        raise DataError("one gain per state vector required")
    pos = g > 0
    if pos.all() or not pos.any():
        cls = constant_forest(1.0 if g.size and pos.all() else 0.0, N_STATE, MEAN_PROB, seed)
    else:
        cls = fit_classifier(X, pos, n_cls_trees, seed)
    if pos.any():
        reg = fit_regressor(X[pos], g[pos], n_reg_trees, seed + 1)
    else:
        reg = constant_forest(0.0, N_STATE, MEDIAN_LEAF, seed + 1)
    return cls, reg
