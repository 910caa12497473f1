"""Detector descriptors, the family taxonomy and grid-built model pools."""
from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from ..errors import UsageError
from ..seeding import fnv1a64, make_rng

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

FAMILIES = ("KNN", "LOF", "HBOS", "IFOREST", "LODA", "ABOD", "COF", "OCSVM")
RANDOMIZED = frozenset({"IFOREST", "LODA"})
FAMILY_MODES = ("fine", "coarse")

COARSE_FAMILY = {
    "LOF": "DensityProximity",
    "KNN": "DensityProximity",
    "COF": "DensityProximity",
    "IFOREST": "IsolationTree",
    "HBOS": "LinearProbabilistic",
    "LODA": "LinearProbabilistic",
    "ABOD": "LinearProbabilistic",
    "OCSVM": "LinearProbabilistic",
}
COARSE_FAMILIES = ("DensityProximity", "IsolationTree", "LinearProbabilistic")

DEFAULT_SEED = 42


@dataclass(frozen=True)
class Param:
    name: str
    kind: type
    default: Any
    choices: tuple = ()
    low: float | None = None
    high: float | None = None

    def check(self, family: str, value):
        if self.kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif self.kind is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value)
        else:
            ok = isinstance(value, str)
        if not ok:
            raise UsageError(f"{family}.{self.name}: expected {self.kind.__name__}, got {value!r}")
        if self.choices and value not in self.choices:
            raise UsageError(f"{family}.{self.name}: {value!r} not in {list(self.choices)}")
        if self.low is not None and value < self.low:
            raise UsageError(f"{family}.{self.name}: {value!r} below minimum {self.low}")
        if self.high is not None and value > self.high:
            raise UsageError(f"{family}.{self.name}: {value!r} above maximum {self.high}")
        return value


SCHEMAS: dict[str, tuple[Param, ...]] = {
    "KNN": (Param("k", int, 5, low=1), Param("method", str, "largest", ("largest", "mean", "median"))),
    "LOF": (Param("k", int, 20, low=1), Param("metric", str, "euclidean", ("euclidean", "manhattan"))),
    "HBOS": (Param("bins", int, 10, low=2), Param("tolerance", float, 0.5, low=0.0, high=1.0)),
    "IFOREST": (Param("trees", int, 100, low=1), Param("max_features", float, 1.0, low=1e-9, high=1.0),
                Param("max_samples", int, 256, low=2)),
    "LODA": (Param("proj", int, 100, low=1), Param("bins", int, 10, low=2)),
    "ABOD": (Param("k", int, 10, low=2),),
    "COF": (Param("k", int, 20, low=2),),
    "OCSVM": (Param("kernel", str, "rbf", ("rbf", "linear", "poly", "sigmoid")),
              Param("nu", float, 0.5, low=1e-9, high=1.0)),
}


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class DetectorSpec:
    """One (detector, configuration) candidate.

    ``params`` is ordered as in the family schema, which makes ``id`` a pure
    function of ``(family, params)``.
    """

    family: str
    params: tuple[tuple[str, Any], ...]
    seed: int | None = None

    @classmethod
    def make(cls, family: str, seed: int | None = None, **params) -> "DetectorSpec":
        family = family.upper()
        if family not in SCHEMAS:
            raise UsageError(f"unknown detector family {family!r}; known: {', '.join(FAMILIES)}")
        schema = SCHEMAS[family]
        unknown = set(params) - {p.name for p in schema}
        if unknown:
            raise UsageError(f"{family}: unknown parameter(s) {sorted(unknown)}")
        ordered = tuple((p.name, p.check(family, params.get(p.name, p.default))) for p in schema)
        if family in RANDOMIZED:
            seed = DEFAULT_SEED if seed is None else int(seed)
        else:
            seed = None
        return cls(family, ordered, seed)

    @property
    def id(self) -> str:
        return "_".join([self.family.lower()] + [f"{k}={_fmt(v)}" for k, v in self.params])

    @property
    def param_dict(self) -> dict:
        return dict(self.params)

    def __getitem__(self, name):
        return self.param_dict[name]


def family_of(spec: DetectorSpec, mode: str = "fine") -> str:
    if mode == "fine":
        return spec.family
    if mode == "coarse":
        return COARSE_FAMILY[spec.family]
    raise UsageError(f"unknown family mode {mode!r}; expected one of {FAMILY_MODES}")


@dataclass(frozen=True)
class ModelPool:
    specs: tuple[DetectorSpec, ...]
    family_mode: str = "fine"

    def __post_init__(self):
        if self.family_mode not in FAMILY_MODES:
            raise UsageError(f"unknown family mode {self.family_mode!r}")
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise UsageError("duplicate model ids in pool")
        object.__setattr__(self, "_by_id", {s.id: s for s in self.specs})

    def __len__(self):
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __contains__(self, model_id):
        return model_id in self._by_id

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.specs)

    @property
    def pool_hash(self) -> int:
        """Hash of everything that determines the score columns."""
        text = "\n".join(f"{s.id}@{s.seed}" for s in self.specs)
        return fnv1a64(text.encode("utf-8"))

    def spec(self, model_id: str) -> DetectorSpec:
        try:
            return self._by_id[model_id]
        except KeyError:
            raise UsageError(f"model {model_id!r} is not in the pool") from None

    def family(self, model_id: str) -> str:
        return family_of(self.spec(model_id), self.family_mode)

    def families(self) -> tuple[str, ...]:
        return tuple(sorted({family_of(s, self.family_mode) for s in self.specs}))

    def with_family_mode(self, mode: str) -> "ModelPool":
        return ModelPool(self.specs, mode)

    def restrict(self, model_ids) -> "ModelPool":
        keep = set(model_ids)
        return ModelPool(tuple(s for s in self.specs if s.id in keep), self.family_mode)

    def subsample(self, m: int, seed: int) -> "ModelPool":
        """A uniformly random sub-pool of ``m`` models (order preserved)."""
        if not 1 <= m <= len(self.specs):
            raise UsageError(f"cannot subsample {m} models from a pool of {len(self.specs)}")
        picked = sorted(make_rng(seed).choice(len(self.specs), size=m, replace=False))
        return ModelPool(tuple(self.specs[i] for i in picked), self.family_mode)


def load_pool_config(path) -> dict:
    with Path(path).open("rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{path}: invalid pool config: {exc}") from None


def default_pool_config() -> dict:
    text = resources.files("metaens.detectors").joinpath("default_pool.toml").read_text("utf-8")
    return tomllib.loads(text)


def build_pool(grid_config: Mapping | str | Path | None = None, family_mode: str = "fine") -> ModelPool:
    """Expand a grid config into a :class:`ModelPool`.

    Each family section is expanded as the Cartesian product of its value
    lists; duplicates collapse onto a single spec. ``None`` loads the shipped
    default grid.
    """
    if grid_config is None:
        grid_config = default_pool_config()
    elif isinstance(grid_config, (str, Path)):
        grid_config = load_pool_config(grid_config)
    seed = grid_config.get("seed", DEFAULT_SEED)
    specs: dict[str, DetectorSpec] = {}
    for section, grid in grid_config.items():
        if section == "seed":
            continue
        family = section.upper()
        if family not in SCHEMAS or not isinstance(grid, Mapping):
            raise UsageError(f"unknown detector family {section!r}")
        names = list(grid)
        values = [v if isinstance(v, list) else [v] for v in grid.values()]
        for combo in itertools.product(*values):
            spec = DetectorSpec.make(family, seed=seed, **dict(zip(names, combo)))
            specs.setdefault(spec.id, spec)
    if not specs:
        raise UsageError("pool config defines no models")
    return ModelPool(tuple(specs.values()), family_mode)
