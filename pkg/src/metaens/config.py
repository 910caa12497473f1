"""Run configuration: documented defaults, TOML files and flag overrides.

Precedence, lowest first: built-in defaults, ``--config`` file, explicit
command-line flags.
"""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .errors import UsageError
from .selector import SelectionConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class RunConfig:
    pool: str | None = None            # pool grid TOML; None = shipped default grid
    cache_dir: str | None = None       # None = $METAENS_CACHE_DIR or ./.metaens_cache
    label_column: str = "label"
    seed: int = 0
    # selection
    tau1: float = 0.001
    tau2: float = 0.005
    beta: float = 3.0
    lambda_fam: float = 0.2
    k_top: int | None = None
    eta: int = 10
    combiner: str = "mean"
    primary: str = "global_best"
    primary_id: str | None = None
    risk_percentile: float = 0.10
    # meta-training
    rollout_length: int | None = None
    epsilon: float = 0.0
    family_mode: str = "fine"
    meta_fraction: float = 1.0
    tune: bool = False
    n_cls_trees: int = 500
    n_reg_trees: int = 800
    # benchmark
    methods: str = "metaens,random-ens:3,singleton,global-best,mega"
    seeds: str = "0"
    pool_subsample: str | None = None

    def selection(self) -> SelectionConfig:
        return SelectionConfig(tau1=self.tau1, tau2=self.tau2, beta=self.beta, lambda_fam=self.lambda_fam,
                               k_top=self.k_top, eta=self.eta, combiner=self.combiner, primary=self.primary,
                               primary_id=self.primary_id, primary_seed=self.seed,
                               risk_percentile=self.risk_percentile)

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self) -> dict:
        return {"version": __version__, "config": self.to_dict()}

    def csv_header(self) -> list[str]:
        return [f"# metaens {__version__}", "# config " + json.dumps(self.to_dict(), sort_keys=True)]


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def _normalize(d: dict, source: str) -> dict:
    out = {}
    for k, v in d.items():
        key = k.replace("-", "_")
        if key not in FIELD_NAMES:
            raise UsageError(f"{source}: unknown setting {k!r}")
        out[key] = v
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: invalid TOML: {exc}") from None
    flat = {}
    for k, v in doc.items():
        # optional [run] / [selection] / ... tables are flattened
        if isinstance(v, dict):
            flat.update(v)
        else:
            flat[k] = v
    return _normalize(flat, str(path))


def resolve(config_path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    values.update(_normalize({k: v for k, v in (overrides or {}).items() if v is not None}, "flags"))
    try:
        cfg = RunConfig(**values)
        cfg.selection()
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    if not 0.0 < cfg.meta_fraction <= 1.0:
        raise UsageError(f"meta_fraction must lie in (0, 1], got {cfg.meta_fraction}")
    if cfg.family_mode not in ("fine", "coarse"):
        raise UsageError(f"family_mode must be 'fine' or 'coarse', got {cfg.family_mode!r}")
    return cfg


def parse_seeds(text) -> list[int]:
    """``"1,2,3"``, ``"1..10"`` or a mix such as ``"0,5..7"``."""
    if isinstance(text, int):
        return [text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    if not out:
        raise UsageError("empty seed list")
    return out


def parse_sizes(text) -> list[int]:
    return parse_seeds(text)
