"""Offline phase: oracle-greedy rollouts, gain harvesting and family risk.

On every labeled meta-dataset the ensemble is grown greedily by true AP
gain, starting from the best single model. Each expansion step records one
(state, gain) sample per remaining candidate; these samples supervise the
two-part gain model, and their per-family lower tails define family risk.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ScoreMatrix
from .detectors import ModelPool, family_of
from .errors import DataError, UsageError
from .features import FEATURE_NAMES, PairFeatureCache, build_state
from .gain_model import N_CLS_TREES, N_REG_TREES, TwoPartGainModel, train_two_part
from .metrics import average_precision
from .seeding import derive_seed, make_rng
from .selector import DEFAULT_ETA, GainOracle, SelectionConfig, select

RISK_PERCENTILE = 0.10

TAU_GRID = ((-0.01, -0.01), (0.0, 0.0), (0.001, 0.005), (0.01, 0.01), (0.05, 0.05), (0.1, 0.1))
BETA_GRID = (0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0)
LAMBDA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.5)
DEFAULT_POINT = ((0.001, 0.005), 3.0, 0.2)


@dataclass(frozen=True)
class RolloutConfig:
    eta: int = DEFAULT_ETA
    length: int | None = None
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.eta < 1:
            raise UsageError(f"eta must be >= 1, got {self.eta}")
        if self.length is not None and not 1 <= self.length <= self.eta:
            raise UsageError(f"rollout length must lie in [1, eta={self.eta}], got {self.length}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise UsageError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @property
    def steps(self) -> int:
        return self.eta if self.length is None else self.length


@dataclass(frozen=True)
class GainSample:
    state: np.ndarray
    gain: float
    dataset_id: str
    step: int
    candidate: str
    family: str


def oracle_gain(ensemble_score, candidate_score, size: int, labels) -> float:
    """AP change from mean-extending an ensemble of ``size`` members by one."""
    o = np.asarray(ensemble_score, dtype=np.float64)
    c = np.asarray(candidate_score, dtype=np.float64)
    if size < 1:
        raise UsageError("ensemble size must be >= 1")
    return _gain(o * size, c, size, o, labels)


def _gain(total, cand, size, current, labels) -> float:
    return average_precision((total + cand) / (size + 1), labels) - average_precision(current, labels)


def _best(ids: Sequence[str], values: np.ndarray) -> int:
    # ids are sorted, so the first maximum is the smallest id
    return int(np.argmax(values))


def oracle_primary(sm: ScoreMatrix, labels, ids: Sequence[str]) -> str:
    ids = sorted(ids)
    aps = np.array([average_precision(sm.column(m), labels) for m in ids])
    return ids[_best(ids, aps)]


def rollout(sm: ScoreMatrix, labels, pool: ModelPool, cfg: RolloutConfig | None = None,
            features: PairFeatureCache | None = None) -> tuple[list[str], list[GainSample]]:
    """One oracle-greedy trajectory and the gain samples it produces."""
    cfg = cfg or RolloutConfig()
    if len(pool) == 0:
        raise UsageError("empty pool")
    y = np.asarray(labels)
    if y.sum() == 0 or y.sum() == y.size:
        raise DataError(f"{sm.dataset_id}: rollouts need labels with both classes")
    ids = sorted(pool.ids)
    features = features or PairFeatureCache(sm)
    rng = make_rng(derive_seed(cfg.seed, sm.dataset_id)) if cfg.epsilon > 0 else None
    primary = oracle_primary(sm, y, ids)
    members = [primary]
    total = sm.column(primary).copy()
    remaining = [m for m in ids if m != primary]
    samples: list[GainSample] = []
    while len(members) < cfg.steps and remaining:
        size = len(members)
        current = total / size
        last = members[-1]
        gains = np.array([_gain(total, sm.column(c), size, current, y) for c in remaining])
        for c, g in zip(remaining, gains):
            state = build_state(c, last, members, sm, features).vector
            samples.append(GainSample(state, float(g), sm.dataset_id, size + 1, c, pool.spec(c).family))
        best = _best(remaining, gains)
        if gains[best] <= 0:
            break
        if rng is not None and rng.random() < cfg.epsilon:
            best = int(rng.integers(len(remaining)))
        pick = remaining.pop(best)
        members.append(pick)
        total = total + sm.column(pick)
    return members, samples


@dataclass(frozen=True)
class FamilyRiskTable:
    risk: dict
    counts: dict
    percentile: float = RISK_PERCENTILE
    mode: str = "fine"

    def __getitem__(self, family: str) -> float:
        return self.risk.get(family, 0.0)


def family_risk(gains, percentile: float = RISK_PERCENTILE) -> float:
    """max(0, -Q_p(gains)) with linear interpolation; 0 for no samples."""
    g = np.asarray(gains, dtype=np.float64)
    if g.size == 0:
        return 0.0
    q = float(np.percentile(g, 100.0 * percentile, method="linear"))
    return max(0.0, -q)


def risk_table(samples: Sequence[GainSample], pool: ModelPool, mode: str = "fine",
               percentile: float = RISK_PERCENTILE) -> FamilyRiskTable:
    groups: dict[str, list[float]] = {f: [] for f in pool.with_family_mode(mode).families()}
    for s in samples:
        fam = family_of(pool.spec(s.candidate), mode)
        groups.setdefault(fam, []).append(s.gain)
    risk = {f: family_risk(sorted(g), percentile) for f, g in sorted(groups.items())}
    counts = {f: len(g) for f, g in sorted(groups.items())}
    return FamilyRiskTable(risk, counts, percentile, mode)


@dataclass
class Harvest:
    """Gain samples and per-model AP over the meta-datasets."""

    samples: list[GainSample] = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)
    ap: dict = field(default_factory=dict)

    @property
    def dataset_ids(self) -> list[str]:
        return sorted(self.ap)

    def restrict(self, dataset_ids) -> "Harvest":
        keep = set(dataset_ids)
        return Harvest([s for s in self.samples if s.dataset_id in keep],
                       {k: v for k, v in self.trajectories.items() if k in keep},
                       {k: v for k, v in self.ap.items() if k in keep})

    def meta_perf(self) -> dict:
        """Mean AP per model over the harvested datasets."""
        ids = sorted({m for per in self.ap.values() for m in per})
        return {m: float(np.mean([self.ap[d][m] for d in self.dataset_ids if m in self.ap[d]])) for m in ids}

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.samples:
            return np.zeros((0, len(FEATURE_NAMES))), np.zeros(0)
        return np.vstack([s.state for s in self.samples]), np.array([s.gain for s in self.samples])


def harvest(meta: Sequence[tuple[ScoreMatrix, np.ndarray]], pool: ModelPool,
            cfg: RolloutConfig | None = None) -> Harvest:
    """Roll out every labeled meta-dataset; samples are returned in canonical order."""
    cfg = cfg or RolloutConfig()
    if not meta:
        raise UsageError("meta-training needs at least one labeled dataset")
    out = Harvest()
    for sm, labels in sorted(meta, key=lambda t: t[0].dataset_id):
        if sm.dataset_id in out.ap:
            raise UsageError(f"duplicate meta-dataset id {sm.dataset_id!r}")
        traj, samples = rollout(sm, labels, pool, cfg)
        out.trajectories[sm.dataset_id] = traj
        out.samples.extend(samples)
        out.ap[sm.dataset_id] = {m: average_precision(sm.column(m), labels) for m in pool.ids}
    return out


def train_gain_model(h: Harvest, pool: ModelPool, seed: int = 0, family_mode: str = "fine",
                     selection: SelectionConfig | None = None, rollout_cfg: RolloutConfig | None = None,
                     n_cls_trees: int = N_CLS_TREES, n_reg_trees: int = N_REG_TREES,
                     extra_config: dict | None = None) -> TwoPartGainModel:
    selection = selection or SelectionConfig()
    X, g = h.matrices()
    cls, reg = train_two_part(X, g, seed, n_cls_trees, n_reg_trees)
    table = risk_table(h.samples, pool, family_mode, selection.risk_percentile)
    config = {"selection": selection.to_dict(), "seed": seed, "n_cls_trees": n_cls_trees,
              "n_reg_trees": n_reg_trees, "meta_datasets": h.dataset_ids}
    if rollout_cfg is not None:
        config["rollout"] = {"eta": rollout_cfg.eta, "length": rollout_cfg.steps,
                             "epsilon": rollout_cfg.epsilon, "seed": rollout_cfg.seed}
    config.update(extra_config or {})
    return TwoPartGainModel(cls, reg, table.risk, table.counts, family_mode, h.meta_perf(), config)


def write_gains_csv(h: Harvest, path, comment_lines=()) -> Path:
    """One row per gain sample; ``comment_lines`` are written first, verbatim."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in comment_lines:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(FEATURE_NAMES) + ["gain", "dataset_id", "step", "candidate", "family"])
        for s in h.samples:
            w.writerow([repr(float(v)) for v in s.state] + [repr(s.gain), s.dataset_id, s.step, s.candidate,
                                                              s.family])
    return path


# -- leave-one-dataset-out tuning --------------------------------------------------

def tuning_grid(tau_grid=TAU_GRID, beta_grid=BETA_GRID, lambda_grid=LAMBDA_GRID):
    return list(itertools.product(tau_grid, beta_grid, lambda_grid))


def _default_distance(point, tau_grid, beta_grid, lambda_grid) -> int:
    (tau, beta, lam), (dt, db, dl) = point, DEFAULT_POINT

    def pos(grid, v):
        # grids lacking the default value measure from their nearest entry
        return min(range(len(grid)), key=lambda i: (abs(float(np.subtract(grid[i], v).sum())), i))

    return (abs(tau_grid.index(tau) - pos(tau_grid, dt)) + abs(beta_grid.index(beta) - pos(beta_grid, db))
            + abs(lambda_grid.index(lam) - pos(lambda_grid, dl)))


@dataclass(frozen=True)
class TuneResult:
    tau1: float
    tau2: float
    beta: float
    lambda_fam: float
    score: float
    scores: dict


def lodo_tune(meta: Sequence[tuple[ScoreMatrix, np.ndarray]], pool: ModelPool, h: Harvest | None = None,
              base: SelectionConfig | None = None, seed: int = 0, family_mode: str = "fine",
              tau_grid=TAU_GRID, beta_grid=BETA_GRID, lambda_grid=LAMBDA_GRID,
              rollout_cfg: RolloutConfig | None = None, n_cls_trees: int = N_CLS_TREES,
              n_reg_trees: int = N_REG_TREES) -> TuneResult:
    """Pick (tau1, tau2, beta, lambda_fam) by leave-one-dataset-out mean AP.

    Each fold retrains the gain model without the held-out dataset and runs
    selection on it for every grid point. Ties go to the point nearest the
    defaults in grid steps, then to the lexicographically smallest point.
    """
    if len(meta) < 2:
        raise UsageError("leave-one-dataset-out tuning needs at least 2 meta-datasets")
    base = base or SelectionConfig()
    h = h or harvest(meta, pool, rollout_cfg)
    grid = tuning_grid(tau_grid, beta_grid, lambda_grid)
    totals = np.zeros(len(grid))
    ordered = sorted(meta, key=lambda t: t[0].dataset_id)
    for sm, labels in ordered:
        rest = [d for d in h.dataset_ids if d != sm.dataset_id]
        model = train_gain_model(h.restrict(rest), pool, seed, family_mode, base,
                                 n_cls_trees=n_cls_trees, n_reg_trees=n_reg_trees)
        oracle = GainOracle(model, sm)
        for gi, ((t1, t2), beta, lam) in enumerate(grid):
            cfg = base.replace(tau1=t1, tau2=t2, beta=beta, lambda_fam=lam)
            res = select(sm, model, pool, cfg, oracle)
            totals[gi] += average_precision(res.ensemble_scores, labels)
    means = totals / len(ordered)
    best = max(means)
    tied = [grid[i] for i in range(len(grid)) if means[i] == best]
    tied.sort(key=lambda p: (_default_distance(p, list(tau_grid), list(beta_grid), list(lambda_grid)),
                             p[0][0], p[0][1], p[1], p[2]))
    (t1, t2), beta, lam = tied[0]
    scores = {f"{p[0][0]}/{p[0][1]}/{p[1]}/{p[2]}": float(m) for p, m in zip(grid, means)}
    return TuneResult(t1, t2, beta, lam, float(best), scores)
