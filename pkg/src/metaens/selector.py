"""Label-free online ensemble construction.

Starting from a primary detector, candidates are scored by the gain model.
The first partner must clear ``tau1``; later partners must clear ``tau2`` and
have positive proxy utility

    dU = gamma * (G_hat - lambda_fam * pi_F),   gamma = 1 / (1 + beta * sim_max)

where ``sim_max`` is the largest top-k Jaccard overlap with any member and
``pi_F`` the risk of the candidate's family. Selection stops at the budget
``eta`` or when no candidate has positive utility.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .data import ScoreMatrix
from .detectors import COARSE_FAMILY, ModelPool, family_of
from .errors import DataError, FeatureLayoutError, UsageError
from .features import LAYOUT_VERSION, PairFeatureCache, build_state, default_k_top
from .gain_model import TwoPartGainModel
from .seeding import make_rng

DEFAULT_ETA = 10


class Combiner(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    MAX = "max"
    MIN = "min"


class Primary(str, Enum):
    GLOBAL_BEST = "global_best"
    FIXED = "fixed"
    RANDOM = "random"


STOP_TAU1 = "tau1_gate"
STOP_UTILITY = "no_positive_utility"
STOP_BUDGET = "budget"


@dataclass(frozen=True)
class SelectionConfig:
    tau1: float = 0.001
    tau2: float = 0.005
    beta: float = 3.0
    lambda_fam: float = 0.2
    k_top: int | None = None
    eta: int = DEFAULT_ETA
    combiner: str = "mean"
    primary: str = "global_best"
    primary_id: str | None = None
    primary_seed: int = 0
    risk_percentile: float = 0.10

    def __post_init__(self):
        object.__setattr__(self, "combiner", Combiner(str(self.combiner).lower()).value)
        object.__setattr__(self, "primary", Primary(str(self.primary).lower().replace("-", "_")).value)
        for name in ("tau1", "tau2", "beta", "lambda_fam", "risk_percentile"):
            if not math.isfinite(float(getattr(self, name))):
                raise UsageError(f"{name} must be finite")
        if self.beta < 0:
            raise UsageError(f"beta must be >= 0, got {self.beta}")
        if self.lambda_fam < 0:
            raise UsageError(f"lambda_fam must be >= 0, got {self.lambda_fam}")
        if int(self.eta) != self.eta or self.eta < 1:
            raise UsageError(f"eta must be an integer >= 1, got {self.eta}")
        if self.k_top is not None and self.k_top < 1:
            raise UsageError(f"k_top must be >= 1, got {self.k_top}")
        if not 0.0 < self.risk_percentile < 1.0:
            raise UsageError("risk_percentile must lie in (0, 1)")
        if self.primary == Primary.FIXED.value and not self.primary_id:
            raise UsageError("a fixed primary needs primary_id")

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "SelectionConfig":
        d = self.to_dict()
        d.update(changes)
        return SelectionConfig(**d)

    def k_top_for(self, n: int) -> int:
        return min(n, self.k_top) if self.k_top is not None else default_k_top(n)


@dataclass(frozen=True)
class TraceRow:
    stage: int
    step: int
    candidate: str
    g_hat: float
    sim_max: float | None = None
    gamma: float | None = None
    risk: float | None = None
    penalty: float | None = None
    delta_u: float | None = None
    accepted: bool = False
    note: str = ""


@dataclass(frozen=True)
class SelectionResult:
    dataset_id: str
    selected: tuple[str, ...]
    ensemble_scores: np.ndarray
    trace: tuple[TraceRow, ...]
    stop_reason: str
    config: SelectionConfig = field(default_factory=SelectionConfig)

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "selected": list(self.selected),
            "stop_reason": self.stop_reason,
            "config": self.config.to_dict(),
            "trace": [asdict(r) for r in self.trace],
        }


def discount(beta: float, sim_max: float) -> float:
    return 1.0 / (1.0 + beta * sim_max)


def proxy_utility(g_hat: float, gamma: float, lambda_fam: float, risk: float) -> float:
    return gamma * (g_hat - lambda_fam * risk)


def aggregate(member_scores, combiner: Combiner | str = Combiner.MEAN) -> np.ndarray:
    """Element-wise combination of member score vectors."""
    cols = [np.asarray(c, dtype=np.float64) for c in member_scores]
    if not cols:
        raise DataError("cannot aggregate an empty ensemble")
    if len({c.shape for c in cols}) != 1:
        raise DataError("member score vectors differ in length")
    M = np.vstack(cols)
    op = {"mean": np.mean, "median": np.median, "max": np.max, "min": np.min}[Combiner(combiner).value]
    return op(M, axis=0)


def primary_select(sm: ScoreMatrix, cfg: SelectionConfig, meta_perf: dict | None = None,
                   candidates=None) -> str:
    """Label-free choice of the first ensemble member."""
    ids = sorted(candidates if candidates is not None else sm.model_ids)
    if not ids:
        raise UsageError("empty pool")
    if cfg.primary == Primary.FIXED.value:
        if cfg.primary_id not in ids:
            raise UsageError(f"fixed primary {cfg.primary_id!r} is not in the pool")
        return cfg.primary_id
    if cfg.primary == Primary.RANDOM.value:
        return ids[int(make_rng(cfg.primary_seed).integers(len(ids)))]
    if not meta_perf:
        raise UsageError("global-best primary needs meta-train performance")
    scored = [m for m in ids if m in meta_perf]
    if not scored:
        raise UsageError("no pool member has meta-train performance")
    # max over (perf, -rank) keeps the smallest id among ties
    return max(scored, key=lambda m: (meta_perf[m], -ids.index(m)))


class GainOracle:
    """Batched, memoized predicted gains on one score matrix."""

    def __init__(self, model: TwoPartGainModel, sm: ScoreMatrix, features: PairFeatureCache | None = None,
                 memo: dict | None = None):
        self.model = model
        self.sm = sm
        self.features = features or PairFeatureCache(sm)
        self.memo = {} if memo is None else memo

    def gains(self, candidates, last: str, members) -> np.ndarray:
        key_p = frozenset(members)
        out = np.empty(len(candidates))
        todo = []
        for i, c in enumerate(candidates):
            g = self.memo.get((c, last, key_p))
            if g is None:
                todo.append(i)
            else:
                out[i] = g
        if todo:
            X = np.vstack([build_state(candidates[i], last, members, self.sm, self.features).vector for i in todo])
            pred = self.model.predict_gains(X)
            for i, g in zip(todo, pred):
                out[i] = g
                self.memo[(candidates[i], last, key_p)] = float(g)
        return out


def select(sm: ScoreMatrix, model: TwoPartGainModel, pool: ModelPool | None = None,
           cfg: SelectionConfig | None = None, oracle: GainOracle | None = None) -> SelectionResult:
    """Build an ensemble for one unlabeled dataset."""
    cfg = cfg or SelectionConfig()
    if model.feature_layout_version != LAYOUT_VERSION:
        raise FeatureLayoutError(f"model feature layout v{model.feature_layout_version} != v{LAYOUT_VERSION}")
    if pool is not None:
        missing = [m for m in pool.ids if m not in sm]
        if missing:
            raise DataError(f"{sm.dataset_id}: no scores for {len(missing)} pool member(s), e.g. {missing[0]}")
        ids = sorted(pool.ids)
    else:
        ids = sorted(sm.model_ids)
    if not ids:
        raise UsageError("empty pool")
    oracle = oracle or GainOracle(model, sm)
    k_top = cfg.k_top_for(sm.n)

    def risk_of(m: str) -> float:
        if pool is not None:
            fam = family_of(pool.spec(m), model.family_mode)
        else:
            # ids start with the lower-cased family name
            fam = m.split("_", 1)[0].upper()
            if model.family_mode == "coarse":
                fam = COARSE_FAMILY.get(fam, fam)
        return model.risk(fam)

    primary = primary_select(sm, cfg, model.meta_perf, ids)
    members = [primary]
    trace: list[TraceRow] = []

    def finish(reason: str) -> SelectionResult:
        scores = aggregate([sm.column(m) for m in members], cfg.combiner)
        return SelectionResult(sm.dataset_id, tuple(members), scores, tuple(trace), reason, cfg)

    if cfg.eta == 1:
        return finish(STOP_BUDGET)
    remaining = [m for m in ids if m != primary]
    if not remaining:
        return finish(STOP_UTILITY)

    # first partner: plain predicted gain against the primary
    g = oracle.gains(remaining, primary, members)
    best = int(np.argmax(g))
    if g[best] < cfg.tau1:
        trace.extend(TraceRow(1, 2, c, float(v), note="below_tau1") for c, v in zip(remaining, g))
        return finish(STOP_TAU1)
    trace.extend(TraceRow(1, 2, c, float(v), accepted=(i == best)) for i, (c, v) in enumerate(zip(remaining, g)))
    members.append(remaining.pop(best))

    while len(members) < cfg.eta:
        if not remaining:
            return finish(STOP_UTILITY)
        step = len(members) + 1
        last = members[-1]
        g = oracle.gains(remaining, last, members)
        rows = []
        u_best, pick = 0.0, None
        for i, (c, gi) in enumerate(zip(remaining, g)):
            gi = float(gi)
            if gi < cfg.tau2:
                rows.append(TraceRow(2, step, c, gi, note="below_tau2"))
                continue
            sim = max(oracle.features.jaccard(c, m, k_top) for m in members)
            gamma = discount(cfg.beta, sim)
            risk = risk_of(c)
            du = proxy_utility(gi, gamma, cfg.lambda_fam, risk)
            rows.append(TraceRow(2, step, c, gi, sim, gamma, risk, cfg.lambda_fam * risk, du))
            if du > u_best:
                u_best, pick = du, i
        if pick is None:
            trace.extend(rows)
            return finish(STOP_UTILITY)
        rows[pick] = TraceRow(**{**asdict(rows[pick]), "accepted": True})
        trace.extend(rows)
        members.append(remaining.pop(pick))
    return finish(STOP_BUDGET)
