"""Benchmark harness: baselines, seeds, pool-size sweeps and ablations."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ScoreMatrix
from .detectors import ModelPool
from .errors import UsageError
from .gain_model import N_CLS_TREES, N_REG_TREES, TwoPartGainModel
from .metatrain import BETA_GRID, LAMBDA_GRID, TAU_GRID, Harvest, RolloutConfig, harvest, rollout, train_gain_model
from .metrics import average_ranks, evaluate, wilcoxon_one_sided
from .seeding import derive_seed, make_rng
from .selector import SelectionConfig, aggregate, select

BASE_METHODS = ("metaens", "singleton", "global-best", "mega", "greedy-oracle")
ABLATION_AXES = {
    "combiner": ("mean", "median", "max", "min"),
    "epsilon": (0.0, 0.1, 0.2),
    "tau": TAU_GRID,
    "beta": BETA_GRID,
    "lambda": LAMBDA_GRID,
    "family-mode": ("none", "coarse", "fine"),
}

Labeled = Sequence[tuple[ScoreMatrix, np.ndarray]]


def parse_methods(tokens) -> list[tuple[str, int | None]]:
    """``metaens,random-ens:3,...`` -> [(name, k)]."""
    if isinstance(tokens, str):
        tokens = [t for t in tokens.split(",") if t.strip()]
    out = []
    for tok in tokens:
        tok = tok.strip().lower()
        if tok.startswith("random-ens"):
            _, _, k = tok.partition(":")
            try:
                k = int(k) if k else 3
            except ValueError:
                raise UsageError(f"bad ensemble size in method token {tok!r}") from None
            if k < 1:
                raise UsageError(f"random-ens size must be >= 1, got {k}")
            out.append(("random-ens", k))
        elif tok in BASE_METHODS:
            out.append((tok, None))
        else:
            raise UsageError(f"unknown method {tok!r}; valid: {', '.join(BASE_METHODS)}, random-ens:K")
    if not out:
        raise UsageError("no methods given")
    return out


def method_label(name: str, k: int | None) -> str:
    return f"{name}:{k}" if k is not None else name


def method_labels(specs) -> list[str]:
    """Display labels; a repeated token gets a ``#2``, ``#3`` ... suffix."""
    out, seen = [], {}
    for spec in specs:
        base = method_label(*spec)
        seen[base] = seen.get(base, 0) + 1
        out.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
    return out


@dataclass
class Trainer:
    """Fits (and memoizes) one gain model per seed from a shared harvest."""

    meta: Labeled
    pool: ModelPool
    rollout_cfg: RolloutConfig = field(default_factory=RolloutConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    family_mode: str = "fine"
    n_cls_trees: int = N_CLS_TREES
    n_reg_trees: int = N_REG_TREES
    _harvests: dict = field(default_factory=dict)
    _models: dict = field(default_factory=dict)

    def harvest(self, seed: int, epsilon: float | None = None) -> Harvest:
        eps = self.rollout_cfg.epsilon if epsilon is None else epsilon
        # greedy rollouts do not depend on the seed
        key = (eps, seed if eps > 0 else None)
        if key not in self._harvests:
            cfg = RolloutConfig(self.rollout_cfg.eta, self.rollout_cfg.length, eps, seed)
            self._harvests[key] = harvest(self.meta, self.pool, cfg)
        return self._harvests[key]

    def model(self, seed: int, epsilon: float | None = None, family_mode: str | None = None) -> TwoPartGainModel:
        mode = self.family_mode if family_mode is None else family_mode
        eps = self.rollout_cfg.epsilon if epsilon is None else epsilon
        key = (seed, eps, mode)
        if key not in self._models:
            fit_mode = "fine" if mode == "none" else mode
            m = train_gain_model(self.harvest(seed, eps), self.pool, seed, fit_mode, self.selection,
                                 n_cls_trees=self.n_cls_trees, n_reg_trees=self.n_reg_trees)
            if mode == "none":
                m = TwoPartGainModel(m.cls, m.reg, {}, {}, "fine", m.meta_perf, m.config)
            self._models[key] = m
        return self._models[key]


def _pick(ids: list[str], k: int, seed: int, *keys) -> list[str]:
    rng = make_rng(derive_seed(seed, *keys))
    idx = np.sort(rng.choice(len(ids), size=min(k, len(ids)), replace=False))
    return [ids[i] for i in idx]


def run_method(name: str, k: int | None, sm: ScoreMatrix, labels, pool: ModelPool, seed: int,
               model: TwoPartGainModel | None, cfg: SelectionConfig,
               rollout_cfg: RolloutConfig | None = None) -> tuple[np.ndarray, list[str]]:
    """Ensemble scores and members of one method on one dataset."""
    ids = sorted(pool.ids)
    if name == "metaens":
        res = select(sm, model, pool, cfg)
        return res.ensemble_scores, list(res.selected)
    if name == "random-ens":
        members = _pick(ids, k, seed, "random-ens", k, sm.dataset_id)
    elif name == "singleton":
        members = _pick(ids, 1, seed, "singleton", sm.dataset_id)
    elif name == "global-best":
        perf = model.meta_perf
        members = [max(ids, key=lambda m: (perf.get(m, -np.inf), -ids.index(m)))]
    elif name == "mega":
        members = ids
    elif name == "greedy-oracle":
        rc = rollout_cfg or RolloutConfig(cfg.eta)
        members, _ = rollout(sm, labels, pool, RolloutConfig(rc.eta, rc.length, 0.0, seed))
    else:
        raise UsageError(f"unknown method {name!r}")
    return aggregate([sm.column(m) for m in members], cfg.combiner), members


@dataclass
class BenchmarkResult:
    rows: list[dict]
    summary: list[dict]
    wilcoxon: list[dict]
    methods: list[str]
    datasets: list[str]
    seeds: list[int]

    def per_dataset_ap(self, method: str) -> np.ndarray:
        return np.array([np.mean([r["ap"] for r in self.rows if r["dataset"] == d and r["method"] == method])
                         for d in self.datasets])


def benchmark(trainer: Trainer, test: Labeled, methods="metaens,random-ens:3,singleton",
              seeds: Sequence[int] = (0,), pool: ModelPool | None = None) -> BenchmarkResult:
    """Evaluate each method on every (test dataset, seed) cell.

    ``pool`` restricts selection to a sub-pool; the gain model is still the
    one trained on the trainer's full pool.
    """
    specs = parse_methods(methods)
    labels_of = method_labels(specs)
    pool = pool or trainer.pool
    cfg = trainer.selection
    rows = []
    for seed in seeds:
        model = trainer.model(seed) if any(n in ("metaens", "global-best") for n, _ in specs) else None
        for sm, y in sorted(test, key=lambda t: t[0].dataset_id):
            cell = []
            for (name, k), label in zip(specs, labels_of):
                scores, members = run_method(name, k, sm, y, pool, seed, model, cfg, trainer.rollout_cfg)
                rep = evaluate(scores, y)
                cell.append({"dataset": sm.dataset_id, "method": label, "seed": seed, "ap": rep.ap,
                             "auc": rep.roc_auc, "p_at_pi": rep.precision_at_pi, "max_f1": rep.max_f1,
                             "n_selected": len(members)})
            ranks = average_ranks([[r["ap"] for r in cell]])
            for r, rk in zip(cell, ranks):
                r["rank"] = float(rk)
            rows.extend(cell)
    rows.sort(key=lambda r: (r["dataset"], labels_of.index(r["method"]), r["seed"]))
    datasets = sorted({r["dataset"] for r in rows})
    res = BenchmarkResult(rows, [], [], labels_of, datasets, list(seeds))
    per_ds = np.column_stack([res.per_dataset_ap(m) for m in labels_of])
    mean_ranks = average_ranks(per_ds)
    for j, m in enumerate(labels_of):
        seed_means = [np.mean([r["ap"] for r in rows if r["method"] == m and r["seed"] == s]) for s in seeds]
        aucs = [r["auc"] for r in rows if r["method"] == m]
        res.summary.append({"method": m, "ap_mean": float(np.mean(seed_means)),
                            "ap_std": float(np.std(seed_means)), "auc_mean": float(np.mean(aucs)),
                            "avg_rank": float(mean_ranks[j])})
    if "metaens" in labels_of:
        ours = res.per_dataset_ap("metaens")
        for m in labels_of:
            if m == "metaens":
                continue
            diffs = ours - res.per_dataset_ap(m)
            if np.all(diffs == 0):
                res.wilcoxon.append({"baseline": m, "n": len(diffs), "p_value": "degenerate"})
            else:
                res.wilcoxon.append({"baseline": m, "n": len(diffs), "p_value": wilcoxon_one_sided(diffs)})
    return res


def seed_wins(res: BenchmarkResult, method: str, baseline: str) -> list[bool]:
    """Per seed, whether ``method``'s mean AP is at least ``baseline``'s."""
    out = []
    for s in res.seeds:
        a = np.mean([r["ap"] for r in res.rows if r["method"] == method and r["seed"] == s])
        b = np.mean([r["ap"] for r in res.rows if r["method"] == baseline and r["seed"] == s])
        out.append(bool(a >= b))
    return out


def pool_sweep(trainer: Trainer, test: Labeled, sizes: Sequence[int], seeds: Sequence[int],
               methods="metaens,random-ens:3,singleton") -> list[dict]:
    """Mean AP per (pool size, method) over random sub-pools, one per seed."""
    labels_of = method_labels(parse_methods(methods))
    out = []
    for size in sizes:
        per = {m: [] for m in labels_of}
        for seed in seeds:
            sub = trainer.pool.subsample(size, derive_seed(seed, "pool", size))
            res = benchmark(trainer, test, methods, [seed], sub)
            for s in res.summary:
                per[s["method"]].append(s["ap_mean"])
        for m in labels_of:
            out.append({"pool_size": size, "method": m, "ap_mean": float(np.mean(per[m])),
                        "ap_std": float(np.std(per[m])), "n_seeds": len(per[m])})
    return out


def ablate(trainer: Trainer, test: Labeled, axis: str, seeds: Sequence[int] = (0,), values=None) -> list[dict]:
    """MetaEns mean AP for every value of one ablation axis."""
    if axis not in ABLATION_AXES:
        raise UsageError(f"unknown ablation axis {axis!r}; valid axes: {', '.join(ABLATION_AXES)}")
    values = ABLATION_AXES[axis] if values is None else values
    base = trainer.selection
    out = []
    for v in values:
        aps, aucs, sizes = [], [], []
        for seed in seeds:
            cfg, eps, mode = base, None, None
            if axis == "combiner":
                cfg = base.replace(combiner=v)
            elif axis == "tau":
                cfg = base.replace(tau1=v[0], tau2=v[1])
            elif axis == "beta":
                cfg = base.replace(beta=v)
            elif axis == "lambda":
                cfg = base.replace(lambda_fam=v)
            elif axis == "epsilon":
                eps = v
            else:
                mode = v
            model = trainer.model(seed, eps, mode)
            seed_ap = []
            for sm, y in sorted(test, key=lambda t: t[0].dataset_id):
                res = select(sm, model, trainer.pool, cfg)
                rep = evaluate(res.ensemble_scores, y)
                seed_ap.append(rep.ap)
                aucs.append(rep.roc_auc)
                sizes.append(len(res.selected))
            aps.append(float(np.mean(seed_ap)))
        label = f"{v[0]}/{v[1]}" if axis == "tau" else str(v)
        out.append({"axis": axis, "value": label, "ap_mean": float(np.mean(aps)), "ap_std": float(np.std(aps)),
                    "auc_mean": float(np.mean(aucs)), "mean_size": float(np.mean(sizes))})
    return out
