"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation. Settings resolve as defaults < ``--config`` TOML < explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import ABLATION_AXES, Trainer, ablate, benchmark, parse_methods, pool_sweep
from .cache import default_cache_dir, get_scores
from .config import RunConfig, parse_seeds, parse_sizes, resolve
from .data import SynthSpec, generate_synthetic, load_dataset, synthetic_corpus, write_dataset
from .detectors import build_pool
from .errors import DataError, InvariantError, MetaEnsError, UsageError
from .features import PairFeatureCache
from .gain_model import load_model, save_model
from .metatrain import RolloutConfig, harvest, lodo_tune, train_gain_model, write_gains_csv
from .metrics import evaluate
from .plotting import plot_ablation, plot_benchmark, plot_pool_sweep
from .seeding import make_rng
from .selector import select

log = logging.getLogger("metaens")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- helpers ---------------------------------------------------------------------

def _pool(cfg: RunConfig):
    return build_pool(cfg.pool, cfg.family_mode)


def _cache_dir(cfg: RunConfig) -> Path:
    return Path(cfg.cache_dir) if cfg.cache_dir else default_cache_dir()


def _dataset_paths(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.csv"))
        if not files:
            raise DataError(f"{p}: directory contains no CSV datasets")
        return files
    if not p.exists():
        raise DataError(f"{p}: no such file or directory")
    return [p]


def _load_labeled(path, cfg: RunConfig, pool) -> list:
    out = []
    for f in _dataset_paths(path):
        ds = load_dataset(f, cfg.label_column)
        labels = ds.require_labels()
        out.append((get_scores(ds, pool, _cache_dir(cfg)), np.asarray(labels)))
    return out


def _meta_subset(meta: list, cfg: RunConfig) -> list:
    if cfg.meta_fraction >= 1.0:
        return meta
    k = max(1, int(round(cfg.meta_fraction * len(meta))))
    idx = sorted(make_rng(cfg.seed).choice(len(meta), size=k, replace=False))
    return [meta[i] for i in idx]


def _write_csv(path, header: list[str], rows, cfg: RunConfig | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if cfg is not None:
            for line in cfg.csv_header():
                fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r[h]) for h in header])
    return path


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_json(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _echo_text(cfg: RunConfig) -> str:
    return json.dumps(cfg.echo(), sort_keys=True)


def _trainer(cfg: RunConfig, meta, pool) -> Trainer:
    return Trainer(meta, pool, RolloutConfig(cfg.eta, cfg.rollout_length, cfg.epsilon, cfg.seed),
                   cfg.selection(), cfg.family_mode, cfg.n_cls_trees, cfg.n_reg_trees)


# -- commands --------------------------------------------------------------------

def cmd_gen_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.count:
        datasets = synthetic_corpus(args.count, cfg.seed, prefix=args.prefix)
    else:
        n_local = args.local if args.local is not None else args.anoms // 2
        n_global = args.anoms - n_local
        if n_global < 0:
            raise UsageError("--local cannot exceed --anoms")
        spec = SynthSpec(args.n, n_global, n_local, args.d, args.clusters, cfg.seed)
        datasets = [generate_synthetic(spec, f"{args.prefix}_{cfg.seed}")]
    for ds in datasets:
        path = out / f"{ds.id}.csv"
        write_dataset(ds, path, cfg.label_column)
        print(f"{path}\t{ds.n} rows\t{ds.n_anomalies} anomalies")
    return 0


def cmd_pool(args, cfg: RunConfig) -> int:
    pool = _pool(cfg)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["id", "family", "seed"])
    for s in pool:
        w.writerow([s.id, pool.family(s.id), "" if s.seed is None else s.seed])
    return 0


def cmd_cache(args, cfg: RunConfig) -> int:
    pool = _pool(cfg)
    for f in _dataset_paths(args.data):
        ds = _load_maybe_labeled(f, cfg)
        sm = get_scores(ds, pool, _cache_dir(cfg))
        print(f"{ds.id}\t{sm.n} x {len(sm.model_ids)}\t{_cache_dir(cfg)}")
    return 0


def cmd_meta_train(args, cfg: RunConfig) -> int:
    pool = _pool(cfg)
    meta = _meta_subset(_load_labeled(args.meta, cfg, pool), cfg)
    rcfg = RolloutConfig(cfg.eta, cfg.rollout_length, cfg.epsilon, cfg.seed)
    h = harvest(meta, pool, rcfg)
    selection = cfg.selection()
    tuned = None
    if cfg.tune:
        tuned = lodo_tune(meta, pool, h, selection, cfg.seed, cfg.family_mode, rollout_cfg=rcfg,
                          n_cls_trees=cfg.n_cls_trees, n_reg_trees=cfg.n_reg_trees)
        selection = selection.replace(tau1=tuned.tau1, tau2=tuned.tau2, beta=tuned.beta,
                                      lambda_fam=tuned.lambda_fam)
    extra = {"run": cfg.to_dict(), "version": __version__}
    if tuned is not None:
        extra["tuned"] = {"tau1": tuned.tau1, "tau2": tuned.tau2, "beta": tuned.beta,
                          "lambda_fam": tuned.lambda_fam, "lodo_ap": tuned.score}
    model = train_gain_model(h, pool, cfg.seed, cfg.family_mode, selection, rcfg,
                             cfg.n_cls_trees, cfg.n_reg_trees, extra)
    path = save_model(model, args.out)
    if args.gains_csv:
        write_gains_csv(h, args.gains_csv, cfg.csv_header())
    n_pos = sum(s.gain > 0 for s in h.samples)
    print(f"meta-datasets: {len(meta)}  samples: {len(h.samples)}  positive: {n_pos}")
    for fam, risk in model.family_risk.items():
        print(f"  {fam:<20} pi_F={risk:.6f}  n={model.family_counts.get(fam, 0)}")
    if tuned is not None:
        print(f"tuned: tau1={tuned.tau1} tau2={tuned.tau2} beta={tuned.beta} lambda_fam={tuned.lambda_fam} "
              f"(LODO AP {tuned.score:.4f})")
    print(f"model written to {path}")
    return 0


def _selection_config(model, cfg: RunConfig, explicit: dict):
    # thresholds stored in the model (possibly tuned) apply unless given as flags
    stored = model.config.get("selection", {})
    keep = {k: stored[k] for k in ("tau1", "tau2", "beta", "lambda_fam") if k in stored and k not in explicit}
    return cfg.selection().replace(**keep)


def _load_maybe_labeled(path, cfg: RunConfig):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    label = cfg.label_column if cfg.label_column in [h.strip() for h in header] else None
    return load_dataset(path, label)


def cmd_select(args, cfg: RunConfig, explicit: dict) -> int:
    model = load_model(args.model)
    pool = _pool(cfg).with_family_mode(model.family_mode)
    scfg = _selection_config(model, cfg, explicit)
    out = Path(args.out)
    paths = _dataset_paths(args.data)
    for f in paths:
        # labels, when present, are split off and ignored
        ds = _load_maybe_labeled(f, cfg)
        sm = get_scores(ds, pool, _cache_dir(cfg))
        res = select(sm, model, pool, scfg)
        if len(res.selected) > scfg.eta or len(set(res.selected)) != len(res.selected):
            raise InvariantError("selection violated the budget or repeated a member")
        scores_path = out / f"{ds.id}.ensemble_scores.csv"
        scores_path.parent.mkdir(parents=True, exist_ok=True)
        with scores_path.open("w", encoding="utf-8") as fh:
            fh.writelines(line + "\n" for line in cfg.csv_header())
            fh.write("score\n")
            fh.writelines(f"{v:.17g}\n" for v in res.ensemble_scores)
        doc = res.to_dict()
        doc["selection_config"] = doc.pop("config")
        doc["ensemble_scores_path"] = scores_path.name
        doc.update(cfg.echo())
        _write_json(out / ("selection.json" if len(paths) == 1 else f"{ds.id}.selection.json"), doc)
        if args.dump_similarity:
            _dump_similarity(sm, scfg.k_top_for(sm.n), out / f"{ds.id}.similarity.csv", cfg)
        print(f"{ds.id}\tselected {len(res.selected)}: {', '.join(res.selected)}\t({res.stop_reason})")
    return 0


def _dump_similarity(sm, k_top: int, path, cfg: RunConfig):
    cache = PairFeatureCache(sm)
    ids = sorted(sm.model_ids)
    rows = [{"model": a, **{b: cache.jaccard(a, b, k_top) for b in ids}} for a in ids]
    _write_csv(path, ["model"] + ids, rows, cfg)


def _read_scores(path, column: str | None) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty score file")
    try:
        float(rows[0][0])
        header, body = None, rows
    except ValueError:
        header, body = rows[0], rows[1:]
    j = 0
    if column is not None:
        if header is None or column not in header:
            raise DataError(f"{path}: no column {column!r}")
        j = header.index(column)
    elif len(rows[0]) > 1:
        raise UsageError(f"{path} has several columns; pick one with --column")
    try:
        return np.array([float(r[j]) for r in body])
    except (ValueError, IndexError):
        raise DataError(f"{path}: non-numeric score value") from None


def cmd_evaluate(args, cfg: RunConfig) -> int:
    scores = _read_scores(args.scores, args.column)
    ds = load_dataset(args.data, cfg.label_column)
    if ds.labels is None:
        raise DataError(f"{args.data}: label column {cfg.label_column!r} missing")
    if scores.size != ds.n:
        raise DataError(f"{args.scores}: {scores.size} scores for {ds.n} instances")
    rep = evaluate(scores, ds.require_labels(), args.tie_mode)
    doc = rep.to_dict()
    doc.update(cfg.echo())
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


_ROW_FIELDS = ["dataset", "method", "seed", "ap", "auc", "p_at_pi", "max_f1", "rank", "n_selected"]


def cmd_benchmark(args, cfg: RunConfig) -> int:
    parse_methods(cfg.methods)
    seeds = parse_seeds(cfg.seeds)
    pool = _pool(cfg)
    meta = _meta_subset(_load_labeled(args.meta, cfg, pool), cfg)
    test = _load_labeled(args.test, cfg, pool)
    trainer = _trainer(cfg, meta, pool)
    out = Path(args.out)
    res = benchmark(trainer, test, cfg.methods, seeds)
    _write_csv(out / "results.csv", _ROW_FIELDS, res.rows, cfg)
    _write_csv(out / "summary.csv", ["method", "ap_mean", "ap_std", "auc_mean", "avg_rank"], res.summary, cfg)
    _write_csv(out / "wilcoxon.csv", ["baseline", "n", "p_value"], res.wilcoxon, cfg)
    plot_benchmark(res.summary, out / "benchmark.png", description=_echo_text(cfg))
    for s in res.summary:
        print(f"{s['method']:<16} AP {s['ap_mean']:.4f} +- {s['ap_std']:.4f}  rank {s['avg_rank']:.2f}")
    for w in res.wilcoxon:
        p = w["p_value"]
        print(f"metaens vs {w['baseline']:<14} p = {p if isinstance(p, str) else f'{p:.4g}'}")
    if cfg.pool_subsample:
        sizes = parse_sizes(cfg.pool_subsample)
        if max(sizes) > len(pool):
            raise UsageError(f"pool subsample {max(sizes)} exceeds pool size {len(pool)}")
        rows = pool_sweep(trainer, test, sizes, seeds, cfg.methods)
        _write_csv(out / "pool_sweep.csv", ["pool_size", "method", "ap_mean", "ap_std", "n_seeds"], rows, cfg)
        plot_pool_sweep(rows, out / "pool_sweep.png", _echo_text(cfg))
    print(f"results written to {out}")
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    if args.axis not in ABLATION_AXES:
        raise UsageError(f"unknown ablation axis {args.axis!r}; valid axes: {', '.join(ABLATION_AXES)}")
    seeds = parse_seeds(cfg.seeds)
    pool = _pool(cfg)
    meta = _meta_subset(_load_labeled(args.meta, cfg, pool), cfg)
    test = _load_labeled(args.test, cfg, pool)
    trainer = _trainer(cfg, meta, pool)
    rows = ablate(trainer, test, args.axis, seeds)
    out = Path(args.out)
    path = _write_csv(out / f"ablate_{args.axis}.csv", ["axis", "value", "ap_mean", "ap_std", "auc_mean",
                                                         "mean_size"], rows, cfg)
    plot_ablation(rows, out / f"ablate_{args.axis}.png", _echo_text(cfg))
    for r in rows:
        print(f"{r['axis']}={r['value']:<12} AP {r['ap_mean']:.4f} +- {r['ap_std']:.4f}  size {r['mean_size']:.2f}")
    print(f"written {path}")
    return 0


# -- parser ----------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="TOML file with run settings (flags override it)")
    p.add_argument("--pool", help="detector grid TOML (default: shipped 72-model grid)")
    p.add_argument("--cache-dir", help="score cache root (default: $METAENS_CACHE_DIR or ./.metaens_cache)")
    p.add_argument("--label-column", help="name of the 0/1 label column (default: label)")
    p.add_argument("--seed", type=int, help="master seed (default: 0)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_selection(p):
    p.add_argument("--tau1", type=float, help="first-partner gate on predicted gain (default 0.001)")
    p.add_argument("--tau2", type=float, help="later-partner gate on predicted gain (default 0.005)")
    p.add_argument("--beta", type=float, help="redundancy discount strength (default 3)")
    p.add_argument("--lambda-fam", type=float, help="family-risk weight (default 0.2)")
    p.add_argument("--k-top", type=int, help="top-k size for similarity (default max(10, ceil(0.05 N)))")
    p.add_argument("--eta", type=int, help="ensemble budget (default 10)")
    p.add_argument("--combiner", choices=["mean", "median", "max", "min"], help="score combiner (default mean)")
    p.add_argument("--primary", choices=["global_best", "fixed", "random"], help="primary strategy")
    p.add_argument("--primary-id", help="model id for --primary fixed")


def _add_training(p):
    p.add_argument("--epsilon", type=float, help="epsilon-greedy exploration in rollouts (default 0)")
    p.add_argument("--rollout-length", type=int, help="rollout length T <= eta (default eta)")
    p.add_argument("--family-mode", choices=["fine", "coarse"], help="family granularity for risk")
    p.add_argument("--meta-fraction", type=float, help="fraction of meta-datasets used (default 1)")
    p.add_argument("--n-cls-trees", type=int, help="classifier trees (default 500)")
    p.add_argument("--n-reg-trees", type=int, help="regressor trees (default 800)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metaens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"metaens {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-synth", help="write synthetic labeled datasets")
    _add_common(p)
    p.add_argument("--n", type=int, default=200, help="inliers")
    p.add_argument("--anoms", type=int, default=10, help="anomalies (global + local)")
    p.add_argument("--local", type=int, help="local anomalies (default half of --anoms)")
    p.add_argument("--d", type=int, default=4, help="dimensions")
    p.add_argument("--clusters", type=int, default=2, help="inlier clusters")
    p.add_argument("--count", type=int, default=0, help="write a varied corpus of this many datasets instead")
    p.add_argument("--prefix", default="synth", help="dataset id prefix")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("pool", help="list the candidate pool")
    _add_common(p)
    p.add_argument("--family-mode", choices=["fine", "coarse"])

    p = sub.add_parser("cache", help="score datasets with every pool member and cache the results")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset CSV or directory")

    p = sub.add_parser("meta-train", help="roll out meta-datasets and fit the gain model")
    _add_common(p)
    _add_selection(p)
    _add_training(p)
    p.add_argument("--meta", required=True, help="directory of labeled meta-training CSVs")
    p.add_argument("--out", required=True, help="model file (.json, or .json.gz for compressed)")
    p.add_argument("--tune", action="store_true", default=None, help="leave-one-dataset-out grid tuning")
    p.add_argument("--gains-csv", help="also dump the harvested gain samples here")

    p = sub.add_parser("select", help="build an ensemble for unlabeled data")
    _add_common(p)
    _add_selection(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset CSV or directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-similarity", action="store_true", help="write the top-k Jaccard matrix as CSV")

    p = sub.add_parser("evaluate", help="score a ranking against labels")
    _add_common(p)
    p.add_argument("--scores", required=True, help="CSV with one score per line (optional header)")
    p.add_argument("--data", required=True, help="labeled dataset CSV")
    p.add_argument("--column", help="score column name when the CSV has several")
    p.add_argument("--tie-mode", choices=["half_credit", "strict"], default="half_credit")
    p.add_argument("--out", help="write the JSON report here too")

    for name, helptext in (("benchmark", "compare MetaEns with baselines"),
                           ("ablate", "sweep one design axis")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_selection(p)
        _add_training(p)
        p.add_argument("--meta", required=True, help="directory of labeled meta-training CSVs")
        p.add_argument("--test", required=True, help="directory of labeled test CSVs")
        p.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 1..10 (default 0)")
        p.add_argument("--out", required=True, help="output directory")
        if name == "benchmark":
            p.add_argument("--methods", help="comma list of metaens, random-ens:K, singleton, global-best, "
                                             "mega, greedy-oracle")
            p.add_argument("--pool-subsample", help="sub-pool sizes for the pool-size sweep, e.g. 10,20,40")
        else:
            p.add_argument("--axis", required=True, help=f"one of {', '.join(ABLATION_AXES)}")
    return parser


_NOT_SETTINGS = {"command", "config", "out", "data", "meta", "test", "model", "verbose", "n", "anoms", "local",
                 "d", "clusters", "count", "prefix", "dump_similarity", "scores",
                 "column", "tie_mode", "gains_csv", "axis"}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(message)s")
        explicit = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS and v is not None}
        cfg = resolve(args.config, explicit)
        cmd = args.command
        if cmd == "gen-synth":
            return cmd_gen_synth(args, cfg)
        if cmd == "pool":
            return cmd_pool(args, cfg)
        if cmd == "cache":
            return cmd_cache(args, cfg)
        if cmd == "meta-train":
            return cmd_meta_train(args, cfg)
        if cmd == "select":
            return cmd_select(args, cfg, explicit)
        if cmd == "evaluate":
            return cmd_evaluate(args, cfg)
        if cmd == "benchmark":
            return cmd_benchmark(args, cfg)
        return cmd_ablate(args, cfg)
    except UsageError as exc:
        print(f"metaens: error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"metaens: data error: {exc}", file=sys.stderr)
        return 2
    except (InvariantError, MetaEnsError) as exc:
        print(f"metaens: internal error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        # bad values reaching library code are the caller's input
        print(f"metaens: data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover
        log.exception("unexpected failure")
        print(f"metaens: internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
