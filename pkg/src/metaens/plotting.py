"""Report figures written next to the CSV tables (Agg backend, files only)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "figure.dpi": 110,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    # reproducible bytes
    "svg.hashsalt": "metaens",
}


def _save(fig, path, description: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    meta = None
    if path.suffix == ".png":
        meta = {"Software": None}
        if description:
            # PNG text chunk, e.g. the run configuration echo
            meta["Description"] = description
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def plot_benchmark(summary: list[dict], path, title: str = "Mean AP by method",
                   description: str | None = None) -> Path:
    """Bar chart of mean AP with the across-seed std as error bars."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(summary) + 1.5), 3.2))
        names = [s["method"] for s in summary]
        means = np.array([s["ap_mean"] for s in summary])
        stds = np.array([s["ap_std"] for s in summary])
        colors = ["#b2182b" if n == "metaens" else "#7f7f7f" for n in names]
        ax.bar(np.arange(len(names)), means, yerr=stds, color=colors, capsize=3, width=0.65)
        ax.set_xticks(np.arange(len(names)), names, rotation=30, ha="right")
        ax.set_ylabel("average precision")
        lo = max(0.0, float((means - stds).min()) - 0.05)
        ax.set_ylim(lo, min(1.0, float((means + stds).max()) + 0.03))
        ax.set_title(title)
        return _save(fig, path, description)


def plot_pool_sweep(rows: list[dict], path, description: str | None = None) -> Path:
    """Mean AP against pool size, one line per method, shaded by std."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for m in dict.fromkeys(r["method"] for r in rows):
            pts = sorted((r["pool_size"], r["ap_mean"], r["ap_std"]) for r in rows if r["method"] == m)
            x, y, s = (np.array(v) for v in zip(*pts))
            ax.plot(x, y, marker="o", ms=3, label=m)
            ax.fill_between(x, y - s, y + s, alpha=0.15)
        ax.set_xlabel("pool size")
        ax.set_ylabel("average precision")
        ax.legend(frameon=False)
        return _save(fig, path, description)


def plot_ablation(rows: list[dict], path, description: str | None = None) -> Path:
    """Mean AP for each value of one ablation axis."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        labels = [r["value"] for r in rows]
        y = np.array([r["ap_mean"] for r in rows])
        s = np.array([r["ap_std"] for r in rows])
        ax.errorbar(np.arange(len(rows)), y, yerr=s, marker="o", ms=4, capsize=3, color="#2166ac")
        ax.set_xticks(np.arange(len(rows)), labels, rotation=30 if len(rows) > 4 else 0)
        ax.set_xlabel(rows[0]["axis"] if rows else "")
        ax.set_ylabel("average precision")
        return _save(fig, path, description)
