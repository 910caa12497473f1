"""Histogram-based detectors: HBOS and LODA."""
from __future__ import annotations

import math

import numpy as np

from ..seeding import make_rng

LOG_EPS = 1e-12


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # half-open bins, last bin closed, matching np.histogram
    return np.clip(np.searchsorted(edges[1:-1], values, side="right"), 0, len(edges) - 2)


def hbos_scores(X: np.ndarray, bins: int = 10, tolerance: float = 0.5, X_score: np.ndarray | None = None):
    """Histogram-based outlier score: sum over features of -log(density).

    Densities come from equal-width histograms fitted on ``X``. Points of
    ``X_score`` outside the fitted range take the edge bin's density when
    they lie within ``tolerance`` bin widths of the edge, else zero density.
    """
    X_score = X if X_score is None else X_score
    total = np.zeros(X_score.shape[0])
    for j in range(X.shape[1]):
        hist, edges = np.histogram(X[:, j], bins=bins, density=True)
        v = X_score[:, j]
        dens = hist[_bin_index(v, edges)]
        width = edges[1] - edges[0]
        lo_gap = edges[0] - v
        hi_gap = v - edges[-1]
        outside = (lo_gap > 0) | (hi_gap > 0)
        if outside.any():
            near = np.maximum(lo_gap, hi_gap) <= tolerance * width
            dens = np.where(outside & ~near, 0.0, dens)
        total -= np.log(dens + LOG_EPS)
    return total


def loda_scores(X: np.ndarray, proj: int = 100, bins: int = 10, seed: int = 0) -> np.ndarray:
    """Lightweight on-line detector of anomalies (batch form).

    ``proj`` sparse Gaussian projections with ceil(sqrt(d)) non-zero
    coordinates each; the score is the mean over projections of
    -log(bin probability).
    """
    n, d = X.shape
    rng = make_rng(seed)
    n_nonzero = min(d, math.ceil(math.sqrt(d)))
    total = np.zeros(n)
    for _ in range(proj):
        w = np.zeros(d)
        w[rng.choice(d, size=n_nonzero, replace=False)] = rng.standard_normal(n_nonzero)
        z = X @ w
        hist, edges = np.histogram(z, bins=bins)
        p = hist / n
        total -= np.log(p[_bin_index(z, edges)] + LOG_EPS)
    return total / proj
