"""Slow, obviously-correct reference implementations used by the tests.

None of these import the package's metric or rollout code.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def rank_order(scores):
    # selection-sort style ordering: higher score first, then lower index
    idx = list(range(len(scores)))
    out = []
    while idx:
        best = idx[0]
        for i in idx[1:]:
            if scores[i] > scores[best]:
                best = i
        out.append(best)
        idx.remove(best)
    return out


def brute_ap(scores, labels) -> float:
    order = rank_order(list(scores))
    n_pos = int(sum(labels))
    terms = []
    for k in range(1, len(order) + 1):
        if labels[order[k - 1]]:
            hits = sum(1 for j in order[:k] if labels[j])
            terms.append(hits / k)
    return math.fsum(terms) / n_pos


def brute_precision_at_pi(scores, labels) -> float:
    order = rank_order(list(scores))
    n_pos = int(sum(labels))
    return sum(1 for j in order[:n_pos] if labels[j]) / n_pos


def brute_auc_half(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    num = 0.0
    for p in pos:
        for q in neg:
            num += 1.0 if p > q else (0.5 if p == q else 0.0)
    return num / (len(pos) * len(neg))


def brute_auc_strict(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    return sum(1 for p in pos for q in neg if p > q) / (len(pos) * len(neg))


def brute_max_f1(scores, labels) -> float:
    n_pos = int(sum(labels))
    best = 0.0
    for t in set(scores):
        pred = [s >= t for s in scores]
        tp = sum(1 for p, y in zip(pred, labels) if p and y)
        if tp == 0:
            continue
        prec = tp / sum(pred)
        rec = tp / n_pos
        best = max(best, 2 * prec * rec / (prec + rec))
    return best


def average_rank_abs(values):
    vals = [abs(v) for v in values]
    ranks = []
    for v in vals:
        less = sum(1 for w in vals if w < v)
        equal = sum(1 for w in vals if w == v)
        ranks.append(less + (equal + 1) / 2.0)
    return ranks


def brute_wilcoxon_greater(diffs) -> float:
    d = [x for x in diffs if x != 0]
    ranks = average_rank_abs(d)
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    n = len(d)
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if w >= w_obs - 1e-9:
            count += 1
    return count / 2 ** n


def brute_percentile(values, q):
    # linear interpolation between closest ranks
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


def brute_rollout(columns: dict, labels, eta: int):
    """Greedy oracle trajectory recomputing every AP from raw columns."""
    ids = sorted(columns)
    aps = {m: brute_ap(columns[m], labels) for m in ids}
    best = max(aps.values())
    primary = min(m for m in ids if aps[m] == best)
    traj = [primary]
    n_samples = 0
    while len(traj) < eta:
        rest = [m for m in ids if m not in traj]
        if not rest:
            break
        total = np.zeros(len(labels))
        for m in traj:
            total = total + np.asarray(columns[m], dtype=float)
        base = brute_ap(total / len(traj), labels)
        gains = {}
        for c in rest:
            ext = (total + np.asarray(columns[c], dtype=float)) / (len(traj) + 1)
            gains[c] = brute_ap(ext, labels) - base
        n_samples += len(rest)
        g_best = max(gains.values())
        if g_best <= 0:
            break
        traj.append(min(c for c in rest if gains[c] == g_best))
    return traj, n_samples


def brute_jaccard(a, b, k):
    ta = set(rank_order(list(a))[:k])
    tb = set(rank_order(list(b))[:k])
    return len(ta & tb) / len(ta | tb)
