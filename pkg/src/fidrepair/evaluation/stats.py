"""Paired two-sided Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

EXACT_MAX_N = 25


def signed_ranks(diffs: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks of |d| (ties share the mean rank) and the sign of each d."""
    d = np.asarray(diffs, dtype=float)
    a = np.abs(d)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks, np.sign(d)


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    # ranks are multiples of 1/2, so doubled ranks are integers and the null
    # distribution of 2*W+ can be built by subset-sum counting
    doubled = [int(round(2 * r)) for r in ranks]
    total = sum(doubled)
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    n_assign = 2 ** len(doubled)
    w2 = int(round(2 * w_plus))
    lower = sum(counts[: w2 + 1])
    upper = sum(counts[w2:])
    return min(1.0, 2 * min(lower, upper) / n_assign)


def wilcoxon_signed_rank(pairs: Sequence[tuple[float, float]]) -> float:
    """Two-sided p-value for H0: the paired differences ``a - b`` are symmetric about 0.

    Zero differences are dropped. Exact null distribution up to 25 nonzero
    pairs, else a normal approximation with tie and continuity corrections.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one pair")
    diffs = [float(a) - float(b) for a, b in pairs]
    diffs = [d for d in diffs if d != 0.0]
    n = len(diffs)
    if n == 0:
        return 1.0
    ranks, signs = signed_ranks(diffs)
    w_plus = float(ranks[signs > 0].sum())
    if n <= EXACT_MAX_N:
        return _exact_p(ranks, w_plus)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_sizes**3) - tie_sizes).sum()) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))
