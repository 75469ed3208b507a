"""Paired statistical tests and bootstrap intervals for per-fold AUC values.

Wilcoxon p-values are exact (full enumeration of sign assignments) up to
n = 12 and use the tie-corrected normal approximation above that.  Cohen's d
is the paired-differences form d_z: mean difference over the sample standard
deviation of the differences.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy import special

from .rng import stream

WILCOXON_EXACT_LIMIT = 12


def _paired_diffs(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    return x - y


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t, p) with n-1 degrees of freedom.

    Identical samples give (0, 1); zero-variance differences with a nonzero
    mean are rejected because t is unbounded there.
    """
    d = _paired_diffs(a, b)
    n = len(d)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    sd = float(d.std(ddof=1))
    mean = float(d.mean())
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        raise ValueError("zero-variance differences with nonzero mean")
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(special.stdtr(n - 1, -abs(t)))
    return t, p


def _average_rank_abs(d: np.ndarray) -> np.ndarray:
    mags = np.abs(d)
    _, inverse, counts = np.unique(mags, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inverse]


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test; returns (W, p).

    Zero differences are dropped, tied magnitudes get average ranks, and W is
    the smaller of the positive/negative rank sums.
    """
    d = _paired_diffs(a, b)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise ValueError("all differences are zero")
    ranks = _average_rank_abs(d)
    w_pos = float(ranks[d > 0].sum())
    w_neg = float(ranks[d < 0].sum())
    w = min(w_pos, w_neg)
    if n <= WILCOXON_EXACT_LIMIT:
        count = 0
        for signs in itertools.product((0.0, 1.0), repeat=n):
            s_pos = float(np.dot(signs, ranks))
            if s_pos <= w + 1e-9:
                count += 1
        p = min(1.0, 2.0 * count / 2.0**n)
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        z = (w_pos - mean) / math.sqrt(var)
        p = 2.0 * float(special.ndtr(-abs(z)))
    return w, p


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    """Paired effect size d_z = mean(a-b) / sample sd(a-b)."""
    d = _paired_diffs(a, b)
    if len(d) < 2:
        raise ValueError("need at least 2 pairs")
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("zero standard deviation of differences")
    return float(d.mean()) / sd


def bootstrap_ci(
    diffs: Sequence[float],
    iterations: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``diffs``.

    Deterministic for a fixed seed; constant inputs give the degenerate
    interval [c, c].
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty input")
    if d.size < 2:
        raise ValueError("need at least 2 values")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = stream(seed, "bootstrap")
    idx = rng.integers(0, d.size, size=(iterations, d.size))
    means = d[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [100.0 * alpha, 100.0 * (1.0 - alpha)], method="linear")
    return float(lo), float(hi)
