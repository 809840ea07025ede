"""Nonparametric two-sided tests and multiple-comparison correction.

Both tests compute exact p-values by dynamic programming over rank sums for
small samples (Wilcoxon: n <= 25 after dropping zero differences;
Mann-Whitney: n_a + n_b <= 12) and fall back to a normal approximation with
tie and continuity corrections otherwise. Midranks are doubled inside the
DP so all achievable rank sums are integers even under ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import midranks

WILCOXON_EXACT_MAX = 25
MWU_EXACT_MAX = 12


@dataclass(frozen=True)
class StatTestResult:
    statistic: float
    p_value: float
    method: str  # WilcoxonExact | WilcoxonNormal | MannWhitneyExact | MannWhitneyNormal
    n: tuple[int, ...]


def _phi_two_sided(z: float) -> float:
    """Two-sided normal tail probability 2*(1 - Phi(|z|))."""
    return math.erfc(abs(z) / math.sqrt(2.0))


def _tie_counts(ranked_values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(ranked_values, return_counts=True)
    return counts


def wilcoxon_signed_rank(x, y) -> StatTestResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped. The statistic is min(W+, W-). For n <= 25
    the p-value enumerates all 2^n sign patterns exactly (via DP over
    doubled ranks); otherwise a normal approximation with tie and
    continuity corrections is used.
    """
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.shape != yv.shape:
        raise ValueError("paired samples must have equal length")
    d = xv - yv
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero; no test possible")
    ranks = midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= WILCOXON_EXACT_MAX:
        # counts[s] = number of sign patterns whose doubled W+ equals s.
        weights = np.rint(2.0 * ranks).astype(np.int64)
        total = int(weights.sum())
        counts = np.zeros(total + 1, dtype=np.float64)
        counts[0] = 1.0
        for wt in weights:
            shifted = counts[:-wt].copy() if wt else counts.copy()
            counts[wt:] += shifted
        w2 = int(round(2.0 * w))
        lo = total - w2
        if lo <= w2 + 1:
            p = 1.0
        else:
            p = float(counts[: w2 + 1].sum() + counts[lo:].sum()) / 2.0**n
        return StatTestResult(w, min(p, 1.0), "WilcoxonExact", (n,))

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    t = _tie_counts(np.abs(d))
    var -= float((t**3 - t).sum()) / 48.0
    if var <= 0:
        return StatTestResult(w, 1.0, "WilcoxonNormal", (n,))
    # Continuity correction shrinks the deviation toward the mean.
    z = (w - mean + 0.5) / math.sqrt(var) if w < mean else (w - mean - 0.5) / math.sqrt(var)
    return StatTestResult(w, min(_phi_two_sided(z), 1.0), "WilcoxonNormal", (n,))


def mann_whitney_u(a, b) -> StatTestResult:
    """Two-sided Mann-Whitney U test on independent samples.

    The statistic is U of the first sample. For n_a + n_b <= 12 the p-value
    enumerates all C(n_a+n_b, n_a) group assignments exactly; otherwise a
    normal approximation with tie and continuity corrections is used.
    """
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    n_a, n_b = av.size, bv.size
    if n_a == 0 or n_b == 0:
        raise ValueError("both groups must be nonempty")
    pooled = np.concatenate([av, bv])
    ranks = midranks(pooled)
    u_a = float(ranks[:n_a].sum()) - n_a * (n_a + 1) / 2.0

    if n_a + n_b <= MWU_EXACT_MAX:
        weights = np.rint(2.0 * ranks).astype(np.int64)
        total = int(weights.sum())
        # dp[j, s] = number of j-subsets of the doubled ranks summing to s.
        dp = np.zeros((n_a + 1, total + 1), dtype=np.float64)
        dp[0, 0] = 1.0
        for wt in weights:
            for j in range(n_a, 0, -1):
                dp[j, wt:] += dp[j - 1, : total + 1 - wt]
        dist = dp[n_a]  # indexed by doubled rank sum of the chosen subset
        # Doubled U deviation from its center n_a*n_b is integral too.
        base = n_a * (n_a + 1)
        dev = abs(int(round(2.0 * u_a)) - n_a * n_b)
        sums = np.flatnonzero(dist)
        hits = dist[sums][np.abs(sums - base - n_a * n_b) >= dev].sum()
        p = float(hits) / math.comb(n_a + n_b, n_a)
        return StatTestResult(u_a, min(p, 1.0), "MannWhitneyExact", (n_a, n_b))

    n = n_a + n_b
    mean = n_a * n_b / 2.0
    var = n_a * n_b * (n + 1) / 12.0
    t = _tie_counts(pooled)
    var -= n_a * n_b * float((t**3 - t).sum()) / (12.0 * n * (n - 1))
    if var <= 0:
        return StatTestResult(u_a, 1.0, "MannWhitneyNormal", (n_a, n_b))
    dev = abs(u_a - mean)
    z = max(dev - 0.5, 0.0) / math.sqrt(var)
    return StatTestResult(u_a, min(_phi_two_sided(z), 1.0), "MannWhitneyNormal", (n_a, n_b))


def bonferroni(p_values) -> np.ndarray:
    """Multiply each p-value by the family size and clip at 1."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    return np.minimum(p * p.size, 1.0)
