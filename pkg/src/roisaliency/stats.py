"""Statistical machinery: JSD with bootstrap bounds, one-tailed Wilcoxon, BH-FDR.

Prediction vectors live in [0, 1] and are discretized onto equal-width
histogram cells before any divergence is computed. All divergences use log
base 2, so JSD is bounded by 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DataError

EXACT_WILCOXON_LIMIT = 25  # full signed-rank distribution up to this many nonzero pairs


def histogram(values: Sequence[float], bins: int) -> np.ndarray:
    """Discrete distribution of probabilities over `bins` equal cells of [0, 1].

    The top edge is closed (a value of exactly 1 falls in the last cell); the
    result sums to 1.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot histogram an empty vector")
    if bins < 2:
        raise DataError(f"need at least 2 histogram cells, got {bins}")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise DataError("probabilities outside [0, 1]")
    cells = np.minimum((values * bins).astype(np.int64), bins - 1)
    counts = np.bincount(cells, minlength=bins)
    return counts / values.size


def _kl_bits(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def jsd(p0: Sequence[float], p1: Sequence[float]) -> float:
    """Jensen-Shannon divergence (base 2) between two discrete distributions."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    if p0.shape != p1.shape or p0.ndim != 1:
        raise DataError(f"distributions must share one shape, got {p0.shape} and {p1.shape}")
    for name, p in (("first", p0), ("second", p1)):
        if np.any(p < 0.0):
            raise DataError(f"{name} distribution has negative mass")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DataError(f"{name} distribution sums to {p.sum()}, not 1")
    mid = 0.5 * (p0 + p1)
    value = 0.5 * _kl_bits(p0, mid) + 0.5 * _kl_bits(p1, mid)
    return max(0.0, value)


@dataclass(frozen=True)
class JsdInterval:
    """Bootstrap bounds around a plug-in JSD (log base 2, so within [0, 1])."""

    lower: float
    upper: float
    point: float


def bootstrap_jsd(
    values0: Sequence[float],
    values1: Sequence[float],
    replicates: int,
    bins: int,
    alpha: float,
    rng: np.random.Generator,
) -> JsdInterval:
    """Percentile bootstrap interval for the JSD of two prediction vectors.

    Each replicate resamples both vectors with replacement at their original
    sizes, histograms them and recomputes the divergence; the bounds are the
    alpha/2 and 1 - alpha/2 empirical quantiles.
    """
    v0 = np.asarray(values0, dtype=np.float64)
    v1 = np.asarray(values1, dtype=np.float64)
    if v0.size == 0 or v1.size == 0:
        raise DataError("both prediction vectors must be nonempty")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must be in (0, 1), got {alpha}")
    point = jsd(histogram(v0, bins), histogram(v1, bins))

    cells0 = np.minimum((v0 * bins).astype(np.int64), bins - 1)
    cells1 = np.minimum((v1 * bins).astype(np.int64), bins - 1)
    reps = np.empty(replicates)
    for b in range(replicates):
        take0 = cells0[rng.integers(0, v0.size, size=v0.size)]
        take1 = cells1[rng.integers(0, v1.size, size=v1.size)]
        h0 = np.bincount(take0, minlength=bins) / v0.size
        h1 = np.bincount(take1, minlength=bins) / v1.size
        reps[b] = jsd(h0, h1)
    lower, upper = np.quantile(reps, [alpha / 2.0, 1.0 - alpha / 2.0])
    return JsdInterval(lower=float(lower), upper=float(upper), point=point)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank, one-tailed
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WilcoxonResult:
    p_value: float
    statistic: float  # rank sum of positive differences (W+)
    n: int  # nonzero differences used
    degenerate: bool  # all differences were zero
    method: str  # "exact" | "normal" | "degenerate"


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def _exact_signed_rank_tail(ranks: np.ndarray, w_plus: float, direction: str) -> float:
    """Exact tail probability of W+ over all 2^n equiprobable sign assignments.

    Average ranks are half-integers at worst, so doubling them makes every
    achievable rank sum an integer; counts are built by dynamic programming
    (one polynomial-multiply per rank) and stay below 2^25, exact in float64.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    w2 = int(np.rint(2.0 * w_plus))
    n_assign = 2.0 ** len(ranks)
    if direction == "greater":
        return float(counts[w2:].sum() / n_assign)
    return float(counts[: w2 + 1].sum() / n_assign)


def _normal_signed_rank_tail(ranks: np.ndarray, w_plus: float, direction: str) -> float:
    """Normal approximation with tie-corrected variance and continuity correction."""
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    sd = math.sqrt(var)
    if direction == "greater":
        z = (w_plus - mean - 0.5) / sd
        return 0.5 * math.erfc(z / math.sqrt(2.0))
    z = (w_plus - mean + 0.5) / sd
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def wilcoxon_one_tailed(diffs: Sequence[float], direction: str) -> WilcoxonResult:
    """One-tailed Wilcoxon signed-rank test on paired differences.

    direction "greater" tests whether the differences are shifted above zero,
    "less" below. Zero differences are dropped; ties get average ranks. The
    tail probability is exact (full signed-rank distribution) for up to
    EXACT_WILCOXON_LIMIT nonzero pairs and a tie-corrected normal
    approximation with continuity correction beyond that. If every difference
    is zero the result is degenerate with p = 1.
    """
    if direction not in ("greater", "less"):
        raise DataError(f"direction must be 'greater' or 'less', got {direction!r}")
    d = np.asarray(diffs, dtype=np.float64)
    if d.size == 0:
        raise DataError("need at least one difference")
    d = d[d != 0.0]
    if d.size == 0:
        return WilcoxonResult(p_value=1.0, statistic=0.0, n=0, degenerate=True, method="degenerate")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if d.size <= EXACT_WILCOXON_LIMIT:
        p = _exact_signed_rank_tail(ranks, w_plus, direction)
        method = "exact"
    else:
        p = _normal_signed_rank_tail(ranks, w_plus, direction)
        method = "normal"
    p = min(max(p, np.finfo(np.float64).tiny), 1.0)
    return WilcoxonResult(p_value=p, statistic=w_plus, n=int(d.size), degenerate=False, method=method)


# ---------------------------------------------------------------------------
# Benjamini-Hochberg FDR
# ---------------------------------------------------------------------------

def bh_fdr(p_values: Sequence[float], alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """BH q-values (q_(i) = min_{j>=i} p_(j)·m/j, clamped to 1) and reject flags.

    Rejecting q <= alpha reproduces the classic step-up procedure at level
    alpha.
    """
    ps = np.asarray(p_values, dtype=np.float64)
    if ps.size == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    if np.any(ps < 0.0) or np.any(ps > 1.0):
        raise DataError("p-values outside [0, 1]")
    if not 0.0 <= alpha <= 1.0:
        raise DataError(f"alpha must be in [0, 1], got {alpha}")
    m = ps.size
    order = np.argsort(ps, kind="stable")
    scaled = ps[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    qs = np.empty(m)
    qs[order] = q_sorted
    return qs, qs <= alpha
