"""Paired statistics over per-image IoU samples: Wilcoxon signed-rank test,
Cohen's d, and five-number distribution summaries.

All functions are pure. The Wilcoxon exact mode enumerates the sign-assignment
null distribution and is capped at n_effective <= 25; beyond that the
tie-corrected normal approximation with continuity correction is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import (
    AllZeroDifferences,
    ConfigError,
    DegenerateVariance,
    EmptySet,
    InvalidParams,
    LengthMismatch,
    TooFewSamples,
)

EXACT_LIMIT = 25

POLICY_AUTO = "auto"
POLICY_EXACT = "exact"
POLICY_APPROX = "approx"

MODE_EXACT = "exact"
MODE_NORMAL = "normal_approximation"


def _as_finite_array(values, name: str) -> np.ndarray:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidParams(f"{name} must be a flat sequence")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidParams(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class PairedSamples:
    """Two equal-length per-image score lists plus their method labels."""

    a: tuple[float, ...]
    b: tuple[float, ...]
    labels: tuple[str, str] = ("a", "b")

    def __post_init__(self):
        a = _as_finite_array(self.a, "samples a")
        b = _as_finite_array(self.b, "samples b")
        if len(a) != len(b):
            raise LengthMismatch(f"paired samples differ in length: {len(a)} vs {len(b)}")
        if len(a) < 1:
            raise InvalidParams("paired samples must be non-empty")
        object.__setattr__(self, "a", tuple(float(x) for x in a))
        object.__setattr__(self, "b", tuple(float(x) for x in b))
        object.__setattr__(self, "labels", (str(self.labels[0]), str(self.labels[1])))

    def swapped(self) -> "PairedSamples":
        return PairedSamples(a=self.b, b=self.a, labels=(self.labels[1], self.labels[0]))


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    mode: str


@dataclass(frozen=True)
class CohensDResult:
    d: float
    group_means: tuple[float, float]
    group_sds: tuple[float, float]


@dataclass(frozen=True)
class DistributionSummary:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    mean: float
    sd: float


def _exact_two_sided_p(doubled_ranks: np.ndarray, doubled_w: int) -> float:
    """Exact p over all 2^n sign assignments.

    Works on ranks doubled to integers (average ranks are halves), building
    the null W-distribution by subset-sum convolution: counts[s] holds the
    number of sign assignments whose positive-rank sum is s/2. Identical to
    direct enumeration, in O(n * sum) time instead of O(2^n).
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts += shifted
    denom = float(2 ** doubled_ranks.size)
    p_le = float(counts[: doubled_w + 1].sum()) / denom
    p_ge = float(counts[doubled_w:].sum()) / denom
    return min(1.0, 2.0 * min(p_le, p_ge))


def _approx_two_sided_p(ranks: np.ndarray, w: float) -> float:
    n = ranks.size
    mu = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance -= float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts)) / 48.0
    if variance <= 0:
        raise DegenerateVariance("null variance of W is zero; ranks are fully degenerate")
    # Continuity correction shrunk toward zero so it never crosses the mean;
    # this keeps p(a, b) == p(b, a) exactly (the correction is antisymmetric).
    d = w - mu
    corrected = d - math.copysign(min(0.5, abs(d)), d) if d != 0 else 0.0
    z = corrected / math.sqrt(variance)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_signed_rank(s: PairedSamples, mode_policy: str = POLICY_AUTO) -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped before ranking; absolute differences are
    ranked ascending with average ranks for ties; W is the rank sum of the
    positive differences. Mode policy: "auto" picks exact enumeration for
    n_effective <= 25 and the normal approximation beyond, "exact" and
    "approx" force a mode (forcing exact past the cap is refused).
    """
    diffs = np.asarray(s.a, dtype=np.float64) - np.asarray(s.b, dtype=np.float64)
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    if mode_policy not in (POLICY_AUTO, POLICY_EXACT, POLICY_APPROX):
        raise ConfigError(f"unknown Wilcoxon mode policy {mode_policy!r}")
    use_exact = n <= EXACT_LIMIT if mode_policy == POLICY_AUTO else mode_policy == POLICY_EXACT
    if use_exact and n > EXACT_LIMIT:
        raise ConfigError(
            f"exact mode enumerates 2^{n} sign assignments; capped at n = {EXACT_LIMIT}"
        )
    ranks = rankdata(np.abs(diffs), method="average")
    w = float(np.sum(ranks[diffs > 0]))
    if use_exact:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p = _exact_two_sided_p(doubled, int(round(2.0 * w)))
        mode = MODE_EXACT
    else:
        p = _approx_two_sided_p(ranks, w)
        mode = MODE_NORMAL
    return WilcoxonResult(statistic=w, p_value=p, n_effective=n, mode=mode)


def cohens_d(group_a, group_b) -> CohensDResult:
    """Pooled-variance Cohen's d with n-1 sample variances."""
    a = _as_finite_array(group_a, "group a")
    b = _as_finite_array(group_b, "group b")
    if a.size < 2 or b.size < 2:
        raise TooFewSamples(f"each group needs >= 2 samples, got {a.size} and {b.size}")
    var_a = float(np.var(a, ddof=1))
    var_b = float(np.var(b, ddof=1))
    pooled = math.sqrt(((a.size - 1) * var_a + (b.size - 1) * var_b) / (a.size + b.size - 2))
    if pooled == 0.0:
        raise DegenerateVariance("pooled standard deviation is zero")
    return CohensDResult(
        d=(float(np.mean(a)) - float(np.mean(b))) / pooled,
        group_means=(float(np.mean(a)), float(np.mean(b))),
        group_sds=(math.sqrt(var_a), math.sqrt(var_b)),
    )


def summarize_distribution(samples) -> DistributionSummary:
    """Five-number summary plus mean and population sd.

    Quantiles use linear interpolation between order statistics (the
    order-statistic definition recorded in report metadata)."""
    arr = _as_finite_array(samples, "samples")
    if arr.size == 0:
        raise EmptySet("cannot summarize an empty sample set")
    q1, median, q3 = (float(q) for q in np.quantile(arr, [0.25, 0.5, 0.75]))
    return DistributionSummary(
        min=float(arr.min()),
        q1=q1,
        median=median,
        q3=q3,
        max=float(arr.max()),
        mean=float(arr.mean()),
        sd=float(arr.std(ddof=0)),
    )
