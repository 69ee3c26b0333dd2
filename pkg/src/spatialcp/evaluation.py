"""Coverage, efficiency and accuracy diagnostics.

Intervals are closed (boundary hits count as covered).  Infinite sets count
as covered but are left out of the width averages and reported separately.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from .exceptions import InvalidLevel, LengthMismatch, NonPositiveResponse


def _bounds(intervals):
    if hasattr(intervals, "lower"):
        return np.asarray(intervals.lower, dtype=float), np.asarray(intervals.upper, dtype=float)
    arr = np.asarray(intervals, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    coverage_gap: float
    mean_width: float
    relative_efficiency: float
    n_infinite_sets: int
    n_test: int
    n_empty_sets: int = 0
    n_nonpositive: int = 0

    def to_dict(self):
        return asdict(self)


def coverage_report(intervals, y_true, alpha, strict=True):
    """Marginal coverage, gap to ``1 - alpha`` and (relative) efficiency.

    ``intervals`` is a :class:`~spatialcp.conformal.PredictionSets` or an
    ``(n, 2)`` array of bounds.  Relative efficiency is ``100 * width / y``
    averaged over finite sets.  With ``strict=False`` non-positive responses
    are excluded from the relative efficiency (and counted) instead of raising.
    """
    lower, upper = _bounds(intervals)
    y = np.asarray(y_true, dtype=float)
    if len(lower) != len(y):
        raise LengthMismatch(f"{len(lower)} intervals for {len(y)} responses")
    nonpos = y <= 0
    if strict and nonpos.any():
        raise NonPositiveResponse("relative efficiency needs positive responses")
    covered = (lower <= y) & (y <= upper)
    width = upper - lower
    finite = np.isfinite(width)
    rel_mask = finite & ~nonpos
    coverage = float(np.mean(covered))
    empty = getattr(intervals, "empty", None)
    return CoverageReport(
        coverage=coverage,
        coverage_gap=(1 - alpha) - coverage,
        mean_width=float(np.mean(width[finite])) if finite.any() else math.inf,
        relative_efficiency=float(np.mean(100 * width[rel_mask] / y[rel_mask])) if rel_mask.any() else math.inf,
        n_infinite_sets=int(np.sum(~finite)),
        n_test=len(y),
        n_empty_sets=int(np.sum(empty)) if empty is not None else 0,
        n_nonpositive=int(np.sum(nonpos)),
    )


@dataclass(frozen=True)
class BetaBinomialRef:
    """Finite-sample law of empirical split-CP coverage under exchangeability.

    Coverage ~ Binom(n_test, mu) / n_test with mu ~ Beta(n + 1 - l, l),
    l = floor(alpha (n + 1)).
    """

    n: int
    n_test: int
    alpha: float

    def __post_init__(self):
        if not 1 <= self.l <= self.n:
            raise InvalidLevel(f"alpha={self.alpha} with n={self.n} gives l={self.l} outside [1, n]")
        if self.n_test < 1:
            raise InvalidLevel("n_test must be positive")

    @property
    def l(self):
        return math.floor(self.alpha * (self.n + 1))

    @property
    def beta_params(self):
        return (self.n + 1 - self.l, self.l)

    def pmf(self):
        """Probabilities of k = 0..n_test covered test points."""
        a, b = self.beta_params
        N = self.n_test
        k = np.arange(N + 1)
        logc = gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)
        return np.exp(logc + betaln(k + a, N - k + b) - betaln(a, b))

    def cdf(self):
        return np.cumsum(self.pmf())

    def quantile(self, p):
        return beta_binomial_quantile(self, p)


def beta_binomial_quantile(ref, p):
    """Smallest coverage ``k / n_test`` whose cumulative mass reaches ``p``."""
    if not 0.0 < p < 1.0:
        raise InvalidLevel(f"p must lie in (0, 1), got {p}")
    cdf = ref.cdf()
    k = int(np.searchsorted(cdf, p - 1e-12, side="left"))
    return min(k, ref.n_test) / ref.n_test


def coverage_band(ref, lo=0.05, hi=0.95):
    return beta_binomial_quantile(ref, lo), beta_binomial_quantile(ref, hi)


@dataclass
class DistrictReport:
    districts: list
    counts: list
    coverage: list
    coverage_gap: list
    relative_efficiency: list
    gap_quartiles: tuple
    reference_gap_quartiles: tuple | None = None
    extra: dict = field(default_factory=dict)

    def rows(self):
        return [
            {"district": d, "count": c, "coverage": cv, "coverage_gap": g, "relative_efficiency": r}
            for d, c, cv, g, r in zip(self.districts, self.counts, self.coverage,
                                      self.coverage_gap, self.relative_efficiency)
        ]


def district_report(intervals, y_true, districts, alpha, n_calib=None, n_districts=None):
    """Per-district coverage gaps and their quartiles.

    The beta-binomial reference (when ``n_calib`` is given) assumes equally
    sized districts: ``n_test = test size / n_districts``.  Reference quartiles
    are returned in gap units, ``(1 - alpha) - coverage``.
    """
    lower, upper = _bounds(intervals)
    y = np.asarray(y_true, dtype=float)
    districts = np.asarray(districts)
    if not len(lower) == len(y) == len(districts):
        raise LengthMismatch("intervals, responses and districts must align")
    covered = (lower <= y) & (y <= upper)
    width = upper - lower
    ids = sorted(int(d) for d in np.unique(districts))
    counts, cov, gaps, rel = [], [], [], []
    for d in ids:
        m = districts == d
        counts.append(int(m.sum()))
        c = float(covered[m].mean())
        cov.append(c)
        gaps.append((1 - alpha) - c)
        ok = m & np.isfinite(width) & (y > 0)
        rel.append(float(np.mean(100 * width[ok] / y[ok])) if ok.any() else math.inf)
    q1, q3 = np.percentile(gaps, [25, 75])
    ref_q = None
    if n_calib is not None:
        k = n_districts or len(ids)
        ref = BetaBinomialRef(n_calib, max(1, round(len(y) / k)), alpha)
        ref_q = ((1 - alpha) - beta_binomial_quantile(ref, 0.75),
                 (1 - alpha) - beta_binomial_quantile(ref, 0.25))
    return DistrictReport(ids, counts, cov, gaps, rel, (float(q1), float(q3)), ref_q)


def accuracy_metrics(y_pred, y_true):
    """RMSE, median absolute error (lower median) and PER10/PER20 in percent."""
    yp = np.asarray(y_pred, dtype=float)
    y = np.asarray(y_true, dtype=float)
    if len(yp) != len(y):
        raise LengthMismatch(f"{len(yp)} predictions for {len(y)} responses")
    if np.any(y <= 0):
        raise NonPositiveResponse("percentage errors need positive responses")
    err = np.abs(yp - y)
    rel = err / y
    return {
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mdae": float(np.sort(err)[(len(err) - 1) // 2]),
        "per10": float(100 * np.mean(rel <= 0.10)),
        "per20": float(100 * np.mean(rel <= 0.20)),
    }
