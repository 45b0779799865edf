"""Power-law fitting of event-probability series and comparison against
closed-form exponents.

The fit is weighted least squares of log(p_hat) on log(scale) with
delta-method weights Var[log p] ~ (1-p)/(n p); points with p_hat in {0, 1}
carry no usable log-variance information and are dropped with a warning
counter. Slope sign convention: probability ~ scale^slope, so epsilon
series have positive slopes and N series negative ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FitError

__all__ = [
    "ProbabilitySeries",
    "PowerLawFit",
    "loglog_fit",
    "compare_to_theory",
    "wilson_interval",
]


@dataclass
class ProbabilitySeries:
    """Counts (k out of n) observed at each scale point."""

    scales: np.ndarray
    successes: np.ndarray
    totals: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.scales = np.asarray(self.scales, dtype=float)
        self.successes = np.asarray(self.successes, dtype=float)
        self.totals = np.asarray(self.totals, dtype=float)
        if not (len(self.scales) == len(self.successes) == len(self.totals)):
            raise DomainError("series arrays must align")
        if np.any(self.scales <= 0):
            raise DomainError("scales must be positive")
        if np.any(self.totals < 1):
            raise DomainError("each point needs n >= 1")

    @classmethod
    def from_probabilities(cls, scales, p_hats, totals, label=""):
        scales = np.asarray(scales, dtype=float)
        p = np.asarray(p_hats, dtype=float)
        n = np.asarray(totals, dtype=float)
        return cls(scales, p * n, n, label)

    def p_hat(self) -> np.ndarray:
        return self.successes / self.totals


@dataclass
class PowerLawFit:
    """Weighted log-log fit result."""

    slope: float
    intercept: float
    slope_se: float
    r_squared: float
    n_points: int
    dropped: int

    def to_json_dict(self, **extra) -> dict:
        d = {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_se": self.slope_se,
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "dropped": self.dropped,
        }
        d.update(extra)
        return d


def loglog_fit(series: ProbabilitySeries) -> PowerLawFit:
    """Weighted least squares of log p on log scale.

    Weights are inverse delta-method variances (1-p)/(n p). Degenerate
    points (p in {0, 1}) are dropped; fewer than 3 surviving points is a
    fit error.
    """
    p = series.p_hat()
    ok = (p > 0.0) & (p < 1.0)
    dropped = int(np.count_nonzero(~ok))
    if np.count_nonzero(ok) < 3:
        raise FitError(
            f"need >= 3 usable points, have {int(np.count_nonzero(ok))} "
            f"({dropped} dropped)")
    x = np.log(series.scales[ok])
    y = np.log(p[ok])
    var = (1.0 - p[ok]) / (series.totals[ok] * p[ok])
    var = np.maximum(var, 1e-300)
    w = 1.0 / var
    sw = w.sum()
    xbar = (w * x).sum() / sw
    ybar = (w * y).sum() / sw
    sxx = (w * (x - xbar) ** 2).sum()
    if sxx <= 0:
        raise FitError("scales are degenerate (no spread)")
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    slope_se = math.sqrt(1.0 / sxx)
    resid = y - (intercept + slope * x)
    ss_res = (w * resid ** 2).sum()
    ss_tot = (w * (y - ybar) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerLawFit(slope=float(slope), intercept=float(intercept),
                       slope_se=float(slope_se), r_squared=float(r2),
                       n_points=int(np.count_nonzero(ok)), dropped=dropped)


@dataclass
class TheoryComparison:
    slope: float
    theory: float
    z: float
    verdict: str

    def to_json_dict(self, **extra) -> dict:
        d = {"slope": self.slope, "theory": self.theory, "z": self.z,
             "verdict": self.verdict}
        d.update(extra)
        return d


def compare_to_theory(fit: PowerLawFit, theory: float) -> TheoryComparison:
    """z-score of the fitted slope against a theoretical exponent.

    Bands: |z| < 2 pass, 2 <= |z| <= 3 warn, |z| > 3 fail.
    """
    if fit.slope_se <= 0 or not np.isfinite(fit.slope_se):
        raise DomainError("fit has no usable slope standard error")
    z = (fit.slope - theory) / fit.slope_se
    if abs(z) < 2:
        verdict = "pass"
    elif abs(z) <= 3:
        verdict = "warn"
    else:
        verdict = "fail"
    return TheoryComparison(slope=fit.slope, theory=float(theory),
                            z=float(z), verdict=verdict)


def wilson_interval(k: int, n: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if not 0 <= k <= n or n < 1:
        raise DomainError(f"need 0 <= k <= n, n >= 1; got k={k}, n={n}")
    from scipy.special import ndtri

    z = float(ndtri(0.5 + confidence / 2.0))
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(center - half, 0.0)
    hi = 1.0 if k == n else min(center + half, 1.0)
    return lo, hi
