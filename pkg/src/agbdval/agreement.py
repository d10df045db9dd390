"""Paired-unit agreement statistics between predicted and reference means.

Argument order throughout is ``(ref, pred)``: reference (inventory) values
first, predictions (map) second.  Regressions put the reference on x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tdist import t_quantile, t_two_sided

CRITICAL_T = 2.0


class AgreementError(ValueError):
    pass


@dataclass(frozen=True)
class PairedUnit:
    unit_id: str
    pred_mean: float
    pred_var: float
    ref_mean: float
    ref_var: float

    def __post_init__(self):
        if self.pred_var < 0 or self.ref_var < 0:
            raise AgreementError(f"unit {self.unit_id}: negative variance")

    def swapped(self) -> "PairedUnit":
        return PairedUnit(self.unit_id, self.ref_mean, self.ref_var, self.pred_mean, self.pred_var)


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    slope_ci95: tuple[float, float]
    intercept_ci95: tuple[float, float]
    r2: float
    n: int
    residual_se: float
    p_slope: float
    p_intercept: float


@dataclass
class AgreementReport:
    n_units: int
    n_filtered: int
    fit: RegressionFit
    pearson_r: float
    rmse: float
    d_r: float
    t_values: dict[str, float] = field(default_factory=dict)
    qq: list[tuple[float, float, float]] = field(default_factory=list)

    def summary(self) -> dict:
        f = self.fit
        return {
            "n_units": self.n_units,
            "n_filtered": self.n_filtered,
            "slope": f.slope,
            "slope_ci95": list(f.slope_ci95),
            "intercept": f.intercept,
            "intercept_ci95": list(f.intercept_ci95),
            "r2": f.r2,
            "pearson_r": self.pearson_r,
            "rmse": self.rmse,
            "d_r": self.d_r,
            "p_slope": f.p_slope,
            "p_intercept": f.p_intercept,
        }


def unit_t_statistic(u: PairedUnit) -> float:
    """Difference of means over the root of the summed variances of the means."""
    diff = u.pred_mean - u.ref_mean
    denom = u.pred_var + u.ref_var
    if denom == 0.0:
        if diff == 0.0:
            return 0.0
        raise AgreementError(f"unit {u.unit_id}: degenerate denominator (both variances 0)")
    return diff / math.sqrt(denom)


def is_significant(t: float, critical: float = CRITICAL_T) -> bool:
    return abs(t) > critical


def _pair(ref, pred, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(ref, dtype=np.float64).ravel()
    y = np.asarray(pred, dtype=np.float64).ravel()
    if x.size != y.size:
        raise AgreementError(f"length mismatch: {x.size} reference vs {y.size} predicted")
    if x.size < min_n:
        raise AgreementError(f"need at least {min_n} pairs, got {x.size}")
    return x, y


def _mean(v: np.ndarray) -> float:
    return math.fsum(v) / v.size


def _p_value(est: float, se: float, df: int) -> float:
    if se == 0.0:
        return 0.0 if est != 0.0 else 1.0
    return t_two_sided(est / se, df)


def ols_fit(ref, pred) -> RegressionFit:
    """Least-squares line ``pred = intercept + slope * ref`` with 95% CIs."""
    x, y = _pair(ref, pred, 3)
    n = x.size
    mx, my = _mean(x), _mean(y)
    dx, dy = x - mx, y - my
    sxx = math.fsum(dx * dx)
    if sxx == 0.0:
        raise AgreementError("reference values have zero variance")
    sxy = math.fsum(dx * dy)
    syy = math.fsum(dy * dy)
    slope = sxy / sxx
    intercept = my - slope * mx
    resid = y - (intercept + slope * x)
    ss_res = math.fsum(resid * resid)
    r2 = 0.0 if syy == 0.0 else min(max(1.0 - ss_res / syy, 0.0), 1.0)
    df = n - 2
    s = math.sqrt(ss_res / df)
    se_slope = s / math.sqrt(sxx)
    se_int = s * math.sqrt(1.0 / n + mx * mx / sxx)
    q = t_quantile(0.975, df)
    return RegressionFit(
        slope=slope,
        intercept=intercept,
        slope_ci95=(slope - q * se_slope, slope + q * se_slope),
        intercept_ci95=(intercept - q * se_int, intercept + q * se_int),
        r2=r2,
        n=n,
        residual_se=s,
        p_slope=_p_value(slope, se_slope, df),
        p_intercept=_p_value(intercept, se_int, df),
    )


def pearson_r(ref, pred) -> float:
    x, y = _pair(ref, pred, 2)
    dx, dy = x - _mean(x), y - _mean(y)
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise AgreementError("correlation undefined: zero variance")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)


def rmse(ref, pred) -> float:
    """Root mean square of ``pred - ref`` (direct differences, not residuals)."""
    x, y = _pair(ref, pred, 1)
    d = y - x
    return math.sqrt(math.fsum(d * d) / d.size)


def index_of_agreement(ref, pred, c: float = 2.0) -> float:
    """Refined index of agreement d_r in [-1, 1]."""
    o, p = _pair(ref, pred, 2)
    err = math.fsum(np.abs(p - o))
    spread = c * math.fsum(np.abs(o - _mean(o)))
    if spread == 0.0:
        if err == 0.0:
            return 1.0
        raise AgreementError("reference has no variability")
    if err <= spread:
        return 1.0 - err / spread
    return spread / err - 1.0


def quantile(sample, p: float) -> float:
    """Linear interpolation between order statistics at ``h = p * (n - 1)``."""
    v = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    if v.size == 0:
        raise AgreementError("quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise AgreementError(f"probability {p} outside [0, 1]")
    h = p * (v.size - 1)
    lo = int(math.floor(h))
    hi = min(lo + 1, v.size - 1)
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


def qq_pairs(a, b, k: int = 101) -> list[tuple[float, float, float]]:
    """``(p, quantile_a, quantile_b)`` at ``p_j = j / (k - 1)``."""
    if k < 2:
        raise AgreementError("k must be >= 2")
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise AgreementError("Q-Q pairs need two non-empty samples")
    probs = [j / (k - 1) for j in range(k)]
    return [(p, quantile(a, p), quantile(b, p)) for p in probs]


def histogram(values, bin_width: float = 50.0, origin: float = 0.0) -> list[tuple[float, int]]:
    """Counts in half-open bins ``[origin + i*w, origin + (i+1)*w)``.

    Every bin between the lowest and highest occupied bin is emitted.
    """
    if not bin_width > 0:
        raise AgreementError("bin_width must be > 0")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return []
    idx = np.floor((v - origin) / bin_width).astype(np.int64)
    # pull values across a rounded bin edge back to the half-open rule
    lo_edge = origin + idx * bin_width
    idx = np.where(v < lo_edge, idx - 1, idx)
    idx = np.where(v >= origin + (idx + 1) * bin_width, idx + 1, idx)
    first, last = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - first, minlength=last - first + 1)
    return [(origin + (first + i) * bin_width, int(cnt)) for i, cnt in enumerate(counts)]


def agreement_report(units: Sequence[PairedUnit], n_filtered: int = 0, c: float = 2.0, qq_k: int = 101) -> AgreementReport:
    """Full metric battery over paired units."""
    if not units:
        raise AgreementError("no paired units to compare")
    ref = np.array([u.ref_mean for u in units])
    pred = np.array([u.pred_mean for u in units])
    return AgreementReport(
        n_units=len(units),
        n_filtered=n_filtered,
        fit=ols_fit(ref, pred),
        pearson_r=pearson_r(ref, pred),
        rmse=rmse(ref, pred),
        d_r=index_of_agreement(ref, pred, c=c),
        t_values={u.unit_id: unit_t_statistic(u) for u in units},
        qq=qq_pairs(pred, ref, qq_k),
    )
