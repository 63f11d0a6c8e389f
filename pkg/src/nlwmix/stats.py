"""Small statistical helpers: confidence intervals and least-squares fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sp_stats

__all__ = ["wilson_ci", "LineFit", "line_fit", "origin_fit", "exp_decay_fit"]


def wilson_ci(successes: int, n: int, confidence: float = 0.95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = sp_stats.norm.ppf(0.5 + confidence / 2.0)
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    n: int

    def slope_ci(self, confidence: float = 0.95):
        if self.n <= 2:
            return -np.inf, np.inf
        tq = sp_stats.t.ppf(0.5 + confidence / 2.0, self.n - 2)
        return self.slope - tq * self.slope_se, self.slope + tq * self.slope_se


def line_fit(x, y) -> LineFit:
    """Ordinary least squares y = a + b x with R^2 and slope standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two same-length samples of size >= 2")
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0.0:
        raise ValueError("degenerate abscissa")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - intercept - slope * x
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = max(1, n - 2)
    slope_se = float(np.sqrt(ss_res / dof / sxx))
    return LineFit(float(slope), float(intercept), float(r2), slope_se, n)


def origin_fit(x, y):
    """Least squares y = b x through the origin; returns (slope, r2).

    R^2 uses the uncentered convention 1 - sum r^2 / sum y^2 appropriate for
    a no-intercept model.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sxx = float(x @ x)
    if sxx == 0.0:
        raise ValueError("degenerate abscissa")
    slope = float(x @ y) / sxx
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(y @ y)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, r2


def exp_decay_fit(t, y, floor: float = 0.0):
    """Fit y ~ y0 * exp(-rate * t) + c by nonlinear least squares.

    Returns (y0, rate, c).  Initial guesses come from the curve endpoints;
    `floor` lower-bounds the constant.
    """
    from scipy.optimize import curve_fit

    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    c0 = max(float(y[-1]), floor)
    a0 = max(float(y[0] - c0), 1e-12)
    r0 = 1.0 / max(t[-1] - t[0], 1e-12)

    def model(tt, a, r, c):
        return a * np.exp(-r * tt) + c

    popt, _ = curve_fit(
        model, t, y, p0=(a0, r0, c0),
        bounds=([0.0, 1e-12, floor], [np.inf, np.inf, np.inf]),
        maxfev=20000,
    )
    return tuple(float(v) for v in popt)
