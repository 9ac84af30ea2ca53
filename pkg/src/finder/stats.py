"""Pooled two-sample t-test and power-law fitting."""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    # modified Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    t2 = t * t
    if t2 < df:
        # df / (df + t^2) rounds to 1 for small t; use the complementary argument
        return 1.0 - betainc(0.5, df / 2.0, t2 / (df + t2))
    return betainc(df / 2.0, 0.5, df / (df + t2))


def pooled_se(s1: float, n1: int, s2: float, n2: int) -> float:
    pooled = ((n1 - 1) * s1 ** 2 + (n2 - 1) * s2 ** 2) / (n1 + n2 - 2)
    return math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))


def t_test(mean1: float, s1: float, n1: int, mean2: float, s2: float, n2: int) -> tuple[float, float]:
    """Pooled-variance two-sample t-test from summary statistics.

    Returns (t, two-tailed p) with n1 + n2 - 2 degrees of freedom.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("each group needs at least two samples")
    se = pooled_se(s1, n1, s2, n2)
    if se == 0.0:
        if mean1 == mean2:
            return 0.0, 1.0
        log.warning("zero standard error with unequal means; reporting p = 0")
        return math.copysign(math.inf, mean1 - mean2), 0.0
    t = (mean1 - mean2) / se
    return t, t_two_tailed_p(t, n1 + n2 - 2)


def t_test_samples(a, b) -> tuple[float, float]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return t_test(a.mean(), a.std(ddof=1), len(a), b.mean(), b.std(ddof=1), len(b))


def fit_power_law(sizes, errors) -> tuple[float, float]:
    """Least-squares line through (log10 size, log10 error); returns (slope, intercept)."""
    slope, intercept = np.polyfit(np.log10(sizes), np.log10(errors), 1)
    return float(slope), float(intercept)
