"""Chi-square and normal quantiles.

The chi-square quantile inverts the regularized lower incomplete gamma
function P(a, x) with a safeguarded Newton iteration; P itself uses the
power series for x < a + 1 and Lentz's continued fraction otherwise.
"""

from __future__ import annotations

import math
from statistics import NormalDist

from .errors import DomainError

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 500


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) = x^a e^{-x} / Gamma(a+1) * sum x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cfrac(a: float, x: float) -> float:
    # Q(a, x) by the modified Lentz method
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function P(a, x)."""
    if a <= 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cfrac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), accurate in the tail."""
    if a <= 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cfrac(a, x)


def chi2_cdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    return gammainc_lower(df / 2.0, x / 2.0)


def chi2_sf(x: float, df: float) -> float:
    if x <= 0:
        return 1.0
    return gammainc_upper(df / 2.0, x / 2.0)


def chi2_quantile(df: float, alpha: float) -> float:
    """Upper-tail critical value: the ``x`` with ``P[chi2_df > x] = alpha``.

    This is the tabulated value used for a test at significance ``alpha``,
    e.g. ``chi2_quantile(2, 0.01) == 9.2103...``.
    """
    if not df > 0:
        raise DomainError(f"df must be positive, got {df}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    a = df / 2.0

    # bracket in the gamma variable t = x/2, then Newton on log Q (or P) with bisection fallback
    lo, hi = 0.0, max(1.0, a)
    while gammainc_upper(a, hi) > alpha:
        lo, hi = hi, 2.0 * hi
    t = 0.5 * (lo + hi)
    use_upper = alpha < 0.5
    target = math.log(alpha) if use_upper else math.log1p(-alpha)
    for _ in range(200):
        if use_upper:
            val = gammainc_upper(a, t)
            resid = math.log(max(val, _TINY)) - target
        else:
            val = gammainc_lower(a, t)
            resid = -(math.log(max(val, _TINY)) - target)
        # residual is increasing in t: Q decreasing, P increasing (sign flipped above)
        if resid > 0:
            lo = t
        else:
            hi = t
        pdf = math.exp((a - 1.0) * math.log(t) - t - math.lgamma(a)) if t > 0 else 0.0
        step = resid * val / pdf if pdf > 0 else float("inf")
        t_new = t + step
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if abs(t_new - t) <= 1e-14 * max(1.0, t):
            t = t_new
            break
        t = t_new
    return 2.0 * t


def normal_quantile(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    return NormalDist().inv_cdf(p)
