"""Hypothesis tests used by the group analyses.

The t, F and chi-square distributions are evaluated from the regularized
incomplete beta and gamma functions implemented here (continued fractions
and power series), so the module needs nothing beyond numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10000


class DegenerateSampleError(ValueError):
    pass


class SingularDesignError(ValueError):
    pass


@dataclass(frozen=True)
class StatTestResult:
    test: str  # "paired_t" | "chi2_yates" | "chi2" | "ancova_f"
    statistic: float
    df: tuple[float, ...]
    p: float
    effect: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p-value {self.p} outside [0, 1]")
        if any(d <= 0 for d in self.df):
            raise ValueError("degrees of freedom must be positive")
        if self.effect is not None and not 0.0 <= self.effect <= 1.0:
            raise ValueError(f"effect size {self.effect} outside [0, 1]")


@dataclass(frozen=True)
class GroupSummary:
    n: int
    mean: float
    sd: float
    ci95_lo: float
    ci95_hi: float


# --------------------------------------------------------------------------
# special functions


def _betacf(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def reg_inc_beta(x: float, a: float, b: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(x, a, b) / a
    return 1.0 - front * _betacf(1.0 - x, b, a) / b


def _gamma_series(x: float, s: float) -> float:
    ap = s
    term = total = 1.0 / s
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + s * math.log(x) - math.lgamma(s))
    raise ArithmeticError(f"gamma series did not converge for s={s}, x={x}")


def _gamma_cf(x: float, s: float) -> float:
    # upper regularized gamma Q(s, x) by Lentz's method
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
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
            return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h
    raise ArithmeticError(f"gamma continued fraction did not converge for s={s}, x={x}")


def reg_inc_gamma_lower(x: float, s: float) -> float:
    """Regularized lower incomplete gamma P(s, x)."""
    if s <= 0:
        raise ValueError("s must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 0.0
    if x < s + 1.0:
        return _gamma_series(x, s)
    return 1.0 - _gamma_cf(x, s)


def reg_inc_gamma_upper(x: float, s: float) -> float:
    if s <= 0:
        raise ValueError("s must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        return 1.0 - _gamma_series(x, s)
    return _gamma_cf(x, s)


# --------------------------------------------------------------------------
# distributions


def _check_df(*dfs: float) -> None:
    for d in dfs:
        if not d > 0:
            raise ValueError("degrees of freedom must be positive")


def t_sf(t: float, df: float) -> float:
    _check_df(df)
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    if t2 < df:
        # near zero df/(df + t^2) rounds to 1; use the complementary argument
        tail = 0.5 - 0.5 * reg_inc_beta(t2 / (df + t2), 0.5, 0.5 * df)
    else:
        tail = 0.5 * reg_inc_beta(df / (df + t2), 0.5 * df, 0.5)
    return tail if t > 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df) if t > 0 else t_sf(-t, df)


def f_cdf(f: float, d1: float, d2: float) -> float:
    _check_df(d1, d2)
    if f <= 0:
        return 0.0
    return reg_inc_beta(d1 * f / (d1 * f + d2), 0.5 * d1, 0.5 * d2)


def f_sf(f: float, d1: float, d2: float) -> float:
    _check_df(d1, d2)
    if f <= 0:
        return 1.0
    return reg_inc_beta(d2 / (d2 + d1 * f), 0.5 * d2, 0.5 * d1)


def chi2_cdf(x: float, k: float) -> float:
    _check_df(k)
    if x <= 0:
        return 0.0
    return reg_inc_gamma_lower(0.5 * x, 0.5 * k)


def chi2_sf(x: float, k: float) -> float:
    _check_df(k)
    if x <= 0:
        return 1.0
    return reg_inc_gamma_upper(0.5 * x, 0.5 * k)


def t_ppf(q: float, df: float) -> float:
    """Quantile of Student's t by bisection on the CDF."""
    _check_df(df)
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    if q < 0.5:
        return -t_ppf(1.0 - q, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < q:
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def _clamp01(p: float) -> float:
    return min(1.0, max(0.0, p))


# --------------------------------------------------------------------------
# tests


def paired_t_test(x: Sequence[float], y: Sequence[float]) -> StatTestResult:
    """Two-tailed paired t-test on the differences ``x - y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("paired samples must be 1-d and of equal length")
    n = x.size
    if n < 2:
        raise DegenerateSampleError("n < 2")
    d = x - y
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError("degenerate sample: differences have zero variance")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    p = _clamp01(2.0 * t_sf(abs(t), n - 1))
    return StatTestResult("paired_t", t, (n - 1,), p)


def chi2_yates(table, correction: bool = True, clamp: bool = True) -> StatTestResult:
    """Pearson chi-square for a 2x2 table, Yates-corrected by default.

    ``|O - E| - 0.5`` is floored at zero so a perfectly proportional table
    gives a statistic of 0. ``clamp=False`` squares the raw difference
    instead, as some packages do.
    """
    obs = np.asarray(table, dtype=float)
    if obs.shape != (2, 2):
        raise ValueError("expected a 2x2 table")
    if (obs < 0).any():
        raise ValueError("counts must be non-negative")
    rows = obs.sum(axis=1)
    cols = obs.sum(axis=0)
    if (rows == 0).any() or (cols == 0).any():
        raise DegenerateSampleError("zero marginal")
    n = obs.sum()
    expected = np.outer(rows, cols) / n
    dev = np.abs(obs - expected)
    if correction:
        dev = np.maximum(dev - 0.5, 0.0) if clamp else dev - 0.5
    stat = float(np.sum(dev**2 / expected))
    return StatTestResult("chi2_yates" if correction else "chi2", stat, (1,), _clamp01(chi2_sf(stat, 1)))


def _rss(X: np.ndarray, y: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    return float(r @ r)


def _full_rank(X: np.ndarray) -> bool:
    return np.linalg.matrix_rank(X) == X.shape[1]


def ancova(y, group, covariates=None) -> StatTestResult:
    """F-test of a binary group term in ``y ~ 1 + group + covariates``.

    Compares the residual sum of squares of the full model with the model
    that drops the group column. ``effect`` is partial eta squared.
    """
    y = np.asarray(y, dtype=float)
    g = np.asarray(group, dtype=float)
    n = y.size
    if g.shape != y.shape:
        raise ValueError("y and group lengths differ")
    if covariates is None:
        C = np.empty((n, 0))
    else:
        C = np.asarray(covariates, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        if C.shape[0] != n:
            raise ValueError("covariate length differs from y")
    k = C.shape[1]
    if n < 4 or n - 2 - k < 1:
        raise DegenerateSampleError(f"n = {n} is too small for {k} covariate(s)")
    levels = set(np.unique(g).tolist())
    if not levels <= {0.0, 1.0} or len(levels) < 2:
        raise ValueError("group must be 0/1 with both levels present")

    ones = np.ones((n, 1))
    full = np.hstack([ones, g[:, None], C])
    reduced = np.hstack([ones, C])
    if not _full_rank(full):
        raise SingularDesignError("singular design")
    ss_full = _rss(full, y)
    ss_group = max(_rss(reduced, y) - ss_full, 0.0)
    df2 = n - full.shape[1]
    if ss_full <= 0.0:
        raise DegenerateSampleError("degenerate sample: perfect fit leaves no residual variance")
    f = ss_group / (ss_full / df2)
    eta = ss_group / (ss_group + ss_full)
    return StatTestResult("ancova_f", f, (1, df2), _clamp01(f_sf(f, 1, df2)), eta)


def ancova_one_cov(y, group, cov) -> StatTestResult:
    return ancova(y, group, cov)


def holm(pvals: Sequence[float], alpha: float = 0.05) -> list[bool]:
    """Holm step-down rejections, returned in input order."""
    p = [float(v) for v in pvals]
    for v in p:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"p-value {v} outside [0, 1]")
    m = len(p)
    order = sorted(range(m), key=lambda i: p[i])
    reject = [False] * m
    for rank, i in enumerate(order):
        if p[i] <= alpha / (m - rank):
            reject[i] = True
        else:
            break
    return reject


def group_summary(values: Sequence[float]) -> GroupSummary:
    """Mean, sample SD and t-based 95% confidence interval of the mean."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 2:
        raise DegenerateSampleError("n < 2")
    mean = float(np.mean(v))
    sd = float(np.std(v, ddof=1))
    half = t_ppf(0.975, n - 1) * sd / math.sqrt(n)
    return GroupSummary(n, mean, sd, mean - half, mean + half)
