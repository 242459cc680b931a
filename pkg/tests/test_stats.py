import itertools
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special
from scipy import stats as sps

from onlineshift import stats
from onlineshift.stats import (
    DegenerateSampleError,
    SingularDesignError,
    ancova,
    ancova_one_cov,
    chi2_cdf,
    chi2_yates,
    f_cdf,
    group_summary,
    holm,
    paired_t_test,
    reg_inc_beta,
    reg_inc_gamma_lower,
    t_cdf,
    t_ppf,
)


# --- special functions -------------------------------------------------------

def test_inc_beta_identities():
    for a in (0.1, 0.5, 1, 3.7, 25, 400):
        assert reg_inc_beta(0.5, a, a) == pytest.approx(0.5, abs=1e-12)
        assert reg_inc_beta(1.0, a, 2.0) == 1.0
        assert reg_inc_beta(0.0, a, 2.0) == 0.0


def test_inc_beta_against_scipy():
    rng = np.random.default_rng(1)
    for _ in range(3000):
        a, b = np.exp(rng.uniform(-2, 6, size=2))
        x = rng.random()
        assert abs(reg_inc_beta(x, a, b) - special.betainc(a, b, x)) <= 1e-10


def test_inc_gamma_against_scipy():
    rng = np.random.default_rng(2)
    for _ in range(3000):
        s = math.exp(rng.uniform(-2, 6))
        x = rng.uniform(0, 3 * s + 10)
        assert abs(reg_inc_gamma_lower(x, s) - special.gammainc(s, x)) <= 1e-10


def test_domain_errors():
    with pytest.raises(ValueError):
        reg_inc_beta(1.5, 1, 1)
    with pytest.raises(ValueError):
        reg_inc_beta(0.5, 0, 1)
    with pytest.raises(ValueError):
        reg_inc_gamma_lower(-1, 2)
    with pytest.raises(ValueError):
        t_cdf(1.0, 0)


def test_chi2_95_by_integration():
    # chi-square(1) density after substituting x = u^2 is 2 phi(u)
    value, _ = integrate.quad(lambda u: 2 * math.exp(-u * u / 2) / math.sqrt(2 * math.pi), 0, math.sqrt(3.841))
    assert value == pytest.approx(0.95, abs=1e-4)
    assert chi2_cdf(3.841, 1) == pytest.approx(value, abs=1e-10)


def test_t_cdf_examples():
    for nu in (1, 2, 5.5, 46, 1e4):
        assert t_cdf(0.0, nu) == 0.5
    closed = 0.5 + 3.4641 / (2 * math.sqrt(3.4641**2 + 2))
    assert t_cdf(3.4641, 2) == pytest.approx(closed, abs=1e-12)
    assert t_cdf(3.4641, 2) == pytest.approx(0.9629, abs=1e-4)


def test_f_example():
    assert 1 - f_cdf(8.53, 1, 46) == pytest.approx(0.005, abs=0.001)


def test_cdfs_against_scipy():
    rng = np.random.default_rng(3)
    for _ in range(2000):
        nu, d2 = np.exp(rng.uniform(-1, 5, size=2))
        d1 = math.exp(rng.uniform(-1, 3))
        t = rng.normal(0, 4)
        f = rng.exponential(3)
        assert abs(t_cdf(t, nu) - sps.t.cdf(t, nu)) <= 1e-10
        assert abs(f_cdf(f, d1, d2) - sps.f.cdf(f, d1, d2)) <= 1e-10
        assert abs(chi2_cdf(f * 3, d1) - sps.chi2.cdf(f * 3, d1)) <= 1e-10
        q = rng.uniform(0.001, 0.999)
        assert t_ppf(q, nu) == pytest.approx(sps.t.ppf(q, nu), rel=1e-8, abs=1e-9)


@given(st.floats(-50, 50), st.floats(0.5, 500))
@settings(max_examples=300, deadline=None)
def test_f_t_relation(t, nu):
    assert abs(f_cdf(t * t, 1, nu) - (2 * t_cdf(abs(t), nu) - 1)) <= 1e-9


# --- paired t ----------------------------------------------------------------

def test_paired_t_hand_case():
    r = paired_t_test([1, 2, 3], [0, 0, 0])
    assert r.statistic == pytest.approx(3.4641, abs=1e-4)
    assert r.df == (2,)
    assert r.p == pytest.approx(0.0742, abs=1e-3)


def test_paired_t_degenerate():
    with pytest.raises(DegenerateSampleError):
        paired_t_test([1, 2, 3], [1, 2, 3])
    with pytest.raises(DegenerateSampleError, match="n < 2"):
        paired_t_test([1], [2])


def test_paired_t_against_scipy_and_symmetry():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        x, y = rng.normal(size=(2, n))
        r = paired_t_test(x, y)
        ref = sps.ttest_rel(x, y)
        assert r.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert r.p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-12)
        back = paired_t_test(y, x)
        assert back.statistic == -r.statistic and back.p == r.p
        shifted = paired_t_test(x + 7.5, y + 7.5)
        assert shifted.statistic == pytest.approx(r.statistic, rel=1e-9)


# --- chi-square --------------------------------------------------------------

def yates_by_hand(a, b, c, d):
    """Textbook shortcut formula N(|ad - bc| - N/2)^2 / (row and column products)."""
    n = a + b + c + d
    num = n * max(abs(a * d - b * c) - n / 2, 0) ** 2
    return num / ((a + b) * (c + d) * (a + c) * (b + d))


def test_chi2_table_counts():
    anx = chi2_yates([[17, 5], [13, 14]])
    assert anx.statistic == pytest.approx(yates_by_hand(17, 5, 13, 14), rel=1e-12)
    assert anx.statistic == pytest.approx(3.2, abs=0.05) and anx.p == pytest.approx(0.07, abs=0.01)
    dep = chi2_yates([[17, 3], [13, 16]])
    assert dep.statistic == pytest.approx(6.4, abs=0.05) and dep.p == pytest.approx(0.01, abs=0.005)
    uncorrected = chi2_yates([[17, 5], [13, 14]], correction=False)
    assert uncorrected.statistic == pytest.approx(4.3, abs=0.1)


def test_chi2_proportional_and_errors():
    r = chi2_yates([[10, 20], [5, 10]])
    assert r.statistic == 0.0 and r.p == 1.0
    with pytest.raises(DegenerateSampleError):
        chi2_yates([[0, 0], [3, 4]])
    with pytest.raises(ValueError):
        chi2_yates([[1, 2, 3], [1, 2, 3]])


def test_chi2_against_scipy():
    rng = np.random.default_rng(6)
    for _ in range(300):
        t = rng.integers(1, 40, size=(2, 2))
        ref = sps.chi2_contingency(t, correction=True)
        r = chi2_yates(t)
        assert r.statistic == pytest.approx(ref[0], rel=1e-10, abs=1e-12)
        assert r.p == pytest.approx(ref[1], rel=1e-8, abs=1e-12)


# --- ANCOVA ------------------------------------------------------------------

def exact_rss(X, y):
    """Residual sum of squares from the normal equations solved in exact rationals."""
    X = [[Fraction(v) for v in row] for row in X]
    y = [Fraction(v) for v in y]
    k = len(X[0])
    A = [[sum(r[i] * r[j] for r in X) for j in range(k)] + [sum(r[i] * yy for r, yy in zip(X, y))] for i in range(k)]
    for col in range(k):
        piv = next(r for r in range(col, k) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        for r in range(k):
            if r != col and A[r][col] != 0:
                f = A[r][col] / A[col][col]
                A[r] = [a - f * b for a, b in zip(A[r], A[col])]
    beta = [A[i][k] / A[i][i] for i in range(k)]
    return sum((yy - sum(b * v for b, v in zip(beta, r))) ** 2 for r, yy in zip(X, y))


def oracle_f(y, g, cov):
    full = [[1, gi, ci] for gi, ci in zip(g, cov)]
    reduced = [[1, ci] for ci in cov]
    ss_full = exact_rss(full, y)
    ss_red = exact_rss(reduced, y)
    df2 = len(y) - 3
    return float((ss_red - ss_full) / (ss_full / df2)), float((ss_red - ss_full) / (ss_red - ss_full + ss_full))


def test_ancova_hand_case():
    y, g, c = [1, 2, 3, 6, 7, 9], [0, 0, 0, 1, 1, 1], [1, 2, 3, 1, 2, 3]
    r = ancova_one_cov(y, g, c)
    assert r.statistic == pytest.approx(307.2, abs=0.1)
    assert r.df == (1, 3)
    assert r.effect == pytest.approx(0.990, abs=0.001)
    f, eta = oracle_f(y, g, c)
    assert f == pytest.approx(307.2, abs=1e-9)


def test_ancova_random_designs_match_exact_oracle():
    rng = random.Random(8)
    for _ in range(100):
        n = rng.randint(6, 40)
        g = [i % 2 for i in range(n)]
        rng.shuffle(g)
        cov = [rng.choice([0, 1]) if rng.random() < 0.5 else round(rng.gauss(0, 1), 3) for _ in range(n)]
        y = [round(rng.gauss(0, 1) + 0.5 * gi, 4) for gi in g]
        try:
            r = ancova_one_cov(y, g, cov)
        except SingularDesignError:
            continue
        f, eta = oracle_f(y, g, cov)
        assert r.statistic == pytest.approx(f, rel=1e-8)
        assert r.effect == pytest.approx(eta, rel=1e-8)
        assert r.effect == pytest.approx(r.statistic / (r.statistic + n - 3), rel=1e-9)


def test_ancova_invariances():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n = int(rng.integers(6, 30))
        g = np.arange(n) % 2
        cov = rng.normal(size=n)
        y = rng.normal(size=n) + g
        r = ancova(y, g, cov)
        flipped = ancova(y, 1 - g, cov)
        scaled = ancova(y * 3.7, g, cov)
        for other in (flipped, scaled):
            assert other.statistic == pytest.approx(r.statistic, rel=1e-9)
            assert other.p == pytest.approx(r.p, rel=1e-9)
            assert other.effect == pytest.approx(r.effect, rel=1e-9)


def test_ancova_singular_and_small():
    with pytest.raises(SingularDesignError, match="singular"):
        ancova([1, 2, 3, 4, 5, 6], [0, 0, 0, 1, 1, 1], [0, 0, 0, 1, 1, 1])
    with pytest.raises(SingularDesignError):
        ancova([1, 2, 3, 4, 5, 6], [0, 0, 0, 1, 1, 1], [5] * 6)
    with pytest.raises(DegenerateSampleError):
        ancova([1, 2, 3], [0, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        ancova([1, 2, 3, 4], [0, 0, 0, 0], [1, 2, 3, 5])


def test_no_covariate_equals_pooled_t_squared():
    rng = np.random.default_rng(10)
    for _ in range(50):
        n = int(rng.integers(5, 30))
        g = np.arange(n) % 2
        y = rng.normal(size=n) + 0.8 * g
        r = ancova(y, g)
        t = sps.ttest_ind(y[g == 1], y[g == 0], equal_var=True)
        assert r.statistic == pytest.approx(t.statistic**2, rel=1e-9)
        assert r.p == pytest.approx(t.pvalue, rel=1e-8)
        assert r.df == (1, n - 2)


# --- Holm --------------------------------------------------------------------

def holm_oracle(p, alpha):
    """Step-down by explicit enumeration: H_i is rejected iff every hypothesis at
    least as small passes its own Bonferroni-style threshold."""
    m = len(p)
    out = []
    for i in range(m):
        ok = True
        for j in range(m):
            if (p[j], j) <= (p[i], i):
                rank = sum(1 for k in range(m) if (p[k], k) < (p[j], j))
                if p[j] > alpha / (m - rank):
                    ok = False
        out.append(ok)
    return out


def test_holm_examples():
    assert holm([0.001, 0.011, 0.02, 0.04]) == [True] * 4
    assert holm([0.001, 0.02, 0.03, 0.04]) == [True, False, False, False]
    assert holm([1.0] * 5) == [False] * 5
    assert holm([]) == []
    with pytest.raises(ValueError):
        holm([0.5, 1.2])


def test_holm_against_oracle():
    rng = random.Random(12)
    for _ in range(1000):
        m = rng.randint(1, 20)
        p = [rng.choice([rng.random() * 0.06, rng.random(), 0.01, 0.05 / m]) for _ in range(m)]
        alpha = rng.choice([0.05, 0.01, 0.1])
        flags = holm(p, alpha)
        assert flags == holm_oracle(p, alpha)
        bonf = [v <= alpha / m for v in p]
        unc = [v <= alpha for v in p]
        assert all(f for f, b in zip(flags, bonf) if b)
        assert all(u for f, u in zip(flags, unc) if f)
        perm = list(range(m))
        rng.shuffle(perm)
        permuted = holm([p[i] for i in perm], alpha)
        assert [permuted[perm.index(i)] for i in range(m)] == flags


def test_table_three_holm_family():
    # only the smallest survives when the nine anxiety-group p-values form one family
    p = [0.001, 0.007, 0.01, 0.01, 0.02, 0.10, 0.25, 0.52, 0.71]
    assert holm(p) == [True] + [False] * 8


# --- group summaries ---------------------------------------------------------

def sample_with(n, mean, sd, seed=0):
    z = np.random.default_rng(seed).normal(size=n)
    z = (z - z.mean()) / z.std(ddof=1)
    return mean + sd * z


@pytest.mark.parametrize("n, mean, sd, half, tol", [(20, 0.86, 0.43, 0.201, 0.005), (29, 7.54, 2.46, 0.936, 0.02)])
def test_group_summary_half_widths(n, mean, sd, half, tol):
    s = group_summary(sample_with(n, mean, sd))
    assert s.n == n and s.mean == pytest.approx(mean) and s.sd == pytest.approx(sd)
    assert (s.ci95_hi - s.ci95_lo) / 2 == pytest.approx(half, abs=tol)
    ref = sps.t.interval(0.95, n - 1, loc=mean, scale=sd / math.sqrt(n))
    assert s.ci95_lo == pytest.approx(ref[0], rel=1e-9)


def test_group_summary_degenerate():
    s = group_summary([2.5, 2.5, 2.5])
    assert s.sd == 0 and s.ci95_lo == s.ci95_hi == 2.5
    with pytest.raises(DegenerateSampleError):
        group_summary([1.0])


def test_result_validation():
    with pytest.raises(ValueError):
        stats.StatTestResult("paired_t", 1.0, (1,), 1.5)
    with pytest.raises(ValueError):
        stats.StatTestResult("ancova_f", 1.0, (1, 0), 0.5)
