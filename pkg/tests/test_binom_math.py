import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from truncpois.binom_math import (
    BranchAbsentError,
    TruncatedPoissonParams,
    binom_cdf_lt,
    binom_sf_geq,
    log_binom_pmf,
    log_binom_sf_geq,
    truncation_q,
    truncation_q_direct,
)


def exact_pmf(n, k, p: Fraction) -> Fraction:
    return math.comb(n, k) * p**k * (1 - p) ** (n - k)


def branch_exists(n, p, B):
    return B < n and p > 0


# ---------------------------------------------------------------- params


def test_params_validation():
    TruncatedPoissonParams(1, 0.0, 1, 1.0)
    for bad in [(0, 0.5, 1, 1.0), (3, -0.1, 1, 1.0), (3, 1.5, 1, 1.0), (3, 0.5, 0, 1.0), (3, 0.5, 1, 0.0),
                (3, 0.5, 1, -1.0), (2.5, 0.5, 1, 1.0)]:
        with pytest.raises(ValueError):
            TruncatedPoissonParams(*bad)


def test_never_truncates_flag():
    assert TruncatedPoissonParams(5, 0.5, 5).never_truncates
    assert TruncatedPoissonParams(5, 0.5, 9).never_truncates
    assert not TruncatedPoissonParams(5, 0.5, 4).never_truncates
    assert TruncatedPoissonParams(5, 0.5, 4, 1.0).with_sigma(2.0).sigma == 2.0


# ---------------------------------------------------------------- log pmf


def test_log_pmf_examples():
    assert log_binom_pmf(0, 0, 0.3) == 0.0
    assert log_binom_pmf(2, 1, 0.5) == pytest.approx(math.log(0.5), abs=1e-15)
    exact = math.log(Fraction(math.comb(50, 25), 2**50))
    assert abs(log_binom_pmf(50, 25, 0.5) - exact) <= 1e-13 * abs(exact)


def test_log_pmf_domain():
    with pytest.raises(ValueError):
        log_binom_pmf(3, 4, 0.5)
    with pytest.raises(ValueError):
        log_binom_pmf(3, -1, 0.5)


def test_log_pmf_degenerate_p():
    assert log_binom_pmf(5, 0, 0.0) == 0.0
    assert log_binom_pmf(5, 1, 0.0) == -math.inf
    assert log_binom_pmf(5, 5, 1.0) == 0.0
    assert log_binom_pmf(5, 4, 1.0) == -math.inf


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 300),
    data=st.data(),
    num=st.integers(1, 999),
)
def test_log_pmf_matches_rational_arithmetic(n, data, num):
    k = data.draw(st.integers(0, n))
    p = Fraction(num, 1000)
    exact = exact_pmf(n, k, p)
    got = log_binom_pmf(n, k, float(p))
    # p itself is rounded to a double, so compare against the pmf at that double
    ref = float(mpmath.log(mpmath.binomial(n, k)) + k * mpmath.log(float(p)) + (n - k) * mpmath.log1p(-float(p)))
    assert math.isclose(got, ref, rel_tol=1e-13, abs_tol=1e-13)
    assert exact > 0


def test_log_pmf_large_n_against_mpmath():
    mpmath.mp.dps = 40
    n, p = 10**8, 1e-2
    for k in (10**6 - 5000, 10**6, 10**6 + 3333):
        ref = mpmath.log(mpmath.binomial(n, k)) + k * mpmath.log(p) + (n - k) * mpmath.log1p(-p)
        assert abs(log_binom_pmf(n, k, p) - float(ref)) <= 1e-12 * abs(float(ref))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(0, 400), p=st.floats(0.0, 1.0))
def test_pmf_sums_to_one(n, p):
    total = math.fsum(np.exp(log_binom_pmf(n, np.arange(n + 1), p)))
    assert abs(total - 1.0) <= 1e-12


# ---------------------------------------------------------------- tails


def test_sf_examples():
    assert binom_sf_geq(2, 3, 0.9) == 0.0
    assert binom_sf_geq(2, 1, 0.5) == pytest.approx(0.75, abs=1e-15)
    assert binom_sf_geq(0, 0, 0.5) == 1.0
    assert binom_sf_geq(7, -2, 0.3) == 1.0


@settings(max_examples=150, deadline=None)
@given(n=st.integers(0, 60), data=st.data(), num=st.integers(0, 1000))
def test_sf_against_exact_sum(n, data, num):
    B = data.draw(st.integers(-1, n + 2))
    p = Fraction(num, 1000)
    exact = sum((exact_pmf(n, k, p) for k in range(max(B, 0), n + 1)), Fraction(0))
    assert abs(binom_sf_geq(n, B, float(p)) - float(exact)) <= 1e-14
    assert abs(binom_cdf_lt(n, B, float(p)) - float(1 - exact)) <= 1e-14


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 200), data=st.data(), p=st.floats(0.0, 1.0), dp=st.floats(0.0, 0.3))
def test_sf_monotone(n, data, p, dp):
    B = data.draw(st.integers(0, n + 1))
    p2 = min(1.0, p + dp)
    slack = 1e-14
    assert binom_sf_geq(n, B, p2) >= binom_sf_geq(n, B, p) - slack
    assert binom_sf_geq(n + 1, B, p) >= binom_sf_geq(n, B, p) - slack
    assert binom_sf_geq(n, B + 1, p) <= binom_sf_geq(n, B, p) + slack


def test_log_sf_deep_tail():
    # Pr[Binom(200, 0.01) >= 200] = 1e-400 is below double range
    assert math.isclose(log_binom_sf_geq(200, 200, 0.01), 200 * math.log(0.01), rel_tol=1e-12)
    assert math.isclose(log_binom_sf_geq(50, 10, 0.2), math.log(binom_sf_geq(50, 10, 0.2)), rel_tol=1e-12)


# ---------------------------------------------------------------- q


@pytest.mark.parametrize("fn", [truncation_q, truncation_q_direct])
def test_q_examples(fn):
    assert fn(TruncatedPoissonParams(2, 1.0, 1)) == pytest.approx(0.5, abs=1e-15)
    assert fn(TruncatedPoissonParams(3, 0.5, 1)) == pytest.approx(2 / 9, abs=1e-15)
    with pytest.raises(BranchAbsentError):
        fn(TruncatedPoissonParams(100, 0.0, 10))
    with pytest.raises(BranchAbsentError):
        fn(TruncatedPoissonParams(10, 0.5, 10))


def test_q_cross_check_small():
    prm = TruncatedPoissonParams(5, 0.3, 4)
    assert abs(truncation_q(prm) - truncation_q_direct(prm)) <= 1e-12


def test_q_exact_rational():
    # q = p * sum_s Pr[s] / Pr[s >= B] * B / (s+1), all in rationals
    n, p, B = 7, Fraction(3, 10), 2
    m = n - 1
    tail = sum(exact_pmf(m, s, p) for s in range(B, m + 1))
    q = p * sum(exact_pmf(m, s, p) / tail * Fraction(B, s + 1) for s in range(B, m + 1))
    assert abs(truncation_q(TruncatedPoissonParams(n, 0.3, B)) - float(q)) <= 1e-15


def test_q_underflowing_branch_still_defined():
    # B = n - 1: only the all-included outcome truncates, so q = p (n-1)/n exactly
    prm = TruncatedPoissonParams(200, 0.01, 199)
    assert math.isclose(truncation_q(prm), 0.01 * 199 / 200, rel_tol=1e-13)
    assert math.isclose(truncation_q_direct(prm), 0.01 * 199 / 200, rel_tol=1e-13)


def test_q_always_truncate_limit():
    for n, B in [(4, 2), (10, 3), (1000, 64)]:
        assert truncation_q(TruncatedPoissonParams(n, 1.0, B)) == pytest.approx(B / n, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 400), data=st.data(), p=st.floats(1e-4, 1.0))
def test_q_identity_and_bound(n, data, p):
    B = data.draw(st.integers(1, n - 1))
    prm = TruncatedPoissonParams(n, p, B)
    q, qd = truncation_q(prm), truncation_q_direct(prm)
    assert abs(q - qd) <= 1e-12
    assert 0.0 <= q <= p * B / (B + 1) + 1e-15
