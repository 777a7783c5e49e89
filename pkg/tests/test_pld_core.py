import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from truncpois import pld_core
from truncpois.binom_math import TruncatedPoissonParams
from truncpois.dominating_pairs import Adjacency, GaussianMixture, MixturePair, build_pair, poisson_pair
from truncpois.oracle import hockey_stick_mixture
from truncpois.pld_core import (
    OPTIMISTIC,
    PESSIMISTIC,
    AccountingResult,
    DiscretePLD,
    NumericalError,
    account,
    account_poisson,
    compose,
    composed_plds,
    convolve,
    delta_at,
    discretize,
    epsilon_at,
    mix,
)

# delta between N(1,1) and N(0,1) at eps = 0, pinned from the closed form
GAUSS_DELTA_0 = stats.norm.cdf(0.5) - stats.norm.cdf(-0.5)
# account(n=3, p=0.5, B=1, sigma=1, add-remove, eps=1): weighted per-branch hockey stick of the
# dominating pair, 0.25 * delta_1 + 0.75 * delta_2, computed by the oracle module and frozen
N3_ORACLE_DELTA = 0.0579305771803167


def gaussian_pair(sigma=1.0, shift=1.0):
    return MixturePair(GaussianMixture(sigma, ((1.0, shift),)), GaussianMixture(sigma, ((1.0, 0.0),)))


COARSE_07 = discretize(gaussian_pair(0.7), 1e-3)
COARSE_08 = discretize(gaussian_pair(0.8), 1e-3)


@pytest.fixture(scope="module")
def gauss_pess():
    return discretize(gaussian_pair(), 1e-4, PESSIMISTIC)


@pytest.fixture(scope="module")
def gauss_opt():
    return discretize(gaussian_pair(), 1e-4, OPTIMISTIC)


# ---------------------------------------------------------------- DiscretePLD


def test_pld_validation():
    with pytest.raises(ValueError):
        DiscretePLD(0.0, 0, np.array([1.0]))
    with pytest.raises(ValueError):
        DiscretePLD(0.1, 0, np.array([1.2, -0.2]))
    with pytest.raises(NumericalError):
        DiscretePLD(0.1, 0, np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        DiscretePLD(0.1, 0, np.array([1.0]), direction="sideways")
    x = DiscretePLD(0.1, -1, np.array([0.25, 0.5, 0.25]))
    np.testing.assert_allclose(x.losses, [-0.1, 0.0, 0.1])
    with pytest.raises(ValueError):
        x.masses[0] = 0.3


def test_accounting_result_validation():
    with pytest.raises(ValueError):
        AccountingResult(1.0, 1.5, 1.0, 1, Adjacency.ADD_REMOVE, "max")
    with pytest.raises(ValueError):
        AccountingResult(1.0, 0.5, 1.0, 0, Adjacency.ADD_REMOVE, "max")


# ---------------------------------------------------------------- discretize


def test_identical_pair_is_point_mass():
    pair = MixturePair(GaussianMixture(1.0, ((1.0, 0.0),)), GaussianMixture(1.0, ((1.0, 0.0),)))
    for direction in (PESSIMISTIC, OPTIMISTIC):
        x = discretize(pair, 1e-4, direction)
        assert x.masses.tolist() == [1.0] and x.origin_index == 0 and x.infinity_mass == 0.0
        assert delta_at(x, 0.0) == 0.0
        assert epsilon_at(x, 1e-6) == 0.0


def test_gaussian_delta_at_zero(gauss_pess, gauss_opt):
    hi, lo = delta_at(gauss_pess, 0.0), delta_at(gauss_opt, 0.0)
    assert lo <= GAUSS_DELTA_0 <= hi
    assert hi - lo < 1e-4
    assert hi == pytest.approx(0.38292, abs=1e-4)


def test_grid_step_domain():
    for bad in (0.0, -1e-3, 1.5):
        with pytest.raises(ValueError):
            discretize(gaussian_pair(), bad)
    with pytest.raises(ValueError):
        discretize(gaussian_pair(), 1e-3, "sideways")


def test_mass_conserved(gauss_pess, gauss_opt):
    for x in (gauss_pess, gauss_opt):
        assert abs(x.masses.sum() + x.infinity_mass - 1.0) <= 1e-9
    assert gauss_opt.infinity_mass == 0.0
    assert 0.0 < gauss_pess.infinity_mass <= 1e-15


@pytest.mark.parametrize("adj", list(Adjacency))
def test_poisson_pair_against_oracle(adj):
    pair = poisson_pair(0.5, 1.0, adj)
    for mp in (pair, pair.swapped()):
        pess, opt = discretize(mp, 1e-4, PESSIMISTIC), discretize(mp, 1e-4, OPTIMISTIC)
        for eps in np.linspace(0, 4, 9):
            exact = hockey_stick_mixture(mp.P, mp.Q, eps)
            assert delta_at(opt, eps) - 1e-12 <= exact <= delta_at(pess, eps) + 1e-12
            assert delta_at(pess, eps) - exact < 1e-4


def test_gap_halves_with_grid(gauss_pess, gauss_opt):
    pair = poisson_pair(0.3, 0.8, "replace-one")
    for mp in (gaussian_pair(), pair):
        gaps = []
        for h in (4e-3, 2e-3, 1e-3):
            pess, opt = discretize(mp, h, PESSIMISTIC), discretize(mp, h, OPTIMISTIC)
            gaps.append(max(delta_at(pess, e) - delta_at(opt, e) for e in np.linspace(0, 3, 7)))
        assert gaps[1] <= 0.5 * gaps[0] * (1 + 1e-3) and gaps[2] <= 0.5 * gaps[1] * (1 + 1e-3)


def test_nonmonotone_pair_rejected():
    P = GaussianMixture(1.0, ((0.5, -2.0), (0.5, 2.0)))
    Q = GaussianMixture(1.0, ((1.0, 0.0),))
    with pytest.raises(ValueError):
        discretize(MixturePair(P, Q), 1e-2)


def test_small_sigma_grid():
    x = discretize(gaussian_pair(0.05), 1e-2)
    # loss ~ N(200, 20^2) here
    assert delta_at(x, 400.0) <= 1e-6
    assert delta_at(x, 100.0) > 0.999
    assert math.isfinite(epsilon_at(x, 1e-5))


# ---------------------------------------------------------------- mix


def test_mix_singleton_and_idempotent(gauss_pess):
    assert mix([gauss_pess], [1.0]) is gauss_pess
    both = mix([gauss_pess, gauss_pess], [0.3, 0.7])
    assert both.origin_index == gauss_pess.origin_index
    np.testing.assert_allclose(both.masses, gauss_pess.masses, rtol=1e-15, atol=0)


def test_mix_domain_errors(gauss_pess, gauss_opt):
    coarse = discretize(gaussian_pair(), 1e-3)
    with pytest.raises(ValueError):
        mix([gauss_pess, coarse], [0.5, 0.5])
    with pytest.raises(ValueError):
        mix([gauss_pess, gauss_opt], [0.5, 0.5])
    with pytest.raises(ValueError):
        mix([gauss_pess, gauss_pess], [0.5, 0.6])


@settings(max_examples=25, deadline=None)
@given(w=st.floats(0.0, 1.0), eps=st.floats(0.0, 4.0))
def test_mix_linearity(w, eps):
    a = discretize(gaussian_pair(1.0), 1e-3)
    b = discretize(gaussian_pair(0.6, 2.0), 1e-3)
    m = mix([a, b], [w, 1.0 - w])
    # exact up to summation order over a few thousand buckets
    assert delta_at(m, eps) == pytest.approx(w * delta_at(a, eps) + (1 - w) * delta_at(b, eps), abs=1e-12)


def test_branch_mixture_matches_oracle():
    bp = build_pair(TruncatedPoissonParams(3, 0.5, 1, 1.0), "add-remove")
    x = mix([discretize(mp) for mp in bp.pairs], bp.weights)
    for eps in (0.0, 0.5, 1.0, 2.0):
        exact = sum(w * hockey_stick_mixture(mp.P, mp.Q, eps) for w, mp in bp.branches)
        assert exact - 1e-12 <= delta_at(x, eps) <= exact + 1e-4


# ---------------------------------------------------------------- compose


def test_compose_one_is_identity(gauss_pess):
    assert compose(gauss_pess, 1) is gauss_pess
    with pytest.raises(ValueError):
        compose(gauss_pess, 0)
    with pytest.raises(ValueError):
        compose(gauss_pess, 2.5)


def test_compose_point_mass():
    x = DiscretePLD(1e-4, 0, np.array([1.0]))
    y = compose(x, 1000)
    assert y.masses.tolist() == [1.0] and y.origin_index == 0 and y.infinity_mass == 0.0


def test_gaussian_composition_identity(gauss_pess):
    four = compose(gauss_pess, 4)
    half = discretize(gaussian_pair(0.5), 1e-4)
    for eps in np.linspace(0, 3, 13):
        assert abs(delta_at(four, eps) - delta_at(half, eps)) <= 1e-4


def test_infinity_mass_combines():
    x = DiscretePLD(0.1, 0, np.array([0.9]), 0.1)
    y = compose(x, 3)
    assert y.infinity_mass == pytest.approx(1 - 0.9**3, abs=1e-15)


def _aligned(a, b):
    lo = min(a.origin_index, b.origin_index)
    hi = max(a.origin_index + len(a), b.origin_index + len(b))
    out = []
    for x in (a, b):
        arr = np.zeros(hi - lo)
        arr[x.origin_index - lo:x.origin_index - lo + len(x)] = x.masses
        out.append(arr)
    return out


@pytest.mark.parametrize("a,b", [(1, 2), (2, 3), (3, 5)])
def test_compose_associative(a, b):
    x = discretize(poisson_pair(0.4, 1.0, "add-remove"), 1e-3)
    whole = compose(x, a + b)
    split = convolve(compose(x, a), compose(x, b))
    u, v = _aligned(whole, split)
    assert np.max(np.abs(u - v)) <= 1e-12
    assert whole.infinity_mass == pytest.approx(split.infinity_mass, abs=1e-15)


def test_fft_matches_direct(monkeypatch):
    x = discretize(poisson_pair(0.4, 0.7, "replace-one"), 1e-3)
    fft = convolve(x, x)
    monkeypatch.setattr(pld_core, "FFT_THRESHOLD", 1 << 40)
    direct = convolve(x, x)
    u, v = _aligned(fft, direct)
    assert np.max(np.abs(u - v)) <= 1e-14
    assert len(x) >= 1 << 12  # the first convolution really went through the FFT path


# ---------------------------------------------------------------- queries


@settings(max_examples=30, deadline=None)
@given(e1=st.floats(-2.0, 8.0), e2=st.floats(-2.0, 8.0))
def test_delta_monotone_in_epsilon(e1, e2):
    lo, hi = sorted((e1, e2))
    d_lo, d_hi = delta_at(COARSE_07, lo), delta_at(COARSE_07, hi)
    assert 0.0 <= d_hi <= d_lo + 1e-15 <= 1.0 + 1e-15


def test_delta_infinite_epsilon(gauss_pess):
    assert delta_at(gauss_pess, math.inf) == gauss_pess.infinity_mass


def test_pessimistic_above_optimistic(gauss_pess, gauss_opt):
    for eps in np.linspace(0, 5, 21):
        assert delta_at(gauss_pess, eps) >= delta_at(gauss_opt, eps)


def test_epsilon_at_examples(gauss_pess):
    assert epsilon_at(gauss_pess, 0.38292) == pytest.approx(0.0, abs=1e-3)
    x = DiscretePLD(0.1, 0, np.array([0.999]), 1e-3)
    assert epsilon_at(x, 1e-6) == math.inf
    with pytest.raises(ValueError):
        epsilon_at(x, 0.0)
    with pytest.raises(ValueError):
        epsilon_at(x, 1.5)


@settings(max_examples=40, deadline=None)
@given(eps=st.floats(0.01, 6.0))
def test_epsilon_delta_round_trip(eps):
    x = COARSE_08
    d = delta_at(x, eps)
    e = epsilon_at(x, d)
    assert abs(e - eps) <= x.grid_step
    assert delta_at(x, e) <= d * (1 + 1e-9)


def test_delta_nonincreasing_in_sigma():
    prm = TruncatedPoissonParams(100, 0.2, 15)
    deltas = [account(prm.with_sigma(s), "zero-out", 3, 1e-3, epsilon=1.0).delta for s in (0.6, 0.8, 1.0, 1.5, 2.5)]
    assert all(b <= a for a, b in zip(deltas, deltas[1:]))


# ---------------------------------------------------------------- account


def test_account_frozen_small_instance():
    res = account(TruncatedPoissonParams(3, 0.5, 1, 1.0), "add-remove", epsilon=1.0)
    assert N3_ORACLE_DELTA <= res.delta <= N3_ORACLE_DELTA + 1e-5
    assert res.steps == 1 and res.adjacency is Adjacency.ADD_REMOVE and res.direction_policy == "max"


@pytest.mark.parametrize("adj", list(Adjacency))
def test_account_never_truncate_bitwise(adj):
    prm = TruncatedPoissonParams(40, 0.1, 40, 1.1)
    for eps in (0.0, 0.5, 2.0):
        a = account(prm, adj, 4, 1e-3, epsilon=eps)
        b = account_poisson(prm.p, prm.sigma, adj, 4, 1e-3, epsilon=eps)
        assert a.delta == b.delta
    assert account(prm, adj, 4, 1e-3, delta=1e-5).epsilon == account_poisson(0.1, 1.1, adj, 4, 1e-3, delta=1e-5).epsilon


def test_account_always_truncate_limit():
    n, B, sigma = 10, 4, 1.0
    res = composed_plds(TruncatedPoissonParams(n, 1.0, B, sigma), "add-remove")
    P = GaussianMixture(sigma, ((1 - B / n, 0.0), (B / n, 2.0)))
    Q = GaussianMixture(sigma, ((1.0, 0.0),))
    for eps in np.linspace(0, 4, 9):
        oracle = max(hockey_stick_mixture(P, Q, eps), hockey_stick_mixture(Q, P, eps))
        assert abs(max(delta_at(x, eps) for x in res.values()) - oracle) <= 1e-4


def test_direction_policies():
    prm = TruncatedPoissonParams(30, 0.3, 5, 1.0)
    both = account(prm, "zero-out", epsilon=0.5)
    fwd = account(prm, "zero-out", epsilon=0.5, direction="forward")
    rev = account(prm, "zero-out", epsilon=0.5, direction="reverse")
    assert both.delta == max(fwd.delta, rev.delta)
    with pytest.raises(ValueError):
        account(prm, "zero-out", epsilon=0.5, direction="sideways")


def test_account_query_arguments():
    prm = TruncatedPoissonParams(30, 0.3, 5, 1.0)
    with pytest.raises(ValueError):
        account(prm, "add-remove")
    with pytest.raises(ValueError):
        account(prm, "add-remove", epsilon=1.0, delta=1e-5)
