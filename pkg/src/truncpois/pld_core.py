"""Discretized privacy loss distributions: construction, mixing, composition, queries.

A :class:`DiscretePLD` stores the law of the privacy loss log(P(t)/Q(t)),
t ~ P, rounded onto the grid ``k * grid_step``. Pessimistic rounding goes up
(so every delta it reports is an upper bound for the pair it came from),
optimistic rounding goes down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import fft as sp_fft
from scipy import special

from . import _kernels
from .binom_math import TruncatedPoissonParams
from .dominating_pairs import (
    Adjacency,
    MixturePair,
    build_pair,
    poisson_pair,
    reverse,
)

PESSIMISTIC = "pessimistic"
OPTIMISTIC = "optimistic"

DEFAULT_GRID_STEP = 1e-4
# Gaussian tails beyond this many sigmas carry < 5.2e-17 of mass per side.
TAIL_SIGMAS = 8.3
# Mass allowed to be moved off each end of the grid per operation.
TAIL_MASS_TRUNCATION = 5e-16
FFT_THRESHOLD = 1 << 12
MASS_TOL = 1e-9
MAX_BUCKETS = 1 << 27

_CHERNOFF_LAMBDAS = np.geomspace(1e-2, 1e3, 41)

DIRECTION_POLICIES = ("max", "forward", "reverse")


class NumericalError(RuntimeError):
    """Raised when a PLD computation leaves its numerical safety envelope."""


def _parse_policy(policy: str) -> str:
    policy = str(policy).lower()
    if policy in ("max", "max-of-both", "both"):
        return "max"
    if policy in ("forward", "reverse"):
        return policy
    raise ValueError(f"unknown direction policy {policy!r}")


@dataclass(frozen=True, eq=False)
class DiscretePLD:
    """Privacy loss distribution on a uniform grid plus an atom at +inf.

    ``masses[i]`` sits at loss ``(origin_index + i) * grid_step``.
    """

    grid_step: float
    origin_index: int
    masses: np.ndarray
    infinity_mass: float = 0.0
    direction: str = PESSIMISTIC

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        if self.direction not in (PESSIMISTIC, OPTIMISTIC):
            raise ValueError(f"unknown discretization direction {self.direction!r}")
        masses = np.ascontiguousarray(self.masses, dtype=np.float64)
        if masses.ndim != 1 or masses.size == 0:
            raise ValueError("masses must be a non-empty 1-D array")
        if np.any(masses < 0):
            raise ValueError("masses must be non-negative")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "origin_index", int(self.origin_index))
        object.__setattr__(self, "infinity_mass", float(self.infinity_mass))
        total = float(np.sum(masses)) + self.infinity_mass
        if abs(total - 1.0) > MASS_TOL:
            raise NumericalError(f"PLD total mass {total!r} differs from 1 by more than {MASS_TOL}")

    @property
    def losses(self) -> np.ndarray:
        return (self.origin_index + np.arange(self.masses.size)) * self.grid_step

    def __len__(self) -> int:
        return self.masses.size

    def same_as(self, other: "DiscretePLD") -> bool:
        return (
            self.grid_step == other.grid_step
            and self.origin_index == other.origin_index
            and self.direction == other.direction
            and self.infinity_mass == other.infinity_mass
            and np.array_equal(self.masses, other.masses)
        )


@dataclass(frozen=True)
class AccountingResult:
    epsilon: float
    delta: float
    sigma: float
    steps: int
    adjacency: Adjacency
    direction_policy: str
    grid_step: float = DEFAULT_GRID_STEP
    params: Optional[TruncatedPoissonParams] = None

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


def _interval_mass(lo, hi, means, weights, sigma):
    """sum_i w_i * (Phi((hi - mu_i)/sigma) - Phi((lo - mu_i)/sigma)), elementwise.

    Each Gaussian term is taken from whichever tail keeps the difference exact.
    """
    out = np.zeros(np.broadcast(lo, hi).shape)
    for w, mu in zip(weights, means):
        zl = (lo - mu) / sigma
        zh = (hi - mu) / sigma
        right = zl >= 0
        term = np.where(right, special.ndtr(-zl) - special.ndtr(-zh), special.ndtr(zh) - special.ndtr(zl))
        out += w * np.maximum(term, 0.0)
    return out


def _oriented(pair: MixturePair):
    """Means/weights arranged so the privacy loss is nondecreasing in t."""
    pm, qm = np.array(pair.P.means), np.array(pair.Q.means)
    if pm.min() >= qm.max():
        sign = 1.0
    elif pm.max() <= qm.min():
        sign = -1.0
    else:
        sign = _numeric_orientation(pair)
    return (
        sign * pm,
        np.log(np.array(pair.P.weights)),
        sign * qm,
        np.log(np.array(pair.Q.weights)),
        np.array(pair.P.weights),
    )


def _numeric_orientation(pair: MixturePair) -> float:
    sigma = pair.sigma
    allm = np.array(pair.P.means + pair.Q.means)
    t = np.linspace(allm.min() - TAIL_SIGMAS * sigma, allm.max() + TAIL_SIGMAS * sigma, 20001)
    inv2s2 = 0.5 / sigma**2
    loss, _ = _kernels._loss_and_slope_np(
        t,
        np.array(pair.P.means), np.log(np.array(pair.P.weights)),
        np.array(pair.Q.means), np.log(np.array(pair.Q.weights)),
        inv2s2,
    )
    d = np.diff(loss)
    tol = 1e-9 * max(1.0, float(np.abs(loss).max()))
    if np.all(d >= -tol):
        return 1.0
    if np.all(d <= tol):
        return -1.0
    raise ValueError("privacy loss of this pair is not monotone; discretization unsupported")


def _loss_at(t, p_means, p_logw, q_means, q_logw, sigma):
    loss, _ = _kernels._loss_and_slope_np(
        np.atleast_1d(np.asarray(t, dtype=np.float64)), p_means, p_logw, q_means, q_logw, 0.5 / sigma**2
    )
    return loss


def discretize(pair: MixturePair, grid_step: float = DEFAULT_GRID_STEP, direction: str = PESSIMISTIC) -> DiscretePLD:
    """Privacy loss distribution of ``pair`` rounded onto a grid of width ``grid_step``."""
    if not (grid_step > 0):
        raise ValueError(f"grid_step must be positive, got {grid_step!r}")
    if grid_step > 1:
        raise ValueError(f"grid_step must be at most 1, got {grid_step!r}")
    if direction not in (PESSIMISTIC, OPTIMISTIC):
        raise ValueError(f"unknown discretization direction {direction!r}")
    if pair.P.canonical() == pair.Q.canonical():
        # identical distributions: the loss is 0 everywhere, no tail to charge
        return DiscretePLD(grid_step, 0, np.array([1.0]), 0.0, direction)
    sigma = pair.sigma
    p_means, p_logw, q_means, q_logw, p_w = _oriented(pair)

    t_lo = p_means.min() - TAIL_SIGMAS * sigma
    t_hi = p_means.max() + TAIL_SIGMAS * sigma
    l_lo, l_hi = _loss_at([t_lo, t_hi], p_means, p_logw, q_means, q_logw, sigma)
    if direction == PESSIMISTIC:
        k_lo, k_hi = math.ceil(l_lo / grid_step), math.ceil(l_hi / grid_step)
    else:
        k_lo, k_hi = math.floor(l_lo / grid_step), math.floor(l_hi / grid_step)
    count = k_hi - k_lo + 1
    if count > MAX_BUCKETS:
        raise NumericalError(f"discretization needs {count:.3g} buckets (limit {MAX_BUCKETS}); increase grid_step or sigma")

    n_grid = int(min(1 << 16, max(1025, count // 8)))
    t_grid = np.linspace(t_lo, t_hi, n_grid)
    l_grid = np.maximum.accumulate(_loss_at(t_grid, p_means, p_logw, q_means, q_logw, sigma))

    if direction == PESSIMISTIC:
        # bucket k collects losses in ((k-1)h, kh]; its upper edge is L^{-1}(kh)
        targets = np.arange(k_lo, k_hi) * grid_step
    else:
        # bucket k collects losses in [kh, (k+1)h); its upper edge is L^{-1}((k+1)h)
        targets = np.arange(k_lo + 1, k_hi + 1) * grid_step
    edges = _kernels.invert_loss(targets, p_means, p_logw, q_means, q_logw, sigma, t_grid, l_grid)
    edges = np.clip(np.maximum.accumulate(edges), t_lo, t_hi) if edges.size else edges
    lo_edges = np.concatenate(([-np.inf], edges))
    hi_edges = np.concatenate((edges, [t_hi]))
    masses = _interval_mass(lo_edges, hi_edges, p_means, p_w, sigma)
    tail = float(_interval_mass(np.array([t_hi]), np.array([np.inf]), p_means, p_w, sigma)[0])
    if direction == PESSIMISTIC:
        infinity_mass = tail
    else:
        masses[0] += tail
        infinity_mass = 0.0
    masses, origin, infinity_mass = _trim_by_mass(masses, k_lo, infinity_mass, direction)
    return DiscretePLD(grid_step, origin, masses, infinity_mass, direction)


def _move_tails(masses, origin, infinity_mass, lo, hi, direction):
    """Keep buckets lo..hi (array indices, inclusive) and fold the rest back in."""
    lo = max(lo, 0)
    hi = min(hi, masses.size - 1)
    if lo == 0 and hi == masses.size - 1:
        return masses, origin, infinity_mass
    if hi < lo:
        lo = hi = int(np.argmax(masses))
    below = float(np.sum(masses[:lo]))
    above = float(np.sum(masses[hi + 1:]))
    kept = masses[lo:hi + 1].copy()
    kept[0] += below
    if direction == PESSIMISTIC:
        infinity_mass += above
    else:
        kept[-1] += above
    return kept, origin + lo, infinity_mass


def _trim_by_mass(masses, origin, infinity_mass, direction, bound=TAIL_MASS_TRUNCATION):
    csum = np.cumsum(masses)
    lo = int(np.searchsorted(csum, bound, side="right"))
    rsum = np.cumsum(masses[::-1])
    hi = masses.size - 1 - int(np.searchsorted(rsum, bound, side="right"))
    return _move_tails(masses, origin, infinity_mass, lo, hi, direction)


# ---------------------------------------------------------------------------
# mixing and composition
# ---------------------------------------------------------------------------


def mix(plds: Sequence[DiscretePLD], weights: Sequence[float]) -> DiscretePLD:
    """Weighted mixture of PLDs whose mixing label is itself released."""
    if len(plds) != len(weights) or not plds:
        raise ValueError("need one weight per PLD")
    if abs(math.fsum(weights) - 1.0) > 1e-12:
        raise ValueError("mixture weights must sum to 1")
    if any(w < 0 for w in weights):
        raise ValueError("mixture weights must be non-negative")
    step, direction = plds[0].grid_step, plds[0].direction
    for x in plds[1:]:
        if x.grid_step != step:
            raise ValueError("cannot mix PLDs on different grids")
        if x.direction != direction:
            raise ValueError("cannot mix pessimistic and optimistic PLDs")
    if len(plds) == 1:
        return plds[0]
    lo = min(x.origin_index for x in plds)
    hi = max(x.origin_index + len(x) for x in plds)
    masses = np.zeros(hi - lo)
    infinity = 0.0
    for x, w in zip(plds, weights):
        off = x.origin_index - lo
        masses[off:off + len(x)] += w * x.masses
        infinity += w * x.infinity_mass
    return DiscretePLD(step, lo, masses, infinity, direction)


def _log_mgf(x: DiscretePLD, lambdas: np.ndarray, chunks: int = 2048) -> np.ndarray:
    """Upper bound on log sum_k m_k exp(lambda * loss_k) over the finite part.

    Buckets are pooled into at most ``chunks`` blocks, each evaluated at the
    block end that maximizes exp(lambda * loss), so the result stays an upper
    bound while costing O(chunks) per lambda.
    """
    m = x.masses
    size = m.size
    width = max(1, -(-size // chunks))
    pad = (-size) % width
    pooled = np.concatenate((m, np.zeros(pad))).reshape(-1, width).sum(axis=1)
    starts = (x.origin_index + np.arange(pooled.size) * width) * x.grid_step
    ends = starts + (width - 1) * x.grid_step
    nz = pooled > 0
    logm = np.log(pooled[nz])
    starts, ends = starts[nz], ends[nz]
    out = np.empty(lambdas.size)
    for i, lam in enumerate(lambdas):
        edge = ends if lam > 0 else starts
        out[i] = special.logsumexp(logm + lam * edge)
    return out


def _chernoff_window(a: DiscretePLD, b: DiscretePLD, bound: float):
    """Loss interval outside which the convolution of a and b has at most ``bound`` mass per side."""
    lam = _CHERNOFF_LAMBDAS
    log_bound = math.log(bound)
    up_a, down_a = _log_mgf(a, lam), _log_mgf(a, -lam)
    if b is a:
        up, down = 2 * up_a, 2 * down_a
    else:
        up, down = up_a + _log_mgf(b, lam), down_a + _log_mgf(b, -lam)
    hi = float(np.min((up - log_bound) / lam))
    lo = float(np.max(-(down - log_bound) / lam))
    return lo, hi


def _convolve_masses(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if max(x.size, y.size) < FFT_THRESHOLD:
        return _kernels.direct_convolve(x, y)
    size = x.size + y.size - 1
    nfft = sp_fft.next_fast_len(size, real=True)
    out = sp_fft.irfft(sp_fft.rfft(x, nfft) * sp_fft.rfft(y, nfft), nfft)[:size]
    return np.maximum(out, 0.0)


def convolve(a: DiscretePLD, b: DiscretePLD) -> DiscretePLD:
    """PLD of the composition of the two mechanisms."""
    if a.grid_step != b.grid_step:
        raise ValueError("cannot convolve PLDs on different grids")
    if a.direction != b.direction:
        raise ValueError("cannot convolve pessimistic and optimistic PLDs")
    masses = _convolve_masses(a.masses, b.masses)
    origin = a.origin_index + b.origin_index
    infinity = -math.expm1(math.log1p(-a.infinity_mass) + math.log1p(-b.infinity_mass))
    if masses.size > 64:
        lo_loss, hi_loss = _chernoff_window(a, b, TAIL_MASS_TRUNCATION)
        h = a.grid_step
        lo = math.floor(lo_loss / h) - origin
        hi = math.ceil(hi_loss / h) - origin
        masses, origin, infinity = _move_tails(masses, origin, infinity, lo, hi, a.direction)
    total = float(np.sum(masses)) + infinity
    if abs(total - 1.0) > MASS_TOL:
        raise NumericalError(f"convolution lost mass: total {total!r}")
    return DiscretePLD(a.grid_step, origin, masses, infinity, a.direction)


def compose(pld: DiscretePLD, steps: int) -> DiscretePLD:
    """``steps``-fold self-composition by repeated squaring."""
    if isinstance(steps, bool) or int(steps) != steps or steps < 1:
        raise ValueError(f"steps must be a positive integer, got {steps!r}")
    steps = int(steps)
    result = None
    base = pld
    while True:
        if steps & 1:
            result = base if result is None else convolve(result, base)
        steps >>= 1
        if not steps:
            break
        base = convolve(base, base)
    return result


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------


def delta_at(pld: DiscretePLD, epsilon: float) -> float:
    """Hockey-stick divergence E[max(0, 1 - exp(epsilon - L))] including the +inf atom."""
    if epsilon == math.inf:
        return pld.infinity_mass
    finite = _kernels.hockey_stick_sum(pld.masses, pld.origin_index, pld.grid_step, float(epsilon))
    return float(min(1.0, max(0.0, finite + pld.infinity_mass)))


def epsilon_at(pld: DiscretePLD, delta: float) -> float:
    """Smallest epsilon >= 0 with delta_at(pld, epsilon) <= delta; ``inf`` if unattainable."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if delta <= pld.infinity_mass:
        return math.inf
    if delta_at(pld, 0.0) <= delta:
        return 0.0
    # only epsilon >= 0 is asked for, so buckets below loss -h never bracket the answer;
    # dropping them keeps exp(-loss) bounded
    start = max(0, -pld.origin_index - 1)
    losses = pld.losses[start:]
    m = pld.masses[start:]
    # tail sums over buckets strictly above index j
    mass_above = np.concatenate((np.cumsum(m[::-1])[::-1][1:], [0.0])) + pld.infinity_mass
    weighted = m * np.exp(-losses)
    wt_above = np.concatenate((np.cumsum(weighted[::-1])[::-1][1:], [0.0]))
    with np.errstate(over="ignore", invalid="ignore"):
        delta_grid = mass_above - np.exp(losses) * wt_above
    if losses.size < 2 or not np.all(np.isfinite(delta_grid)):
        return _bisect_epsilon(pld, delta)
    # delta_grid is nonincreasing; first grid point meeting the target
    j = int(np.searchsorted(-delta_grid, -delta, side="left"))
    j = min(max(j, 1), losses.size - 1)
    # epsilon lies in [loss_{j-1}, loss_j]; solve delta = A - e^eps * C there
    a, c = mass_above[j - 1], wt_above[j - 1]
    if c <= 0.0:
        eps = losses[j]
    else:
        eps = math.log(max(a - delta, 1e-300) / c)
        eps = min(max(eps, losses[j - 1]), losses[j])
    return max(0.0, float(eps))


def _bisect_epsilon(pld: DiscretePLD, delta: float) -> float:
    lo, hi = 0.0, max(1.0, float(pld.losses[-1]))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-12 * max(1.0, hi) or mid in (lo, hi):
            break
        if delta_at(pld, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def _branch_pld(branched, grid_step, discretization):
    plds = [discretize(pair, grid_step, discretization) for pair in branched.pairs]
    return mix(plds, list(branched.weights))


def composed_plds(
    params: TruncatedPoissonParams,
    adjacency,
    steps: int = 1,
    grid_step: float = DEFAULT_GRID_STEP,
    direction: str = "max",
    discretization: str = PESSIMISTIC,
) -> Dict[str, DiscretePLD]:
    """Composed PLDs keyed by domination direction ("forward" and/or "reverse")."""
    policy = _parse_policy(direction)
    branched = build_pair(params, adjacency)
    out = {}
    if policy in ("max", "forward"):
        out["forward"] = compose(_branch_pld(branched, grid_step, discretization), steps)
    if policy in ("max", "reverse"):
        out["reverse"] = compose(_branch_pld(reverse(branched), grid_step, discretization), steps)
    return out


def poisson_plds(
    p: float,
    sigma: float,
    adjacency,
    steps: int = 1,
    grid_step: float = DEFAULT_GRID_STEP,
    direction: str = "max",
    discretization: str = PESSIMISTIC,
) -> Dict[str, DiscretePLD]:
    """The same pipeline for plain (untruncated) Poisson subsampling."""
    policy = _parse_policy(direction)
    pair = poisson_pair(p, sigma, adjacency)
    out = {}
    if policy in ("max", "forward"):
        out["forward"] = compose(discretize(pair, grid_step, discretization), steps)
    if policy in ("max", "reverse"):
        out["reverse"] = compose(discretize(pair.swapped(), grid_step, discretization), steps)
    return out


def max_delta(plds: Dict[str, DiscretePLD], epsilon: float) -> float:
    return max(delta_at(x, epsilon) for x in plds.values())


def max_epsilon(plds: Dict[str, DiscretePLD], delta: float) -> float:
    return max(epsilon_at(x, delta) for x in plds.values())


def _result(plds, sigma, adjacency, steps, grid_step, direction, epsilon, delta, params):
    if (epsilon is None) == (delta is None):
        raise ValueError("pass exactly one of epsilon or delta")
    if epsilon is not None:
        delta = max_delta(plds, epsilon)
    else:
        epsilon = max_epsilon(plds, delta)
    return AccountingResult(
        epsilon=float(epsilon),
        delta=float(delta),
        sigma=float(sigma),
        steps=int(steps),
        adjacency=Adjacency.parse(adjacency),
        direction_policy=_parse_policy(direction),
        grid_step=grid_step,
        params=params,
    )


def account(
    params: TruncatedPoissonParams,
    adjacency,
    steps: int = 1,
    grid_step: float = DEFAULT_GRID_STEP,
    *,
    epsilon: Optional[float] = None,
    delta: Optional[float] = None,
    direction: str = "max",
) -> AccountingResult:
    """delta(epsilon) or epsilon(delta) for ``steps`` runs of the truncated mechanism.

    Pass exactly one of ``epsilon`` / ``delta``. By default both domination
    directions are evaluated and the worse one is reported.
    """
    plds = composed_plds(params, adjacency, steps, grid_step, direction)
    return _result(plds, params.sigma, adjacency, steps, grid_step, direction, epsilon, delta, params)


def account_poisson(
    p: float,
    sigma: float,
    adjacency,
    steps: int = 1,
    grid_step: float = DEFAULT_GRID_STEP,
    *,
    epsilon: Optional[float] = None,
    delta: Optional[float] = None,
    direction: str = "max",
) -> AccountingResult:
    """Accounting for untruncated Poisson subsampling on the same grid."""
    plds = poisson_plds(p, sigma, adjacency, steps, grid_step, direction)
    return _result(plds, sigma, adjacency, steps, grid_step, direction, epsilon, delta, None)
