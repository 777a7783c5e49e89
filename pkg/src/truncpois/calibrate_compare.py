"""Noise calibration, and comparison with the truncation-as-failure-probability baseline.

The baseline treats truncation as a failure event: if untruncated Poisson
sampling is (eps, delta)-DP and some batch overflows with probability at most
eta over the whole run, the truncated sampler is (eps, delta + e^eps eta)-DP.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable

from .binom_math import TruncatedPoissonParams, binom_sf_geq
from .dominating_pairs import Adjacency
from .pld_core import (
    DEFAULT_GRID_STEP,
    composed_plds,
    max_delta,
    poisson_plds,
)

SIGMA_BRACKET = (0.1, 10.0)
SIGMA_REL_TOL = 1e-4
MAX_DOUBLINGS = 60

UNION = "union"
INDEPENDENT = "independent"

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    """No noise level in the searchable range meets the target."""


@dataclass(frozen=True)
class ComparisonReport:
    n: int
    p: float
    B: int
    adjacency: Adjacency
    steps: int
    target_epsilon: float
    target_delta: float
    sigma_tight: float
    sigma_naive: float
    truncation_prob_per_step: float
    expected_batch: float
    utilization: float
    grid_step: float = DEFAULT_GRID_STEP
    eta_mode: str = UNION

    def __post_init__(self):
        if self.utilization <= 0:
            raise ValueError("utilization must be positive")

    @property
    def tight_not_worse(self) -> bool:
        return not math.isfinite(self.sigma_naive) or self.sigma_tight <= self.sigma_naive

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adjacency"] = self.adjacency.value
        return d


def truncation_eta(n: int, p: float, B: int, steps: int, mode: str = UNION) -> float:
    """Probability that some batch overflows B within ``steps`` draws."""
    per_step = binom_sf_geq(n, B + 1, p)
    if mode == UNION:
        return min(1.0, steps * per_step)
    if mode == INDEPENDENT:
        return -math.expm1(steps * math.log1p(-per_step)) if per_step < 1 else 1.0
    raise ValueError(f"unknown eta mode {mode!r}")


def _bisect_sigma(delta_of_sigma: Callable[[float], float], target_delta: float) -> float:
    """Smallest sigma (to relative width SIGMA_REL_TOL) with delta_of_sigma(sigma) <= target.

    The bracket starts at SIGMA_BRACKET and moves geometrically in whichever
    direction is needed. delta is assumed nonincreasing in sigma; the lower
    end is only evaluated when bisection never saw a failing sigma, since
    small sigmas are the expensive ones.
    """
    seen = {}

    def evaluate(sigma):
        seen[sigma] = delta_of_sigma(sigma)
        return seen[sigma]

    lo, hi = SIGMA_BRACKET
    lo_fails = False
    for _ in range(MAX_DOUBLINGS):
        if evaluate(hi) <= target_delta:
            break
        lo, hi, lo_fails = hi, hi * 2.0, True
    else:
        raise CalibrationError(f"target delta {target_delta} not met even at sigma={hi}")

    halvings = 0
    while True:
        while hi / lo > 1.0 + SIGMA_REL_TOL:
            mid = math.sqrt(lo * hi)
            if evaluate(mid) <= target_delta:
                hi = mid
            else:
                lo, lo_fails = mid, True
        if lo_fails or evaluate(lo) > target_delta:
            _spot_check_monotone(seen)
            return hi
        halvings += 1
        if halvings > MAX_DOUBLINGS:
            raise CalibrationError("target met at every sigma tried; nothing to calibrate")
        lo, hi = lo / 2.0, lo


def _spot_check_monotone(seen):
    """Warn if delta was seen to increase with sigma among the evaluated points."""
    sigmas = sorted(seen)
    deltas = [seen[s] for s in sigmas]
    for (s0, d0), (s1, d1) in zip(zip(sigmas, deltas), zip(sigmas[1:], deltas[1:])):
        if d1 > d0 * (1 + 1e-6) + 1e-15:
            log.warning("delta not monotone in sigma: delta(%.6g)=%.6g < delta(%.6g)=%.6g", s0, d0, s1, d1)


def _check_targets(target_epsilon, target_delta):
    if not target_epsilon > 0:
        raise ValueError("target_epsilon must be positive")
    if not 0 < target_delta < 1:
        raise ValueError("target_delta must lie in (0, 1)")


def calibrate_sigma(
    n: int,
    p: float,
    B: int,
    adjacency,
    steps: int,
    target_epsilon: float,
    target_delta: float,
    grid_step: float = DEFAULT_GRID_STEP,
    direction: str = "max",
) -> float:
    """Smallest noise multiplier whose tight accounting meets (target_epsilon, target_delta)."""
    _check_targets(target_epsilon, target_delta)
    adjacency = Adjacency.parse(adjacency)

    def delta_of_sigma(sigma):
        params = TruncatedPoissonParams(n, p, B, sigma)
        return max_delta(composed_plds(params, adjacency, steps, grid_step, direction), target_epsilon)

    return _bisect_sigma(delta_of_sigma, target_delta)


def naive_bound(
    n: int,
    p: float,
    B: int,
    sigma: float,
    steps: int,
    target_epsilon: float,
    grid_step: float = DEFAULT_GRID_STEP,
    adjacency=Adjacency.ADD_REMOVE,
    direction: str = "max",
    eta_mode: str = UNION,
) -> float:
    """delta of the baseline: untruncated Poisson delta plus e^eps times the overflow probability."""
    eta = truncation_eta(n, p, B, steps, eta_mode)
    if eta >= 1.0:
        return 1.0
    plds = poisson_plds(p, sigma, adjacency, steps, grid_step, direction)
    return min(1.0, max_delta(plds, target_epsilon) + math.exp(target_epsilon) * eta)


def calibrate_naive_sigma(
    n: int,
    p: float,
    B: int,
    adjacency,
    steps: int,
    target_epsilon: float,
    target_delta: float,
    grid_step: float = DEFAULT_GRID_STEP,
    direction: str = "max",
    eta_mode: str = UNION,
) -> float:
    """Noise needed by the baseline, or ``inf`` when e^eps * eta alone exceeds the target."""
    _check_targets(target_epsilon, target_delta)
    adjacency = Adjacency.parse(adjacency)
    eta = truncation_eta(n, p, B, steps, eta_mode)
    if math.exp(target_epsilon) * eta >= target_delta:
        return math.inf

    def delta_of_sigma(sigma):
        plds = poisson_plds(p, sigma, adjacency, steps, grid_step, direction)
        return min(1.0, max_delta(plds, target_epsilon) + math.exp(target_epsilon) * eta)

    return _bisect_sigma(delta_of_sigma, target_delta)


def compare(
    n: int,
    p: float,
    B: int,
    adjacency,
    steps: int,
    target_epsilon: float,
    target_delta: float,
    grid_step: float = DEFAULT_GRID_STEP,
    direction: str = "max",
    eta_mode: str = UNION,
) -> ComparisonReport:
    """Calibrate both analyses on identical grids and report the noise each needs."""
    adjacency = Adjacency.parse(adjacency)
    sigma_tight = calibrate_sigma(n, p, B, adjacency, steps, target_epsilon, target_delta, grid_step, direction)
    sigma_naive = calibrate_naive_sigma(
        n, p, B, adjacency, steps, target_epsilon, target_delta, grid_step, direction, eta_mode
    )
    if math.isfinite(sigma_naive) and sigma_tight > sigma_naive:
        log.warning("tight sigma %.6g exceeds baseline sigma %.6g (n=%d, p=%g, B=%d, steps=%d)",
                    sigma_tight, sigma_naive, n, p, B, steps)
    return ComparisonReport(
        n=n,
        p=p,
        B=B,
        adjacency=adjacency,
        steps=steps,
        target_epsilon=target_epsilon,
        target_delta=target_delta,
        sigma_tight=sigma_tight,
        sigma_naive=sigma_naive,
        truncation_prob_per_step=binom_sf_geq(n, B + 1, p),
        expected_batch=n * p,
        utilization=n * p / B,
        grid_step=grid_step,
        eta_mode=eta_mode,
    )


def delta_curve(
    params: TruncatedPoissonParams,
    adjacency,
    steps: int,
    epsilons,
    grid_step: float = DEFAULT_GRID_STEP,
    direction: str = "max",
    eta_mode: str = UNION,
) -> list:
    """Rows (epsilon, delta_tight, delta_naive) with each PLD built once for the whole grid."""
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(b <= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilon grid must be nonempty and strictly ascending")
    adjacency = Adjacency.parse(adjacency)
    tight = composed_plds(params, adjacency, steps, grid_step, direction)
    eta = truncation_eta(params.n, params.p, params.B, steps, eta_mode)
    untruncated = None if eta >= 1.0 else poisson_plds(params.p, params.sigma, adjacency, steps, grid_step, direction)
    rows = []
    for eps in epsilons:
        if untruncated is None:
            naive = 1.0
        else:
            naive = min(1.0, max_delta(untruncated, eps) + math.exp(eps) * eta)
        rows.append((eps, max_delta(tight, eps), naive))
    return rows
