"""Branched one-dimensional dominating pairs for truncated Poisson sampling.

Each pair releases a branch label r (r=1: the rest of the batch stayed under
the cap, r=2: it hit the cap) together with a scalar Gaussian mixture. The
branch probabilities do not depend on the dataset, so accounting can be done
per branch and mixed afterwards.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Tuple

from .binom_math import (
    BRANCH_ABSENT_FLOOR,
    BranchAbsentError,
    TruncatedPoissonParams,
    binom_cdf_lt,
    binom_sf_geq,
    truncation_q,
)

WEIGHT_TOL = 1e-12


class Adjacency(enum.Enum):
    ADD_REMOVE = "add-remove"
    ZERO_OUT = "zero-out"
    REPLACE_ONE = "replace-one"

    @classmethod
    def parse(cls, value) -> "Adjacency":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"addremove": "add-remove", "zeroout": "zero-out", "replaceone": "replace-one"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown adjacency {value!r}; expected one of "
                             f"{[a.value for a in cls]}") from None


@dataclass(frozen=True)
class GaussianMixture:
    """sum_i weight_i * N(mean_i, sigma^2) on the real line."""

    sigma: float
    components: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        comps = tuple((float(w), float(m)) for w, m in self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for w, m in comps:
            if not w > 0:
                raise ValueError(f"component weights must be positive, got {w}")
            if not math.isfinite(m):
                raise ValueError(f"component means must be finite, got {m}")
        total = math.fsum(w for w, _ in comps)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"component weights sum to {total!r}, not 1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def from_weights(cls, sigma, weighted_means) -> "GaussianMixture":
        """Build a mixture, dropping zero-weight components and merging equal means."""
        merged = {}
        for w, m in weighted_means:
            if w > 0:
                merged[float(m)] = merged.get(float(m), 0.0) + float(w)
        return cls(sigma, tuple((w, m) for m, w in merged.items()))

    @property
    def weights(self) -> Tuple[float, ...]:
        return tuple(w for w, _ in self.components)

    @property
    def means(self) -> Tuple[float, ...]:
        return tuple(m for _, m in self.components)

    def negated(self) -> "GaussianMixture":
        return GaussianMixture(self.sigma, tuple((w, -m) for w, m in self.components))

    def canonical(self) -> "GaussianMixture":
        return GaussianMixture(self.sigma, tuple(sorted(self.components, key=lambda c: (c[1], c[0]))))


@dataclass(frozen=True)
class MixturePair:
    P: GaussianMixture
    Q: GaussianMixture

    def __post_init__(self):
        if self.P.sigma != self.Q.sigma:
            raise ValueError("P and Q must share sigma")

    @property
    def sigma(self) -> float:
        return self.P.sigma

    def swapped(self) -> "MixturePair":
        return MixturePair(self.Q, self.P)


@dataclass(frozen=True)
class BranchedDominatingPair:
    branches: Tuple[Tuple[float, MixturePair], ...]
    adjacency: Adjacency
    params: TruncatedPoissonParams

    def __post_init__(self):
        if not 1 <= len(self.branches) <= 2:
            raise ValueError("expected one or two branches")
        total = math.fsum(w for w, _ in self.branches)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"branch weights sum to {total!r}, not 1")

    @property
    def weights(self) -> Tuple[float, ...]:
        return tuple(w for w, _ in self.branches)

    @property
    def pairs(self) -> Tuple[MixturePair, ...]:
        return tuple(pair for _, pair in self.branches)


def branch_weights(params: TruncatedPoissonParams) -> Tuple[float, float]:
    """(Pr[Binom(n-1,p) < B], Pr[Binom(n-1,p) >= B]) with underflowing w2 snapped to 0."""
    n, p, B = params.n, params.p, params.B
    if B >= n or p == 0.0:
        return 1.0, 0.0
    w2 = binom_sf_geq(n - 1, B, p)
    if w2 < BRANCH_ABSENT_FLOOR:
        return 1.0, 0.0
    w1 = binom_cdf_lt(n - 1, B, p)
    return w1, w2


def _mix(sigma, weighted_means):
    return GaussianMixture.from_weights(sigma, weighted_means)


def poisson_pair(p: float, sigma: float, adjacency) -> MixturePair:
    """Dominating pair of the untruncated Poisson subsampled Gaussian."""
    adjacency = Adjacency.parse(adjacency)
    P = _mix(sigma, [(1.0 - p, 0.0), (p, 1.0)])
    if adjacency is Adjacency.REPLACE_ONE:
        Q = _mix(sigma, [(1.0 - p, 0.0), (p, -1.0)])
    else:
        Q = _mix(sigma, [(1.0, 0.0)])
    return MixturePair(P, Q)


def truncated_branch_pair(q: float, sigma: float, adjacency) -> MixturePair:
    """Pair for the branch where the batch hit the cap; q is the effective inclusion probability."""
    adjacency = Adjacency.parse(adjacency)
    P = _mix(sigma, [(1.0 - q, 0.0), (q, 2.0)])
    if adjacency is Adjacency.ADD_REMOVE:
        Q = _mix(sigma, [(1.0, 0.0)])
    elif adjacency is Adjacency.ZERO_OUT:
        Q = _mix(sigma, [(1.0 - q, 0.0), (q, -1.0)])
    else:
        Q = _mix(sigma, [(1.0 - q, 0.0), (q, -2.0)])
    return MixturePair(P, Q)


def build_pair(params: TruncatedPoissonParams, adjacency) -> BranchedDominatingPair:
    """Dominating pair of the truncated Poisson sampled Gaussian sum under ``adjacency``.

    With ``B >= n`` (or ``p == 0``) only the first branch survives and the
    result is the plain Poisson subsampled Gaussian pair. For the cyclic
    Poisson variant of banded matrix factorization, pass the size of one
    cyclic subset as ``n``.
    """
    adjacency = Adjacency.parse(adjacency)
    w1, w2 = branch_weights(params)
    branches = []
    if w1 > 0.0:
        branches.append((w1, poisson_pair(params.p, params.sigma, adjacency)))
    if w2 > 0.0:
        try:
            q = truncation_q(params)
        except BranchAbsentError:
            q = 0.0
        if q > 0.0:
            branches.append((w2, truncated_branch_pair(q, params.sigma, adjacency)))
        else:  # pragma: no cover - q > 0 whenever w2 is representable
            branches.append((w2, poisson_pair(0.0, params.sigma, adjacency)))
    return BranchedDominatingPair(tuple(branches), adjacency, params)


def reverse(pair: BranchedDominatingPair) -> BranchedDominatingPair:
    """Swap P and Q in every branch, giving a dominating pair for the other direction."""
    return BranchedDominatingPair(
        tuple((w, mp.swapped()) for w, mp in pair.branches), pair.adjacency, pair.params
    )
