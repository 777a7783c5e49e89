"""The truncated Poisson sampler, its two-stage reformulation, and exact subset laws.

Examples are numbered 1..n; example 1 is the distinguished one that differs
between adjacent datasets. Subsets are bitmasks with bit ``i - 1`` standing
for example ``i``.

RNG contract: every sampler takes an integer seed and draws from
``numpy.random.Generator(PCG64(seed))`` using only integer draws, in the
order documented on each function, so identical seeds give identical subsets
on every platform.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import FrozenSet

import numpy as np

from . import _kernels

MAX_ENUM_N = 12
ALGORITHM1 = "algorithm1"
EQUIVALENT = "equivalent"
PRESENT = "present"
ABSENT = "absent"

# Bernoulli(p) coins compare a uniform 53-bit integer with round(p * 2**53).
_COIN_BITS = 53
_COIN_SCALE = 1 << _COIN_BITS


@dataclass(frozen=True)
class SubsetLaw:
    """Exact law of a random subset of {1..n}, indexed by bitmask."""

    n: int
    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if probs.shape != (1 << self.n,):
            raise ValueError("probabilities must have length 2**n")
        probs.setflags(write=False)
        object.__setattr__(self, "probabilities", probs)

    def as_dict(self, tol: float = 0.0) -> dict:
        return {
            mask_to_subset(int(m)): float(v)
            for m, v in enumerate(self.probabilities)
            if v > tol
        }

    def inclusion_probability(self, example: int) -> float:
        bit = 1 << (example - 1)
        masks = np.arange(self.probabilities.size)
        return float(self.probabilities[(masks & bit) != 0].sum())

    def max_size(self) -> int:
        support = np.nonzero(self.probabilities > 0)[0]
        return max((bin(int(m)).count("1") for m in support), default=0)


def mask_to_subset(mask: int) -> FrozenSet[int]:
    return frozenset(i + 1 for i in range(mask.bit_length()) if mask >> i & 1)


def subset_to_mask(subset) -> int:
    return sum(1 << (i - 1) for i in subset)


def _check(n, p, B):
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if int(B) != B or B < 1:
        raise ValueError("B must be a positive integer")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")


def _coins(rng: np.random.Generator, count: int, p: float) -> np.ndarray:
    threshold = int(round(p * _COIN_SCALE))
    return rng.integers(0, _COIN_SCALE, size=count, dtype=np.int64) < threshold


def sample_algorithm1(n: int, p: float, B: int, seed: int, examples=None) -> FrozenSet[int]:
    """One draw of the truncated Poisson sample.

    Stream order: one coin per example in index order, then (only if the
    batch exceeds B) a permutation of the drawn examples whose first B entries
    are kept.
    """
    _check(n, p, B)
    rng = np.random.Generator(np.random.PCG64(seed))
    pool = np.arange(1, n + 1) if examples is None else np.asarray(sorted(examples))
    return _draw_algorithm1(rng, pool, p, B)[0]


def _draw_algorithm1(rng, pool, p, B):
    drawn = pool[_coins(rng, pool.size, p)]
    truncated = drawn.size > B
    if truncated:
        drawn = drawn[rng.permutation(drawn.size)[:B]]
    return frozenset(int(i) for i in drawn), truncated


def sample_equivalent_process(n: int, p: float, B: int, distinguished: str, seed: int) -> FrozenSet[int]:
    """One draw of the two-stage process that isolates example 1.

    Stream order: a permutation of examples 2..n; n-1 coins whose count is
    s_{n-1}; one coin s_1; and, only when s_{n-1} >= B, one integer uniform on
    [0, s_{n-1}] whose value below B is the coin s_1'.
    """
    _check(n, p, B)
    if distinguished not in (PRESENT, ABSENT):
        raise ValueError("distinguished must be 'present' or 'absent'")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = 2 + rng.permutation(n - 1)
    s_rest = int(_coins(rng, n - 1, p).sum())
    s_1 = bool(_coins(rng, 1, p)[0])
    include_1 = distinguished == PRESENT and s_1
    if s_rest < B:
        picked = list(order[:s_rest])
        if include_1:
            picked.append(1)
    else:
        s_1_prime = int(rng.integers(0, s_rest + 1)) < B
        if include_1 and s_1_prime:
            picked = list(order[:B - 1]) + [1]
        else:
            picked = list(order[:B])
    return frozenset(int(i) for i in picked)


def enumerate_law(n: int, p: float, B: int, procedure: str = ALGORITHM1, distinguished: str = PRESENT) -> SubsetLaw:
    """Exact law of the returned subset, by exhaustive enumeration (n <= 12).

    With ``distinguished='absent'`` example 1 is removed from the dataset; for
    the truncated sampler that means running it on examples 2..n.
    """
    _check(n, p, B)
    if n > MAX_ENUM_N:
        raise ValueError(f"exact enumeration is limited to n <= {MAX_ENUM_N}")
    if distinguished not in (PRESENT, ABSENT):
        raise ValueError("distinguished must be 'present' or 'absent'")
    present = distinguished == PRESENT
    if procedure == ALGORITHM1:
        probs = _kernels.algorithm1_law(n, float(p), int(B), present)
    elif procedure == EQUIVALENT:
        probs = _kernels.equivalent_law(n, float(p), int(B), present)
    else:
        raise ValueError(f"unknown procedure {procedure!r}")
    return SubsetLaw(n, probs)


def tv_distance(a: SubsetLaw, b: SubsetLaw) -> float:
    if a.n != b.n:
        raise ValueError("laws must be over the same ground set")
    return 0.5 * float(np.abs(a.probabilities - b.probabilities).sum())


def empirical_tv(samples_a, samples_b) -> float:
    """TV distance between the empirical laws of two lists of subsets."""
    ca, cb = Counter(samples_a), Counter(samples_b)
    na, nb = len(samples_a), len(samples_b)
    return 0.5 * sum(abs(ca[k] / na - cb[k] / nb) for k in set(ca) | set(cb))


def lemma_tv(n: int, p: float, B: int, distinguished: str = PRESENT) -> float:
    """TV distance between the truncated sampler and the two-stage process."""
    return tv_distance(
        enumerate_law(n, p, B, ALGORITHM1, distinguished),
        enumerate_law(n, p, B, EQUIVALENT, distinguished),
    )


def inclusion_probability(n: int, p: float, B: int) -> float:
    """Marginal probability that example 1 survives truncated sampling.

    p * Pr[s < B] + Pr[s >= B] * q with s ~ Binom(n-1, p) and q the
    truncation-conditional inclusion probability.
    """
    from .binom_math import BranchAbsentError, TruncatedPoissonParams, binom_cdf_lt, binom_sf_geq, truncation_q

    below = binom_cdf_lt(n - 1, B, p)
    try:
        q = truncation_q(TruncatedPoissonParams(n, p, B))
    except BranchAbsentError:
        return p * below if below > 0 else p
    return p * below + binom_sf_geq(n - 1, B, p) * q


def _summary(subset):
    return len(subset), 1 in subset


def simulate(n: int, p: float, B: int, trials: int, seed: int, exact_limit: int = 8) -> dict:
    """Compare the truncated sampler with the two-stage process.

    Up to ``exact_limit`` examples the subset laws are enumerated exactly
    (``trials`` is then only validated). Beyond it, ``trials`` draws of each
    procedure are compared through the empirical law of (batch size, whether
    example 1 is in the batch), which stays estimable at any n.
    """
    from .binom_math import binom_sf_geq

    _check(n, p, B)
    if isinstance(trials, bool) or int(trials) != trials or trials < 1:
        raise ValueError("trials must be a positive integer")
    trunc_prob = binom_sf_geq(n, B + 1, p)
    if n <= exact_limit:
        return {
            "mode": "exact",
            "n": n,
            "p": p,
            "B": B,
            "tv_present": lemma_tv(n, p, B, PRESENT),
            "tv_absent": lemma_tv(n, p, B, ABSENT),
            "truncation_probability": trunc_prob,
            "truncation_frequency": trunc_prob,
            "inclusion_probability": inclusion_probability(n, p, B),
        }
    trials = int(trials)
    seeds = np.random.SeedSequence(seed).generate_state(4 * trials, dtype=np.uint64)
    pool = np.arange(1, n + 1)
    pool_absent = np.arange(2, n + 1)

    def rng(i):
        return np.random.Generator(np.random.PCG64(int(seeds[i])))

    a_present, truncations = [], 0
    for i in range(trials):
        subset, cut = _draw_algorithm1(rng(i), pool, p, B)
        a_present.append(_summary(subset))
        truncations += cut
    e_present = [_summary(sample_equivalent_process(n, p, B, PRESENT, int(seeds[trials + i]))) for i in range(trials)]
    a_absent = [_summary(_draw_algorithm1(rng(2 * trials + i), pool_absent, p, B)[0]) for i in range(trials)]
    e_absent = [_summary(sample_equivalent_process(n, p, B, ABSENT, int(seeds[3 * trials + i]))) for i in range(trials)]
    return {
        "mode": "sampled",
        "n": n,
        "p": p,
        "B": B,
        "trials": trials,
        "seed": int(seed),
        "tv_present": empirical_tv(a_present, e_present),
        "tv_absent": empirical_tv(a_absent, e_absent),
        "truncation_probability": trunc_prob,
        "truncation_frequency": truncations / trials,
        "inclusion_probability": inclusion_probability(n, p, B),
        "inclusion_frequency": sum(inc for _, inc in a_present) / trials,
    }
