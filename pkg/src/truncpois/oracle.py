"""Ground truth that shares no code path with the PLD accountant.

* :func:`hockey_stick_mixture` integrates max(P - e^eps Q, 0) exactly for
  scalar Gaussian mixtures by locating every sign change of the integrand.
* :func:`exact_mechanism_law` gives the exact output law of the truncated
  Poisson sampled sum on a scalar dataset, so the accountant's bounds can be
  checked against an actual mechanism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special

from .binom_math import TruncatedPoissonParams, log_binom_pmf
from .dominating_pairs import Adjacency, GaussianMixture

MAX_EXACT_N = 10_000
BRACKET_SIGMAS = 12.0
MIN_BRACKET_POINTS = 4096


def _log_density(t: np.ndarray, mix: GaussianMixture) -> np.ndarray:
    w = np.log(np.array(mix.weights))
    mu = np.array(mix.means)
    terms = w[None, :] - (t[:, None] - mu[None, :]) ** 2 / (2.0 * mix.sigma**2)
    return special.logsumexp(terms, axis=1)


def _gap(t, P, Q, epsilon):
    """Sign-equivalent to P(t) - e^eps Q(t), but on the log scale."""
    return _log_density(np.atleast_1d(t), P) - _log_density(np.atleast_1d(t), Q) - epsilon


def _mass(mix: GaussianMixture, lo: float, hi: float) -> float:
    total = 0.0
    for w, mu in mix.components:
        zl = (lo - mu) / mix.sigma
        zh = (hi - mu) / mix.sigma
        if zl >= 0:
            total += w * (special.ndtr(-zl) - special.ndtr(-zh))
        else:
            total += w * (special.ndtr(zh) - special.ndtr(zl))
    return total


def _bisect_root(P, Q, epsilon, a, b, fa):
    for _ in range(200):
        mid = 0.5 * (a + b)
        if b - a <= 1e-13 or mid in (a, b):
            break
        fm = _gap(mid, P, Q, epsilon)[0]
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def hockey_stick_mixture(P: GaussianMixture, Q: GaussianMixture, epsilon: float) -> float:
    """delta(epsilon) = integral of max(P(t) - e^epsilon Q(t), 0) dt for scalar mixtures."""
    if P.sigma != Q.sigma:
        raise ValueError("P and Q must share sigma")
    sigma = P.sigma
    means = P.means + Q.means
    lo = min(means) - BRACKET_SIGMAS * sigma
    hi = max(means) + BRACKET_SIGMAS * sigma
    count = max(10 * (len(P.components) + len(Q.components)) + 64, MIN_BRACKET_POINTS)
    grid = np.linspace(lo, hi, count)
    f = _gap(grid, P, Q, epsilon)
    pos = f > 0
    cuts = [-math.inf]
    for i in np.nonzero(pos[1:] != pos[:-1])[0]:
        cuts.append(_bisect_root(P, Q, epsilon, grid[i], grid[i + 1], f[i]))
    cuts.append(math.inf)
    # sign on each piece follows the bracket samples: first piece takes pos[0], then alternates
    delta = 0.0
    sign = bool(pos[0])
    scale = math.exp(epsilon)
    for a, b in zip(cuts[:-1], cuts[1:]):
        if sign:
            delta += _mass(P, a, b) - scale * _mass(Q, a, b)
        sign = not sign
    return float(min(1.0, max(0.0, delta)))


@dataclass(frozen=True)
class WorstCaseInstance:
    """A scalar dataset pair for the mechanism.

    The distinguished example holds ``value`` in D. Under add-remove it is
    absent from D', under zero-out it is 0 in D', under replace-one it is
    ``-value``. Every other example holds ``others``; the default is 1 for
    add-remove / zero-out and 0 for replace-one.
    """

    params: TruncatedPoissonParams
    adjacency: Adjacency
    value: float = 1.0
    others: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "adjacency", Adjacency.parse(self.adjacency))
        if self.params.n > MAX_EXACT_N:
            raise ValueError(f"exact laws are limited to n <= {MAX_EXACT_N}")
        if self.others is None:
            default = 0.0 if self.adjacency is Adjacency.REPLACE_ONE else 1.0
            object.__setattr__(self, "others", default)
        if abs(self.value) > 1 or abs(self.others) > 1:
            raise ValueError("dataset entries must lie in the unit ball")


def _truncated_sum_law(n_rest, p, B, sigma, distinguished, others):
    """Law of the noisy sum when n_rest 'others' examples plus an optional distinguished one are sampled."""
    s = np.arange(n_rest + 1)
    ps = np.exp(log_binom_pmf(n_rest, s, p))
    out = []
    for si, pr in zip(s, ps):
        if pr == 0.0:
            continue
        if distinguished is None:
            out.append((pr, others * min(si, B)))
            continue
        # distinguished example not drawn
        out.append((pr * (1.0 - p), others * min(si, B)))
        if si + 1 <= B:
            out.append((pr * p, distinguished + others * si))
        else:
            keep = B / (si + 1.0)
            out.append((pr * p * keep, distinguished + others * (B - 1)))
            out.append((pr * p * (1.0 - keep), others * B))
    return GaussianMixture.from_weights(sigma, _renormalized(out))


def _renormalized(weighted):
    total = math.fsum(w for w, _ in weighted if w > 0)
    return [(w / total, m) for w, m in weighted if w > 0]


def exact_mechanism_law(instance: WorstCaseInstance) -> Tuple[GaussianMixture, GaussianMixture]:
    """Exact output laws (M(D), M(D')) on the scalar dataset pair described by ``instance``."""
    prm = instance.params
    n, p, B, sigma = prm.n, prm.p, prm.B, prm.sigma
    if n > MAX_EXACT_N:
        raise ValueError(f"exact laws are limited to n <= {MAX_EXACT_N}")
    x, others = instance.value, instance.others
    law_d = _truncated_sum_law(n - 1, p, B, sigma, x, others)
    if instance.adjacency is Adjacency.ADD_REMOVE:
        law_d2 = _truncated_sum_law(n - 1, p, B, sigma, None, others)
    elif instance.adjacency is Adjacency.ZERO_OUT:
        law_d2 = _truncated_sum_law(n - 1, p, B, sigma, 0.0, others)
    else:
        law_d2 = _truncated_sum_law(n - 1, p, B, sigma, -x, others)
    return law_d, law_d2


def exact_mechanism_delta(instance: WorstCaseInstance, epsilon: float) -> float:
    """max over both orderings of the hockey-stick divergence between M(D) and M(D')."""
    a, b = exact_mechanism_law(instance)
    return max(hockey_stick_mixture(a, b, epsilon), hockey_stick_mixture(b, a, epsilon))
