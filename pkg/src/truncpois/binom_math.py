"""Binomial probabilities in log space and the truncation-conditional inclusion probability.

The log pmf follows Loader's saddle-point decomposition (Stirling error plus
the deviance term ``bd0``), which keeps full relative precision for ``n`` far
beyond what naive log-gamma differences tolerate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

# Below this the r=2 branch weight is treated as exactly zero.
BRANCH_ABSENT_FLOOR = 1e-300
# betainc keeps ~1e-14 relative accuracy down to about here, then degrades
# as its intermediates approach the denormal range
_BETAINC_FLOOR = 1e-250

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


class BranchAbsentError(ValueError):
    """The truncating branch has (numerically) zero probability."""


@dataclass(frozen=True)
class TruncatedPoissonParams:
    """Parameters of the truncated Poisson sampled Gaussian sum.

    Attributes:
        n: dataset size.
        p: per-example inclusion probability.
        B: maximum batch size; batches above it are cut down to a uniformly
            random subset of this size.
        sigma: standard deviation of the Gaussian noise, in units of the
            per-example norm bound.
    """

    n: int
    p: float
    B: int
    sigma: float = 1.0

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if isinstance(self.B, bool) or int(self.B) != self.B or self.B < 1:
            raise ValueError(f"B must be a positive integer, got {self.B!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p!r}")
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "B", int(self.B))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def never_truncates(self) -> bool:
        return self.B >= self.n

    def with_sigma(self, sigma: float) -> "TruncatedPoissonParams":
        return replace(self, sigma=sigma)


def _stirlerr(n: np.ndarray) -> np.ndarray:
    """log(n!) - log(sqrt(2 pi n) (n/e)^n) for n >= 1."""
    n = np.asarray(n, dtype=np.float64)
    out = np.empty_like(n)
    small = n <= 15.0
    if np.any(small):
        ns = n[small]
        out[small] = special.gammaln(ns + 1.0) - (ns + 0.5) * np.log(ns) + ns - _LOG_SQRT_2PI
    big = ~small
    if np.any(big):
        nb = n[big]
        nn = nb * nb
        s0, s1, s2, s3, s4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188
        out[big] = (s0 - (s1 - (s2 - (s3 - s4 / nn) / nn) / nn) / nn) / nb
    return out


def _bd0(x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Deviance term x log(x / mu) + mu - x, stable when x is close to mu."""
    x, mu = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(mu, dtype=np.float64))
    with np.errstate(divide="ignore", over="ignore"):
        out = x * (np.log(x) - np.log(mu)) + mu - x
    close = np.abs(x - mu) < 0.1 * (x + mu)
    if np.any(close):
        xc, mc = x[close], mu[close]
        v = (xc - mc) / (xc + mc)
        s = (xc - mc) * v
        ej = 2.0 * xc * v
        v2 = v * v
        active = np.ones(s.shape, dtype=bool)
        for j in range(1, 1000):
            ej = ej * v2
            s_new = s + ej / (2 * j + 1)
            active &= s_new != s
            s = np.where(active, s_new, s)
            if not active.any():
                break
        out[close] = s
    return out


def log_binom_pmf(n: int, k, p: float):
    """log Pr[Binom(n, p) = k]; ``k`` may be a scalar or an integer array.

    Returns ``-inf`` for impossible outcomes (e.g. ``k > 0`` with ``p = 0``).
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    scalar = np.ndim(k) == 0
    k_arr = np.atleast_1d(np.asarray(k))
    if np.any(k_arr < 0) or np.any(k_arr > n):
        raise ValueError(f"k must lie in [0, n={n}]")
    kf = k_arr.astype(np.float64)
    q = 1.0 - p
    out = np.full(kf.shape, -np.inf)

    if p == 0.0:
        out[kf == 0] = 0.0
    elif p == 1.0:
        out[kf == n] = 0.0
    else:
        log1mp = math.log1p(-p)
        out[kf == 0] = n * log1mp
        out[kf == n] = n * math.log(p)
        mid = (kf > 0) & (kf < n)
        if np.any(mid):
            km = kf[mid]
            nf = float(n)
            lc = (
                _stirlerr(np.array([nf]))[0]
                - _stirlerr(km)
                - _stirlerr(nf - km)
                - _bd0(km, nf * p)
                - _bd0(nf - km, nf * q)
            )
            lf = _LOG_2PI + np.log(km) + np.log1p(-km / nf)
            out[mid] = lc - 0.5 * lf
    return float(out[0]) if scalar else out


def binom_sf_geq(n: int, B: int, p: float) -> float:
    """Pr[Binom(n, p) >= B]."""
    if B <= 0:
        return 1.0
    if B > n:
        return 0.0
    return float(special.betainc(B, n - B + 1, p))


def binom_cdf_lt(n: int, B: int, p: float) -> float:
    """Pr[Binom(n, p) < B], computed directly rather than as 1 - sf."""
    if B <= 0:
        return 0.0
    if B > n:
        return 1.0
    return float(special.betaincc(B, n - B + 1, p))


def log_binom_sf_geq(n: int, B: int, p: float) -> float:
    """log Pr[Binom(n, p) >= B], falling back to a log-space tail sum on underflow."""
    sf = binom_sf_geq(n, B, p)
    if sf > _BETAINC_FLOOR:
        return math.log(sf)
    if B > n or p == 0.0:
        return -math.inf
    # Tail far beyond the mode: terms shrink geometrically, so stop once negligible.
    total = -math.inf
    first = None
    chunk = 4096
    start = B
    while start <= n:
        ks = np.arange(start, min(n, start + chunk - 1) + 1)
        lp = log_binom_pmf(n, ks, p)
        total = float(np.logaddexp(total, special.logsumexp(lp)))
        if first is None:
            first = lp[0]
        if lp[-1] < first - 80.0:
            break
        start += chunk
    return total


def _check_branch(params: TruncatedPoissonParams) -> None:
    # q stays well defined (in log space) even when the branch weight underflows;
    # dropping such branches is the caller's decision, see BRANCH_ABSENT_FLOOR
    n, p, B = params.n, params.p, params.B
    if B >= n or p == 0.0:
        raise BranchAbsentError(f"no truncation possible for n={n}, p={p}, B={B}")


def truncation_q(params: TruncatedPoissonParams) -> float:
    """Inclusion probability of the distinguished example given the batch truncates.

    Uses the closed form Pr[Binom(n,p) >= B+1] / Pr[Binom(n-1,p) >= B] * B/n,
    which needs a constant number of incomplete-beta evaluations.

    Raises:
        BranchAbsentError: if truncation cannot happen (``B >= n`` or ``p == 0``).
    """
    _check_branch(params)
    n, p, B = params.n, params.p, params.B
    num = binom_sf_geq(n, B + 1, p)
    w2 = binom_sf_geq(n - 1, B, p)
    if num > _BETAINC_FLOOR and w2 > _BETAINC_FLOOR:
        q = num / w2 * B / n
    else:
        q = math.exp(log_binom_sf_geq(n, B + 1, p) - log_binom_sf_geq(n - 1, B, p)) * B / n
    return min(max(q, 0.0), p * B / (B + 1))


def truncation_q_direct(params: TruncatedPoissonParams) -> float:
    """Same quantity as :func:`truncation_q`, by the literal O(n) sum over batch sizes.

    p * sum_{s=B}^{n-1} Pr[Binom(n-1,p) = s] / Pr[Binom(n-1,p) >= B] * B/(s+1)
    """
    _check_branch(params)
    n, p, B = params.n, params.p, params.B
    s = np.arange(B, n)
    log_w2 = log_binom_sf_geq(n - 1, B, p)
    cond = np.exp(log_binom_pmf(n - 1, s, p) - log_w2)
    return float(p * np.sum(cond * (B / (s + 1.0))))
