"""Hot inner loops, each in a numba flavour and a pure-numpy flavour.

The public names at the bottom of the module pick one flavour according to
``TRUNCPOIS_DISABLE_JIT``; both are always importable (``*_jit`` / ``*_np``)
so tests and the benchmark can compare them side by side.
"""

import math

import numpy as np

from ._jit import JIT_ENABLED, njit

BISECT_ITERS = 200

# ---------------------------------------------------------------------------
# privacy-loss inversion
# ---------------------------------------------------------------------------


@njit
def _loss_and_slope_jit(t, p_means, p_logw, q_means, q_logw, inv2s2):
    """L(t) = log P(t) - log Q(t) and its derivative."""
    mp = -np.inf
    for i in range(p_means.shape[0]):
        d = t - p_means[i]
        v = p_logw[i] - d * d * inv2s2
        if v > mp:
            mp = v
    sp = 0.0
    sp_mu = 0.0
    for i in range(p_means.shape[0]):
        d = t - p_means[i]
        e = math.exp(p_logw[i] - d * d * inv2s2 - mp)
        sp += e
        sp_mu += e * p_means[i]
    mq = -np.inf
    for j in range(q_means.shape[0]):
        d = t - q_means[j]
        v = q_logw[j] - d * d * inv2s2
        if v > mq:
            mq = v
    sq = 0.0
    sq_mu = 0.0
    for j in range(q_means.shape[0]):
        d = t - q_means[j]
        e = math.exp(q_logw[j] - d * d * inv2s2 - mq)
        sq += e
        sq_mu += e * q_means[j]
    loss = (mp + math.log(sp)) - (mq + math.log(sq))
    slope = (sp_mu / sp - sq_mu / sq) * 2.0 * inv2s2
    return loss, slope


@njit
def invert_loss_jit(targets, p_means, p_logw, q_means, q_logw, sigma, t_grid, l_grid):
    """Solve L(t) = target for each target, L nondecreasing.

    ``l_grid`` holds L on the sorted ``t_grid`` and supplies the starting
    bracket; targets outside its range clamp to the grid ends.
    """
    inv2s2 = 0.5 / (sigma * sigma)
    g = t_grid.shape[0]
    out = np.empty(targets.shape[0])
    for k in range(targets.shape[0]):
        tgt = targets[k]
        j = np.searchsorted(l_grid, tgt, side="right") - 1
        if j < 0:
            out[k] = t_grid[0]
            continue
        if j >= g - 1:
            out[k] = t_grid[g - 1]
            continue
        a = t_grid[j]
        b = t_grid[j + 1]
        span = l_grid[j + 1] - l_grid[j]
        x = a if span <= 0.0 else a + (b - a) * (tgt - l_grid[j]) / span
        for _ in range(BISECT_ITERS):
            f, df = _loss_and_slope_jit(x, p_means, p_logw, q_means, q_logw, inv2s2)
            f -= tgt
            if f <= 0.0:
                a = x
            else:
                b = x
            if df > 0.0:
                x_new = x - f / df
            else:
                x_new = 0.5 * (a + b)
            if not (a < x_new < b):
                x_new = 0.5 * (a + b)
            if abs(x_new - x) <= 1e-14 * max(1.0, abs(x)) or b - a <= 1e-14 * max(1.0, abs(a)):
                x = x_new
                break
            x = x_new
        out[k] = x
    return out


def _loss_and_slope_np(t, p_means, p_logw, q_means, q_logw, inv2s2):
    def parts(means, logw):
        terms = logw[None, :] - (t[:, None] - means[None, :]) ** 2 * inv2s2
        m = terms.max(axis=1)
        e = np.exp(terms - m[:, None])
        s = e.sum(axis=1)
        return m + np.log(s), (e * means[None, :]).sum(axis=1) / s

    lp, mu_p = parts(p_means, p_logw)
    lq, mu_q = parts(q_means, q_logw)
    return lp - lq, (mu_p - mu_q) * 2.0 * inv2s2


def invert_loss_np(targets, p_means, p_logw, q_means, q_logw, sigma, t_grid, l_grid):
    inv2s2 = 0.5 / (sigma * sigma)
    g = t_grid.shape[0]
    j = np.searchsorted(l_grid, targets, side="right") - 1
    low = j < 0
    high = j >= g - 1
    jc = np.clip(j, 0, g - 2)
    a = t_grid[jc].copy()
    b = t_grid[jc + 1].copy()
    span = l_grid[jc + 1] - l_grid[jc]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(span > 0, a + (b - a) * (targets - l_grid[jc]) / span, a)
    live = ~(low | high)
    for _ in range(BISECT_ITERS):
        if not live.any():
            break
        idx = np.nonzero(live)[0]
        xi = x[idx]
        f, df = _loss_and_slope_np(xi, p_means, p_logw, q_means, q_logw, inv2s2)
        f = f - targets[idx]
        ai = np.where(f <= 0.0, xi, a[idx])
        bi = np.where(f <= 0.0, b[idx], xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = np.where(df > 0.0, xi - f / df, 0.5 * (ai + bi))
        xn = np.where((xn > ai) & (xn < bi), xn, 0.5 * (ai + bi))
        done = (np.abs(xn - xi) <= 1e-14 * np.maximum(1.0, np.abs(xi))) | (
            bi - ai <= 1e-14 * np.maximum(1.0, np.abs(ai))
        )
        a[idx], b[idx], x[idx] = ai, bi, xn
        live[idx[done]] = False
    x[low] = t_grid[0]
    x[high] = t_grid[g - 1]
    return x


# ---------------------------------------------------------------------------
# convolution and hockey-stick sums
# ---------------------------------------------------------------------------


@njit
def direct_convolve_jit(a, b):
    out = np.zeros(a.shape[0] + b.shape[0] - 1)
    for i in range(a.shape[0]):
        ai = a[i]
        if ai == 0.0:
            continue
        for j in range(b.shape[0]):
            out[i + j] += ai * b[j]
    return out


def direct_convolve_np(a, b):
    return np.convolve(a, b)


@njit
def hockey_stick_sum_jit(masses, first_index, grid_step, epsilon):
    """sum_k masses[k] * max(0, 1 - exp(epsilon - loss_k)), loss_k = (first_index + k) * grid_step."""
    acc = 0.0
    for k in range(masses.shape[0]):
        loss = (first_index + k) * grid_step
        if loss > epsilon:
            acc += masses[k] * -math.expm1(epsilon - loss)
    return acc


def hockey_stick_sum_np(masses, first_index, grid_step, epsilon):
    losses = (first_index + np.arange(masses.shape[0])) * grid_step
    above = losses > epsilon
    return float(np.sum(masses[above] * -np.expm1(epsilon - losses[above])))


# ---------------------------------------------------------------------------
# exact subset laws (bit i of a mask <-> example i + 1; bit 0 is the distinguished one)
# ---------------------------------------------------------------------------


@njit
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit
def _comb(n, k):
    if k < 0 or k > n:
        return 0.0
    r = 1.0
    for i in range(1, k + 1):
        r = r * (n - k + i) / i
    return r


@njit
def algorithm1_law_jit(n, p, B, present):
    size = 1 << n
    law = np.zeros(size)
    m = n if present else n - 1
    for mask in range(size):
        if not present and (mask & 1):
            continue
        k = _popcount(mask)
        pr = p**k * (1.0 - p) ** (m - k)
        if pr == 0.0:
            continue
        if k <= B:
            law[mask] += pr
        else:
            share = pr / _comb(k, B)
            sub = mask
            while sub:
                if _popcount(sub) == B:
                    law[sub] += share
                sub = (sub - 1) & mask
    return law


@njit
def equivalent_law_jit(n, p, B, present):
    size = 1 << n
    law = np.zeros(size)
    m = n - 1
    # Aggregate the s_{n-1} >= B weights once.
    w_first_b = 0.0
    w_swap = 0.0
    for s in range(B, m + 1):
        ps = _comb(m, s) * p**s * (1.0 - p) ** (m - s)
        keep_one = p * B / (s + 1.0)
        if present:
            w_first_b += ps * (1.0 - keep_one)
            w_swap += ps * keep_one
        else:
            w_first_b += ps
    for t in range(0, size, 2):
        c = _popcount(t)
        if c < B:
            base = _comb(m, c) * p**c * (1.0 - p) ** (m - c) / _comb(m, c)
            if present:
                law[t] += base * (1.0 - p)
                law[t | 1] += base * p
            else:
                law[t] += base
        if c == B:
            law[t] += w_first_b / _comb(m, B)
        if c == B - 1 and present:
            law[t | 1] += w_swap / _comb(m, B - 1)
    return law


def _popcounts(size):
    masks = np.arange(size)
    counts = np.zeros(size, dtype=np.int64)
    x = masks.copy()
    while x.any():
        counts += x & 1
        x >>= 1
    return masks, counts


def _comb_np(n, k):
    k = np.asarray(k)
    out = np.zeros(k.shape)
    ok = (k >= 0) & (k <= n)
    out[ok] = np.array([math.comb(int(n), int(v)) for v in k[ok]], dtype=np.float64)
    return out


def algorithm1_law_np(n, p, B, present):
    size = 1 << n
    masks, k = _popcounts(size)
    m = n if present else n - 1
    valid = np.ones(size, dtype=bool) if present else (masks & 1) == 0
    pr = np.where(valid, p ** k * (1.0 - p) ** (m - np.minimum(k, m)), 0.0)
    law = np.where(k <= B, pr, 0.0)
    ways = np.array([math.comb(int(v), B) for v in k], dtype=np.float64)
    g = np.where(k > B, pr / np.maximum(ways, 1.0), 0.0)
    # Superset sums: G[T] = sum over masks M containing T of g[M].
    for bit in range(n):
        view = g.reshape(-1, 2, 1 << bit)
        view[:, 0, :] += view[:, 1, :]
    law += np.where(k == B, g, 0.0)
    return law


def equivalent_law_np(n, p, B, present):
    size = 1 << n
    masks, c = _popcounts(size)
    m = n - 1
    s = np.arange(B, m + 1)
    ps = _comb_np(m, s) * p ** s * (1.0 - p) ** (m - s)
    keep_one = p * B / (s + 1.0)
    if present:
        w_first_b = float(np.sum(ps * (1.0 - keep_one)))
        w_swap = float(np.sum(ps * keep_one))
    else:
        w_first_b = float(np.sum(ps))
        w_swap = 0.0
    law = np.zeros(size)
    t = masks[(masks & 1) == 0]
    ct = c[t]
    cm = np.minimum(ct, m)
    # below the cap the first s_{n-1} of the permutation are a uniform s-subset,
    # so each particular subset gets p^s (1-p)^(m-s)
    base = np.where(ct < B, p ** ct * (1.0 - p) ** (m - cm), 0.0)
    if present:
        law[t] += base * (1.0 - p)
        law[t | 1] += base * p
        if B - 1 <= m:
            law[t | 1] += np.where(ct == B - 1, w_swap / math.comb(m, B - 1), 0.0)
    else:
        law[t] += base
    if B <= m:
        law[t] += np.where(ct == B, w_first_b / math.comb(m, B), 0.0)
    return law


if JIT_ENABLED:
    invert_loss = invert_loss_jit
    direct_convolve = direct_convolve_jit
    hockey_stick_sum = hockey_stick_sum_jit
    algorithm1_law = algorithm1_law_jit
    equivalent_law = equivalent_law_jit
else:
    invert_loss = invert_loss_np
    direct_convolve = direct_convolve_np
    hockey_stick_sum = hockey_stick_sum_np
    algorithm1_law = algorithm1_law_np
    equivalent_law = equivalent_law_np
