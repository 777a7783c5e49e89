"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is compiled once before timing. The last section runs a full
accounting query in fresh interpreters with and without TRUNCPOIS_DISABLE_JIT.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from truncpois import _kernels
from truncpois._jit import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases():
    p_means, q_means = np.array([0.0, 2.0]), np.array([0.0, -1.0])
    p_logw = q_logw = np.log(np.array([0.7, 0.3]))
    t_grid = np.linspace(-10, 12, 4097)
    l_grid, _ = _kernels._loss_and_slope_np(t_grid, p_means, p_logw, q_means, q_logw, 0.5)
    targets = np.linspace(l_grid[0] + 1e-3, l_grid[-1] - 1e-3, 20000)
    inv = (targets, p_means, p_logw, q_means, q_logw, 1.0, t_grid, l_grid)

    rng = np.random.default_rng(0)
    a, b = rng.random(3000), rng.random(3000)
    masses = rng.random(200_000)
    masses /= masses.sum()

    return [
        ("invert_loss (20k targets)", _kernels.invert_loss_jit, _kernels.invert_loss_np, inv),
        ("direct_convolve (3k x 3k)", _kernels.direct_convolve_jit, _kernels.direct_convolve_np, (a, b)),
        ("hockey_stick_sum (200k)", _kernels.hockey_stick_sum_jit, _kernels.hockey_stick_sum_np,
         (masses, -100_000, 1e-4, 1.0)),
        ("algorithm1_law (n=16)", _kernels.algorithm1_law_jit, _kernels.algorithm1_law_np,
         (16, 0.3, 5, True)),
        ("equivalent_law (n=16)", _kernels.equivalent_law_jit, _kernels.equivalent_law_np,
         (16, 0.3, 5, True)),
    ]


END_TO_END = (
    "import time; from truncpois import TruncatedPoissonParams, account; "
    "prm = TruncatedPoissonParams(100000, 0.01, 1100, 1.34); "
    "account(prm, 'add-remove', 1, 1e-3, epsilon=1.0); "
    "t0 = time.perf_counter(); account(prm, 'add-remove', 100, 1e-4, epsilon=1.0); "
    "print(time.perf_counter() - t0)"
)


def end_to_end(disable_jit):
    env = dict(os.environ, TRUNCPOIS_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip())


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'kernel':<28}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for name, jit_fn, np_fn, fn_args in kernel_cases():
        jit_fn(*fn_args)  # compile
        tj = best_of(lambda: jit_fn(*fn_args), args.repeat)
        tn = best_of(lambda: np_fn(*fn_args), args.repeat)
        print(f"{name:<28}{tj * 1e3:>12.2f}{tn * 1e3:>12.2f}{tn / tj:>9.1f}x")

    tj, tn = end_to_end(False), end_to_end(True)
    print(f"{'account, 100 steps, 1e-4':<28}{tj * 1e3:>12.1f}{tn * 1e3:>12.1f}{tn / tj:>9.1f}x")


if __name__ == "__main__":
    main()
