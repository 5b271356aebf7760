#!/usr/bin/env python
"""Compare the pure-numpy and compiled integrator kernels.

Times the lattice sweep (the hot loop of every rectangle probability and
critical-value computation) across dimensions and lattice sizes and checks
that both kernels agree on the result.  Run after an editable install:

    python benchmarks/bench_mvn.py

Typical outcome on x86-64 with scipy 1.15: the compiled kernel is ~10-20%
quicker at the smallest lattice (256 points, where per-call ufunc overhead
matters) and up to 2x *slower* once the sweep is vector-bound, because
scipy's ndtr/ndtri ufuncs beat scalar special-function calls.  That is why
the numpy kernel is the default and the compiled one is opt-in via
MULTIPIPE_MVN_BACKEND=compiled.
"""

import importlib
import time

import numpy as np

from multipipe import mvn
from multipipe import _mvnkern_py

try:
    _compiled = importlib.import_module("multipipe._mvnkern")
except ImportError:
    _compiled = None


def _problem(j, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((j, 2 * j))
    cov = a @ a.T / (2 * j)
    d = np.sqrt(np.diag(cov))
    corr = cov / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    bounds = np.full(j, 2.0)
    cho, lo, hi = mvn._order_and_factor(corr, -bounds, bounds)
    gen = mvn._lattice_generators(j - 1)
    shifts = rng.random((10, j - 1))
    return cho, lo, hi, gen, shifts


def _time(kernel, args, n_pts, repeats=5):
    best = float("inf")
    value = None
    for _ in range(repeats):
        start = time.perf_counter()
        means = kernel.sweep_batches(*args, n_pts)
        best = min(best, time.perf_counter() - start)
        value = float(np.mean(means))
    return best, value


def main():
    print(f"selected backend at import: {mvn.BACKEND}")
    if _compiled is None:
        print("compiled kernel not available; timing the pure-numpy kernel only")
    header = (
        f"{'J':>4} {'n_pts':>6} {'points':>8} {'numpy [ms]':>12} "
        f"{'compiled [ms]':>14} {'speedup':>8}"
    )
    print(header)
    for j in (2, 5, 20, 50):
        args = _problem(j, seed=j)
        for n_pts in (256, 2048):
            t_py, v_py = _time(_mvnkern_py, args, n_pts)
            if _compiled is not None:
                t_c, v_c = _time(_compiled, args, n_pts)
                if abs(v_py - v_c) > 1e-9:
                    raise SystemExit(
                        f"kernel mismatch at J={j}: numpy {v_py!r} vs compiled {v_c!r}"
                    )
                print(
                    f"{j:>4} {n_pts:>6} {10 * n_pts:>8} {1e3 * t_py:>12.2f} "
                    f"{1e3 * t_c:>14.2f} {t_py / t_c:>8.1f}"
                )
            else:
                print(
                    f"{j:>4} {n_pts:>6} {10 * n_pts:>8} {1e3 * t_py:>12.2f} "
                    f"{'-':>14} {'-':>8}"
                )


if __name__ == "__main__":
    main()
