#!/usr/bin/env python3
"""Benchmark the compiled likelihood core against the pure-Python fallback.

Times the two hot kernels (Gaussian NLL evaluation, full Nelder-Mead NHGR
fit) at several problem sizes and prints a comparison table. Run as

    python benchmarks/bench_core.py
"""

import time

import numpy as np

from metocal._core import _pyfallback

try:
    from metocal._core import _native
except ImportError:
    _native = None


def problem(n, pm=4, seed=0):
    rng = np.random.default_rng(seed)
    G = np.ascontiguousarray(
        np.column_stack([np.ones(n)] + [rng.normal(2, 1, n) for _ in range(pm - 1)])
    )
    s_e = np.abs(rng.normal(0.5, 0.15, n)) + 0.05
    beta = np.array([0.1, 0.45, 0.5, 0.02])[:pm]
    y = G @ beta + (0.2 + 0.5 * s_e) * rng.standard_normal(n)
    x0 = np.concatenate([beta * 0.8, [0.3, 0.0]])
    return y, G, s_e, x0


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_nll(impl, y, G, s_e, x0, evals=200):
    theta = np.concatenate([x0[:-2], [0.3, 0.4]])

    def run():
        for _ in range(evals):
            impl.gaussian_nll(theta, y, G, s_e)

    return time_call(run) / evals


def bench_fit(impl, y, G, s_e, x0):
    return time_call(
        lambda: impl.fit_gaussian_nm(x0, y, G, s_e, True, 0.05, 1e-9, 10_000), repeat=3
    )


def main():
    impls = [("python", _pyfallback)]
    if _native is not None:
        impls.insert(0, ("native", _native))
    else:
        print("compiled core not built; timing the fallback only\n")

    print(f"{'kernel':<18}{'n':>8}" + "".join(f"{name:>14}" for name, _ in impls) + f"{'speedup':>10}")
    for n in (200, 1000, 5000):
        y, G, s_e, x0 = problem(n)
        times = [bench_nll(impl, y, G, s_e, x0) for _, impl in impls]
        ratio = times[-1] / times[0] if len(times) == 2 else float("nan")
        cells = "".join(f"{t * 1e6:>12.1f}us" for t in times)
        print(f"{'nll eval':<18}{n:>8}{cells}{ratio:>9.1f}x")
    for n in (200, 1000, 5000):
        y, G, s_e, x0 = problem(n)
        times = [bench_fit(impl, y, G, s_e, x0) for _, impl in impls]
        ratio = times[-1] / times[0] if len(times) == 2 else float("nan")
        cells = "".join(f"{t * 1e3:>12.1f}ms" for t in times)
        print(f"{'nhgr fit (NM)':<18}{n:>8}{cells}{ratio:>9.1f}x")


if __name__ == "__main__":
    main()
