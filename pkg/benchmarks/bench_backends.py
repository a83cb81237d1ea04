#!/usr/bin/env python3
"""Time the hot solver kernels under both backends.

Workloads mirror where the package actually spends time: the batched
one-parameter root solve that powers the bootstrap, and the multi-start
two-parameter simplex search that dominates simulation scenarios.  The numba
kernels are compiled on a warmup call before timing.

Usage: python benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import statistics
import time

import numpy as np

from ipwmeta import _kernels_numpy as knp

try:
    from ipwmeta import _kernels_numba as knb
except ImportError:
    knb = None


def one_param_workload(rng, b=2000, n=40):
    t = rng.normal(1.0, 1.4, (b, n))
    sig = rng.uniform(0.2, 1.5, n)
    n_pub = rng.integers(20, 2000, n).astype(float)
    sqp = np.sqrt(n_pub)
    sqt = float(sqp.sum() + 60.0)
    return (0, t, sig, sqp, sqt)


def two_param_workload(rng, n=40):
    t = rng.normal(-1.3, 1.1, n)
    sig = rng.uniform(0.2, 1.5, n)
    sqp = np.sqrt(rng.integers(20, 2000, n).astype(float))
    sqt = float(sqp.sum() + 50.0)
    return (2, t, sig, sqp, 50.0, sqt, 20.0)


def timed(fn, args, repeats, inner=1):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            out = fn(*args)
        best.append((time.perf_counter() - t0) / inner)
    return statistics.median(best), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    w1 = one_param_workload(rng)
    w2 = two_param_workload(rng)

    cases = [
        ("solve_one_param_batch (B=2000)", "solve_one_param_batch", w1, 1),
        ("solve_two_param_multistart",     "solve_two_param_multistart", w2, 20),
    ]

    print(f"{'kernel':36s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, name, workload, inner in cases:
        t_np, out_np = timed(getattr(knp, name), workload, args.repeats, inner)
        if knb is None:
            print(f"{label:36s} {t_np*1e3:9.2f}ms {'n/a':>10s} {'-':>8s}")
            continue
        getattr(knb, name)(*workload)          # compile before timing
        t_nb, out_nb = timed(getattr(knb, name), workload, args.repeats, inner)
        agree = np.allclose(np.asarray(out_np[0], dtype=float),
                            np.asarray(out_nb[0], dtype=float),
                            atol=1e-7, equal_nan=True)
        print(f"{label:36s} {t_np*1e3:9.2f}ms {t_nb*1e3:9.2f}ms "
              f"{t_np/t_nb:7.1f}x  {'' if agree else '!! results differ'}")

    if knb is None:
        print("\nnumba not importable; install it (or drop IPWMETA_BACKEND=numpy) "
              "to compare.")


if __name__ == "__main__":
    main()
