#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs the three hot kernels on tree-fitting-sized workloads and prints a
per-kernel timing table.  The numba path pays its compilation cost before
timing starts.

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeats 30]
"""

import argparse
import time

import numpy as np

from writeoff._kernels import numpy_impl

try:
    from writeoff._kernels import numba_impl
except ImportError:
    numba_impl = None


def make_workload(rng, n):
    entries = rng.integers(0, 4, size=n).astype(np.int64)
    stops = entries + rng.integers(1, 60, size=n).astype(np.int64)
    events = (rng.random(n) < 0.4).astype(np.int64)
    weights = np.ones(n, dtype=np.float64)
    grid = np.unique(stops[events == 1])

    x = np.sort(rng.random(n))
    h = rng.normal(size=n)
    total_w = float(n)
    h_mean = float(h.mean())
    h_var = float(h.var())

    k = 12
    level_t = rng.normal(size=k)
    level_w = rng.integers(20, 200, size=k).astype(np.float64)
    return {
        "risk_counts": (stops, events, entries, weights, grid),
        "split_scan_numeric": (x, h, weights, total_w, h_mean, h_var, 25.0),
        "subset_scan": (level_t, level_w, float(level_w.sum()), h_mean,
                        h_var, 10.0),
    }


def time_call(fn, args, repeats):
    fn(*args)  # warm up (and compile, on the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=20_000)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    workload = make_workload(rng, args.n)

    print(f"workload: n={args.n}, repeats={args.repeats}")
    header = f"{'kernel':<22}{'numpy':>12}{'numba':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call_args in workload.items():
        t_numpy = time_call(getattr(numpy_impl, name), call_args,
                            args.repeats)
        if numba_impl is None:
            print(f"{name:<22}{t_numpy * 1e3:>10.3f}ms{'-':>12}{'-':>10}")
            continue
        t_numba = time_call(getattr(numba_impl, name), call_args,
                            args.repeats)
        ratio = t_numpy / t_numba if t_numba > 0 else float("inf")
        print(f"{name:<22}{t_numpy * 1e3:>10.3f}ms{t_numba * 1e3:>10.3f}ms"
              f"{ratio:>9.1f}x")

    if numba_impl is not None:
        outputs_numpy = [numpy_impl.risk_counts(*workload["risk_counts"])]
        outputs_numba = [numba_impl.risk_counts(*workload["risk_counts"])]
        for a, b in zip(outputs_numpy, outputs_numba):
            for x, y in zip(a, b):
                assert np.array_equal(x, y)
        print("backends agree bit-for-bit on this workload")


if __name__ == "__main__":
    main()
