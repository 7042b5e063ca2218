#!/usr/bin/env python3
"""Compare the compiled raw-draw kernel against the numpy fallback.

Run after an editable install:

    python benchmarks/kernel_bench.py [--sizes 4096,1048576,16777216]

Both backends must produce identical draws; the benchmark asserts that
before timing.
"""

import argparse
import importlib
import time

import numpy as np


def load_backends():
    import psmtable.kernels.fallback as fb

    backends = {"numpy": fb.raw_block}
    try:
        ext = importlib.import_module("psmtable.kernels._kernels")
        backends["cython"] = ext.raw_block
    except ImportError:
        print("compiled kernel not built; benchmarking the fallback only")
    return backends


def bench(fn, n, repeats=5):
    fn(1, 0, 0, min(n, 1024))  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(1, 0, 0, n)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="4096,1048576,16777216")
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    backends = load_backends()

    for name, fn in backends.items():
        assert np.array_equal(fn(7, 3, 11, 4096), backends["numpy"](7, 3, 11, 4096)), (
            f"{name} disagrees with the fallback"
        )

    header = f"{'draws':>12} " + " ".join(f"{n:>14}" for n in backends)
    print(header)
    print("-" * len(header))
    for n in sizes:
        times = {name: bench(fn, n) for name, fn in backends.items()}
        cells = " ".join(
            f"{n / times[name] / 1e6:>11.1f} M/s" for name in backends
        )
        print(f"{n:>12} {cells}")
    if "cython" in backends:
        n = sizes[-1]
        ratio = bench(backends["numpy"], n) / bench(backends["cython"], n)
        print(f"\ncython speedup over numpy at {n} draws: {ratio:.2f}x")


if __name__ == "__main__":
    main()
