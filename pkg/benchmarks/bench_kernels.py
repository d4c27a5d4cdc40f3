"""Benchmark the compiled kernels against their pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Run with SAPGEN_NO_NUMBA=1 to confirm the fallback selection path; in that
mode only the numpy timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sapgen import kernels


def _time(fn, *args, repeat: int) -> float:
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    rows = []

    a = rng.integers(0, 50, size=2000).astype(np.int64)
    b = rng.integers(0, 50, size=2000).astype(np.int64)
    rows.append(("lcs_length 2000x2000", kernels.lcs_length_numpy, (a, b)))

    cand = rng.normal(size=(400, 256))
    cand /= np.linalg.norm(cand, axis=1, keepdims=True)
    ref = rng.normal(size=(400, 256))
    ref /= np.linalg.norm(ref, axis=1, keepdims=True)
    rows.append(("greedy_match 400x400x256", kernels.greedy_match_numpy, (cand, ref)))

    codes = rng.integers(0, 8, size=20000).astype(np.int64)
    rows.append(("find_repeat 20000 tokens", kernels.find_repeat_numpy, (codes, 3)))

    print(f"numba available: {kernels.HAVE_NUMBA}")
    header = f"{'kernel':<28} {'numpy (s)':>12} {'numba (s)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, numpy_fn, fn_args in rows:
        t_numpy = _time(numpy_fn, *fn_args, repeat=args.repeat)
        if kernels.HAVE_NUMBA:
            numba_fn = getattr(kernels, numpy_fn.__name__.replace("_numpy", "_numba"))
            t_numba = _time(numba_fn, *fn_args, repeat=args.repeat)
            print(f"{name:<28} {t_numpy:>12.6f} {t_numba:>12.6f} {t_numpy / t_numba:>8.1f}x")
        else:
            print(f"{name:<28} {t_numpy:>12.6f} {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
