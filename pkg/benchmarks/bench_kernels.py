"""Compare the compiled kernels against the pure-Python fallback.

Run: python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from psgmt import _kernels_py, kernels

try:
    from psgmt import _speedups
except ImportError:
    _speedups = None


def timeit(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pair_counts(rng):
    words = [
        tuple(rng.choice(list("abcdefghij"), size=rng.integers(2, 12)))
        for _ in range(20_000)
    ]
    freqs = [int(f) for f in rng.integers(1, 50, size=len(words))]
    return [("pair_counts", mod.pair_counts, (words, freqs)) for mod in _backends()]


def bench_apply_merge(rng):
    words = [
        tuple(rng.choice(list("ab"), size=rng.integers(2, 16)))
        for _ in range(20_000)
    ]
    return [("apply_merge", mod.apply_merge, (words, "a", "b", "ab")) for mod in _backends()]


def bench_gcn_coefficients(rng):
    p = 64
    pairs = rng.integers(0, p, size=(256, 2))
    def many(mod):
        def inner(pairs, p):
            for _ in range(500):
                mod.gcn_coefficients(pairs, p)
        return inner
    return [("gcn_coefficients(x500)", many(mod), (pairs, p)) for mod in _backends()]


def _backends():
    out = [_kernels_py]
    if _speedups is not None:
        out.append(_speedups)
    return out


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    if _speedups is None:
        print("compiled backend unavailable; timing pure python only")
    for group in (bench_pair_counts(rng), bench_apply_merge(rng), bench_gcn_coefficients(rng)):
        times = []
        for (name, fn, args), mod in zip(group, _backends()):
            label = "python" if mod is _kernels_py else "cython"
            t = timeit(fn, *args)
            times.append(t)
            print(f"{name:24s} {label:7s} {t * 1e3:9.2f} ms")
        if len(times) == 2:
            print(f"{'':24s} speedup {times[0] / times[1]:8.2f}x")


if __name__ == "__main__":
    main()
