"""Time the compiled distance kernel against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py

Covers the two shapes that dominate the toolkit's runtime: single-query
scans (neighbor queries during evaluation) and batch matrices (k-means
assignment, Monte-Carlo nearest-neighbor search).
"""

import time

import numpy as np

from resmem._kernels import _fallback

try:
    from resmem._kernels import _core
except ImportError:
    _core = None

SINGLE_QUERY = [(2_000, 16), (10_000, 64), (50_000, 64)]
BATCH = [(200, 2_000, 16), (200, 4_096, 2), (500, 10_000, 64)]


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    impls = [("numpy", _fallback)]
    if _core is not None:
        impls.append(("compiled", _core))
    else:
        print("compiled kernel not available; timing the fallback only")

    print(f"{'case':<28} " + " ".join(f"{name:>12}" for name, _ in impls) + "   speedup")
    for n, d in SINGLE_QUERY:
        Z = rng.standard_normal((n, d)).astype(np.float32)
        q = rng.standard_normal((1, d)).astype(np.float32)
        times = [timeit(impl.sqdist_matrix, q, Z) for _, impl in impls]
        ratio = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{'query 1x' + str(n) + 'x' + str(d):<28} "
              + " ".join(f"{t * 1e3:10.3f}ms" for t in times) + ratio)
    for m, n, d in BATCH:
        A = rng.standard_normal((m, d)).astype(np.float32)
        B = rng.standard_normal((n, d)).astype(np.float32)
        times = [timeit(impl.sqdist_matrix, A, B, repeats=3) for _, impl in impls]
        ratio = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{'batch ' + str(m) + 'x' + str(n) + 'x' + str(d):<28} "
              + " ".join(f"{t * 1e3:10.3f}ms" for t in times) + ratio)

    if _core is not None:
        a = rng.standard_normal((64, 48)).astype(np.float32)
        b = rng.standard_normal((96, 48)).astype(np.float32)
        same = np.array_equal(_core.sqdist_matrix(a, b), _fallback.sqdist_matrix(a, b))
        print(f"\nbit-identical outputs: {same}")


if __name__ == "__main__":
    main()
