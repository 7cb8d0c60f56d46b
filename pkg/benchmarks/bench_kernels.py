"""Time the numba kernels against their numpy twins.

Usage: python benchmarks/bench_kernels.py [--repeat R]

Each kernel runs once untimed so compilation is excluded, then the best of
R timed runs is reported for both backends along with the speedup.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from convexq import _kernels as k


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    n, p, nnz = 16, 3, 20000
    rows = rng.integers(0, n, (nnz, p)).astype(np.int64)
    cols = rng.integers(0, n, (nnz, p)).astype(np.int64)
    vals = rng.standard_normal(nnz)
    x = rng.standard_normal(n)
    yield "coo_eval (nnz=20000, p=3)", (lambda: k.coo_eval(rows, cols, vals, x)), (
        lambda: k.coo_eval_np(rows, cols, vals, x))
    yield "coo_sandwich (nnz=20000, p=3)", (lambda: k.coo_sandwich(rows, cols, vals, x, n)), (
        lambda: k.coo_sandwich_np(rows, cols, vals, x, n))
    for dim, iters in [(64, 2000), (1024, 500)]:
        M = sp.random(dim, dim, density=min(1.0, 8 / dim), random_state=1, format="csr")
        M = (M @ M.T).tocsr()
        v0 = rng.standard_normal(dim)
        args = (M.indptr, M.indices, M.data, v0, iters, -1.0)
        yield f"csr_power (dim={dim}, {iters} iters)", (lambda a=args: k.csr_power(*a)), (
            lambda a=args: k.csr_power_np(*a))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not k.HAVE_NUMBA:
        print("numba unavailable (or CONVEXQ_PURE_NUMPY set); nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in cases(rng):
        tf, ts = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:36s} {tf * 1e3:10.3f} {ts * 1e3:10.3f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()
