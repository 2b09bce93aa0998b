#!/usr/bin/env python3
"""Compare the jit-compiled kernels against the pure-numpy fallback.

Runs the assignment and alignment kernels over a ladder of sizes on both
backends, prints a speedup table, and verifies the two backends produce
bitwise-identical results (the fallback mirrors the jitted statements
operation for operation).

Usage: python benchmarks/compare_backends.py [--sizes 8..128] [--repeats 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from combgrad import _kernels


def _time_assignment(size: int, repeats: int, rng: np.random.Generator) -> float:
    i = np.arange(1.0, size + 1.0)
    base = np.outer(i, i) + rng.uniform(0.0, 0.01, size=(size, size))
    k = max(1, 2048 // (size * size) + 1)
    batch = np.repeat(base[None, :, :], k, axis=0)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        _kernels.assignment_kernel_many(batch)
        best = min(best, (time.perf_counter() - t0) / k)
    return best


def _time_gsa(size: int, repeats: int, rng: np.random.Generator) -> float:
    base = rng.uniform(0.1, 2.0, size=(size, size))
    k = max(1, 2048 // (size * size) + 1)
    batch = np.repeat(base[None, :, :], k, axis=0)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        _kernels.gsa_kernel_many(batch, 1.5)
        best = min(best, (time.perf_counter() - t0) / k)
    return best


def _check_equivalence(rng: np.random.Generator) -> None:
    for _ in range(25):
        b = int(rng.integers(2, 24))
        C = rng.standard_normal((b, b))
        _kernels.set_backend("numba")
        pj, uj, vj = _kernels.assignment_kernel(C)
        _kernels.set_backend("numpy")
        pp, up, vp = _kernels.assignment_kernel(C)
        assert np.array_equal(pj, pp) and np.array_equal(uj, up) and np.array_equal(vj, vp), (
            "assignment backends disagree"
        )
        m = rng.uniform(0.05, 3.0, size=(int(rng.integers(1, 10)), int(rng.integers(1, 10))))
        _kernels.set_backend("numba")
        rj = _kernels.gsa_kernel(m, 1.5)
        _kernels.set_backend("numpy")
        rp = _kernels.gsa_kernel(m, 1.5)
        assert rj[0] == rp[0] and all(np.array_equal(a, b) for a, b in zip(rj[1:5], rp[1:5])), (
            "gsa backends disagree"
        )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="8..128")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1729)
    args = ap.parse_args()

    lo, hi = (int(x) for x in args.sizes.split(".."))
    sizes = []
    s = lo
    while s <= hi:
        sizes.append(s)
        s *= 2

    if not _kernels.HAS_NUMBA:
        print("numba is not installed; only the numpy backend is available.")
        return 1

    rng = np.random.default_rng(args.seed)
    _kernels.set_backend("numba")
    _kernels.warmup()

    print("bitwise equivalence check ... ", end="", flush=True)
    _check_equivalence(rng)
    print("ok")
    print()
    print(f"{'kernel':<12} {'size':>5} {'numba (s)':>12} {'numpy (s)':>12} {'speedup':>8}")
    for kernel, timer in (("assignment", _time_assignment), ("gsa", _time_gsa)):
        for size in sizes:
            _kernels.set_backend("numba")
            tj = timer(size, args.repeats, np.random.default_rng(args.seed))
            _kernels.set_backend("numpy")
            tp = timer(size, args.repeats, np.random.default_rng(args.seed))
            print(f"{kernel:<12} {size:>5} {tj:>12.3e} {tp:>12.3e} {tp / tj:>7.1f}x")
    _kernels.set_backend("numba")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
