"""Time the numba kernels against their numpy references.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Also checks that both paths return identical values. The first call of
each compiled kernel is excluded (it pays for compilation).
"""
import argparse
import time

import numpy as np

from gapaware import kernels


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(rng):
    # speedup-study shapes: 1024 machines sharing 100k completions
    n, per = 1024, 110
    durs = rng.gamma(100.0, 1.28, n * per)
    offsets = np.arange(0, n * per + 1, per, dtype=np.int64)
    yield "kth_completion", (lambda: kernels.kth_completion(durs, offsets, 100_000),
                             lambda: kernels.kth_completion_np(durs, offsets, 100_000))
    times = rng.gamma(100.0, 1.28, (1024, 98))
    yield "sync_total", (lambda: kernels.sync_total(times), lambda: kernels.sync_total_np(times))
    d = 100_000
    theta, sent, c = rng.normal(size=d), rng.normal(size=d), rng.uniform(0.1, 1.0, d)
    yield "paramwise_gap", (lambda: kernels.paramwise_gap(theta, sent, c),
                            lambda: kernels.paramwise_gap_np(theta, sent, c))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba path disabled (GAPAWARE_DISABLE_JIT set or numba missing); nothing to compare")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'ratio':>8}  same")
    for name, (fast, ref) in cases(rng):
        fast()  # compile
        tf, a = best_of(fast, args.repeats)
        tr, b = best_of(ref, args.repeats)
        print(f"{name:<16}{tf * 1e3:>10.3f}{tr * 1e3:>10.3f}{tr / tf:>8.1f}  {np.array_equal(a, b)}")


if __name__ == "__main__":
    main()
