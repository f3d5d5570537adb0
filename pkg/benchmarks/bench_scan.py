"""Hamming scan throughput: numba kernel vs numpy fallback vs float Euclidean.

    python benchmarks/bench_scan.py [--n 100000] [--bits 64] [--k 100]

Reports best-of-``--repeats`` wall time per query for the full scan and for
scan + top-k selection. The numba column is skipped when numba is disabled.
"""

import argparse
import time

import numpy as np

from audiohash import kernels
from audiohash._accel import HAS_NUMBA


def best(fn, repeats):
    t_best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        t_best = min(t_best, time.perf_counter() - t)
    return t_best * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--bits", type=int, default=64, choices=(16, 32, 64, 128))
    ap.add_argument("--k", type=int, default=100)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    words = (args.bits + 63) // 64
    hi = 2**64 if args.bits >= 64 else 2**args.bits
    codes = rng.integers(0, hi, size=(args.n, words), dtype=np.uint64)
    query = rng.integers(0, hi, size=words, dtype=np.uint64)
    floats = rng.standard_normal((args.n, args.bits)).astype(np.float32)
    fq = rng.standard_normal(args.bits).astype(np.float32)

    rows = []
    backends = [("numpy", kernels.hamming_scan_numpy, kernels.topk_order_numpy)]
    if HAS_NUMBA:
        backends.insert(0, ("numba", kernels.hamming_scan_numba, kernels.topk_order_numba))
    for name, scan, topk in backends:
        scan(codes, query)  # compile / warm
        topk(scan(codes, query), args.k, args.bits)
        rows.append((f"hamming-{name}", best(lambda: scan(codes, query), args.repeats),
                     best(lambda: topk(scan(codes, query), args.k, args.bits), args.repeats)))

    def euclid():
        return np.einsum("ij,ij->i", floats - fq, floats - fq)

    rows.append(("float32-euclidean", best(euclid, args.repeats),
                 best(lambda: np.argpartition(euclid(), args.k)[: args.k], args.repeats)))

    print(f"N={args.n} K={args.bits} k={args.k} best of {args.repeats}")
    print(f"{'backend':<20}{'scan ms':>10}{'scan+topk ms':>15}")
    for name, t_scan, t_topk in rows:
        print(f"{name:<20}{t_scan:>10.3f}{t_topk:>15.3f}")


if __name__ == "__main__":
    main()
