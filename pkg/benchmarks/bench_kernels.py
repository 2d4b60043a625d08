"""Benchmark the numba-jitted kernels against the pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--quick]

Sizes roughly match a pretraining batch of a few hundred mid-size
molecules: tens of thousands of segment rows at hidden width 128,
a thousand-atom pairwise scan, and a large RBF expansion.
"""

import argparse
import time

import numpy as np

from geomgcl import kernels


def time_fn(fn, args, n_warmup, n_runs):
    for _ in range(n_warmup):
        fn(*args)
    times = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return np.mean(times) * 1000, np.std(times) * 1000


def compare(name, args, n_warmup, n_runs):
    impls = kernels.implementations()
    np_mean, np_std = time_fn(impls["numpy"][name], args, n_warmup, n_runs)
    print(f"{name}:")
    print(f"  numpy: {np_mean:9.3f} +- {np_std:.3f} ms")
    if impls["numba"] is None:
        print("  numba: unavailable")
        return
    nb_mean, nb_std = time_fn(impls["numba"][name], args, n_warmup, n_runs)
    speedup = np_mean / nb_mean if nb_mean > 0 else float("inf")
    print(f"  numba: {nb_mean:9.3f} +- {nb_std:.3f} ms   ({speedup:.2f}x)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller sizes, fewer runs")
    args = parser.parse_args()

    scale = 0.1 if args.quick else 1.0
    n_rows = int(200_000 * scale)
    n_seg = int(20_000 * scale)
    hidden = 128
    n_atoms = int(1000 * scale) or 64
    n_rbf = int(500_000 * scale)
    n_warmup, n_runs = (1, 3) if args.quick else (2, 5)

    rng = np.random.default_rng(0)
    print(f"numba active by default: {kernels.USING_NUMBA} "
          f"(GEOMGCL_NUMBA toggles)\n")

    data = rng.normal(size=(n_rows, hidden))
    seg = np.sort(rng.integers(0, n_seg, size=n_rows))
    compare("segment_sum", (data, seg, n_seg), n_warmup, n_runs)
    compare("segment_max", (data, seg, n_seg), n_warmup, n_runs)

    coords = rng.normal(scale=5.0, size=(n_atoms, 3))
    compare("pairwise_distances", (coords,), n_warmup, n_runs)

    n_triples = n_rows // 4
    shared = rng.integers(0, n_atoms, size=n_triples)
    p = (shared + 1) % n_atoms
    q = (shared + 2) % n_atoms
    compare("angles", (coords, shared, p, q), n_warmup, n_runs)

    t = rng.uniform(0, 1, size=n_rbf)
    centers = np.linspace(0.0, 1.0, 64)
    compare("gaussian_expand", (t, centers, 4.0), n_warmup, n_runs)


if __name__ == "__main__":
    main()
