"""Time the numba and numpy paths of the hot kernels on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call per kernel compiles (or loads from the on-disk cache);
that warm-up is reported separately and excluded from the timings.
"""
import argparse
import time

import numpy as np

from decisionuq import _kernels


def cases(rng):
    m = 300
    delta = rng.normal(size=m)
    w = (m - np.arange(m)) / (m * (m + 1.0))
    perms = rng.permuted(np.tile(np.arange(m, dtype=np.int64), (10000, 1)), axis=1)
    base = rng.random(m)
    rank_a = rng.permutation(m).astype(np.int64)
    rank_b = rng.permutation(m).astype(np.int64)
    idx = np.stack([rng.choice(m, m // 2, replace=False) for _ in range(1000)]).astype(np.int64)
    chain_means = rng.random((8, 50))
    n = 200_000
    bins = rng.integers(0, 10, n).astype(np.int64)
    pred, real = rng.random(n), rng.random(n)
    return {
        "permutation_aucs (10000 x 300)": lambda nb: _kernels.permutation_aucs(perms, delta, w, nb),
        "subsample_auc_diffs (1000 x 150)": lambda nb: _kernels.subsample_auc_diffs(idx, rank_a, rank_b,
                                                                                    base, delta, nb),
        "chain_terms (8 x 50)": lambda nb: _kernels.chain_terms(chain_means, nb),
        "binned_sums (200000)": lambda nb: _kernels.binned_sums(bins, pred, real, 10, nb),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {_kernels.HAVE_NUMBA}, enabled: {_kernels.USE_NUMBA}")
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'warm-up ms':>11s}")
    for name, fn in cases(rng).items():
        t_np = best_of(lambda: fn(False), args.repeat)
        if _kernels.HAVE_NUMBA:
            t = time.perf_counter()
            fn(True)
            warm = time.perf_counter() - t
            t_nb = best_of(lambda: fn(True), args.repeat)
            print(f"{name:34s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:7.1f}x {warm * 1e3:11.1f}")
        else:
            print(f"{name:34s} {t_np * 1e3:10.2f} {'n/a':>10s}")


if __name__ == "__main__":
    main()
