"""Benchmark the batched decode argmax: compiled kernel vs numpy fallback.

The kernel picks, per cell, the (keyword, box) pair maximizing
class_score * confidence.  Run as::

    python benchmarks/bench_decode.py [--batches 200] [--cells 6] [--boxes 2]

Results are wall-clock medians over repeated passes on freshly seeded
random scores, with agreement between the two implementations checked
on every shape.
"""

import argparse
import time

import numpy as np

from wordspot import kernels


def run_one(fn, class_scores, confs, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(class_scores, confs)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batches", type=int, default=200,
                        help="windows decoded per call")
    parser.add_argument("--cells", type=int, default=6)
    parser.add_argument("--boxes", type=int, default=2)
    parser.add_argument("--repeats", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.HAVE_NATIVE:
        print("compiled kernel unavailable; benchmarking the fallback only")

    rng = np.random.default_rng(args.seed)
    print(f"shape: batches={args.batches} cells={args.cells} boxes={args.boxes}, "
          f"median of {args.repeats} passes")
    print(f"{'keywords':>9} {'numpy (ms)':>11} {'native (ms)':>12} {'speedup':>8}")
    for n_keywords in (10, 100, 1000):
        class_scores = rng.random((args.batches, args.cells, n_keywords))
        confs = rng.random((args.batches, args.cells, args.boxes))
        t_numpy = run_one(kernels.best_joint_scores_numpy, class_scores, confs,
                          args.repeats)
        if kernels.HAVE_NATIVE:
            got = kernels.best_joint_scores_native(class_scores, confs)
            want = kernels.best_joint_scores_numpy(class_scores, confs)
            assert all(np.array_equal(a, b) for a, b in zip(got, want)), \
                f"implementations disagree at L={n_keywords}"
            t_native = run_one(kernels.best_joint_scores_native, class_scores,
                               confs, args.repeats)
            print(f"{n_keywords:>9} {t_numpy * 1e3:>11.3f} {t_native * 1e3:>12.3f} "
                  f"{t_numpy / t_native:>7.1f}x")
        else:
            print(f"{n_keywords:>9} {t_numpy * 1e3:>11.3f} {'-':>12} {'-':>8}")


if __name__ == "__main__":
    main()
