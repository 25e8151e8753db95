"""Exhaustive two-replica assignment of small request sets over several seeds."""

import argparse

import numpy as np

from llmroute.partition import brute_force_partition, random_small_requests


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--low", type=int, default=10)
    ap.add_argument("--high", type=int, default=100)
    ap.add_argument("--interval", type=float, default=1.0)
    args = ap.parse_args()
    gaps = []
    for seed in range(args.seeds):
        reqs = random_small_requests(args.n, np.random.default_rng(seed), args.low, args.high, args.interval)
        res = brute_force_partition(reqs)
        gaps.append(res.random_over_best)
        print(
            f"seed {seed}: best {res.best:.4f} s  worst {res.worst:.4f} s  mean {res.mean:.4f} s  "
            f"mean/best {100 * res.random_over_best:5.2f}%  ({len(res.best_assignments)} optimal)"
        )
    print(f"average mean/best gap {100 * np.mean(gaps):.2f}%")


if __name__ == "__main__":
    main()
