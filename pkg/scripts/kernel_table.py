"""Default vs tuned modeled latency for the 15 benchmark kernels."""

from __future__ import annotations

import argparse

from hwtune.hardware import load_profile
from hwtune.kerneltune import benchmark_fixtures, tune_kernel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", default="a6000")
    ap.add_argument("--budget", type=int, default=10)
    ap.add_argument("--strategy", default="random", choices=["random", "local", "bayesian"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    profile = load_profile(args.profile)
    print(f"{'kernel':<24} {'default us':>11} {'tuned us':>10} {'speedup':>8}")
    for spec in benchmark_fixtures():
        res = tune_kernel(spec, profile, budget=args.budget, strategy=args.strategy, seed=args.seed)
        print(f"{spec.label:<24} {res.default_latency:>11.3f} {res.best_latency:>10.3f} "
              f"{res.speedup:>7.2f}x")


if __name__ == "__main__":
    main()
