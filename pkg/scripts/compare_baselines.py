"""Paired comparison of every optimizer on a synthetic objective."""

from __future__ import annotations

import argparse

from hwtune.harness import compare_optimizers, synthetic_evaluator
from hwtune.space import load_preset


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--space", default="resnet_appendix_d")
    ap.add_argument("--objective", default="quantization_surface",
                    choices=["sphere", "quantization_surface", "step_plateau"])
    ap.add_argument("--optimizers", default="random,local,bayesian,nsga2,agent")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--budget", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--out", default="results/compare")
    args = ap.parse_args()

    space = load_preset(args.space)
    report = compare_optimizers(
        space, lambda s: synthetic_evaluator(args.objective, space, seed=s, noise=args.noise),
        args.optimizers.split(","), list(range(args.seeds)), args.budget,
        out_dir=args.out, plot=True)
    print(f"{args.objective} on {space.name}, budget {args.budget}, {args.seeds} seeds")
    for row in sorted(report.rows, key=lambda r: -r.mean_final):
        print(f"  {row.optimizer:<10} {row.mean_final:.5f} +/- {row.stderr_final:.5f}")
    print(f"wrote {args.out}/report.json, traces.csv, convergence.png")


if __name__ == "__main__":
    main()
