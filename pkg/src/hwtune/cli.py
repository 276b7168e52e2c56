"""Command-line entry point: tune, select-quant, kernel-tune, compare, replay."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

from hwtune.errors import HwTuneError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_SUFFIX = {"K": 1e3, "M": 1e6, "B": 1e9, "G": 1e9, "T": 1e12}


def parse_count(text: str) -> float:
    """'13e9', '13B' and '774M' all parse to a parameter count."""
    m = re.fullmatch(r"\s*([0-9.]+(?:[eE][-+]?\d+)?)\s*([KMBGT]?)\s*", text, re.IGNORECASE)
    if not m:
        raise argparse.ArgumentTypeError(f"not a parameter count: {text!r}")
    return float(m.group(1)) * _SUFFIX.get(m.group(2).upper(), 1.0)


def parse_seeds(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if re.fullmatch(r"\d+-\d+", part):
            a, b = map(int, part.split("-"))
            out.extend(range(a, b + 1))
        elif part.isdigit():
            out.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    return out


def _targets(items: Sequence[str]) -> dict[str, float]:
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--target expects name=value, got {item!r}")
        out[name] = float(value)
    return out


# ----------------------------------------------------------------- commands


def cmd_select_quant(args) -> int:
    from hwtune.hardware import SCHEMES, load_profile, memory_gate, select_quant_by_profile

    profile = load_profile(args.profile)
    budget = args.memory if args.memory is not None else profile.memory_budget_gb
    candidates = [SCHEMES[c.strip().upper()] for c in args.candidates.split(",")]
    verdicts = memory_gate(args.params, budget, candidates, args.overhead)
    print(f"Memory gate: {args.params:g} parameters, budget {budget:g} GB, profile {profile.name}")
    for v in verdicts.values():
        print(f"  {v}")
    admitted = [v.scheme for v in verdicts.values() if v.admitted]
    rec = select_quant_by_profile(profile, args.params, admitted)
    print(f"Recommendation: {rec.best}")
    print(f"Ranking: {' > '.join(map(str, rec.ranking))}")
    print(f"Rationale: {rec.rationale}")
    return EXIT_OK


def cmd_kernel_tune(args) -> int:
    from hwtune.hardware import load_profile
    from hwtune.kerneltune import int4_vs_int8_report, load_kernel_spec, tune_kernel, with_tensor_type

    spec = load_kernel_spec(args.kernel)
    if args.tensor_type:
        spec = with_tensor_type(spec, args.tensor_type)
    profile = load_profile(args.profile)
    result = tune_kernel(spec, profile, budget=args.budget, strategy=args.strategy, seed=args.seed)
    print(f"Kernel {spec.label} on {profile.name}, {len(result.trace)} configs evaluated")
    print(f"  default latency: {result.default_latency:.4g} us")
    print(f"  best latency:    {result.best_latency:.4g} us (speedup {result.speedup:.3g}x)")
    print(f"  best config:     {json.dumps(result.best_config.to_dict())}")
    if args.precision_report:
        rep = int4_vs_int8_report(spec, profile)
        print(f"  INT4 {rep.int4_latency:.4g} us vs INT8 {rep.int8_latency:.4g} us: "
              f"{rep.faster} faster by {rep.ratio:.3g}x")
    return EXIT_OK


def cmd_tune(args) -> int:
    from hwtune.harness import RunManifest, load_manifest, run_experiment

    if args.manifest:
        if not Path(args.manifest).is_file():
            raise UsageError(f"manifest not found: {args.manifest}")
        manifest = load_manifest(args.manifest)
    else:
        evaluator = {"kind": "synthetic", "name": args.evaluator, "seed": args.seed,
                     "noise": args.noise}
        manifest = RunManifest(run_id=args.run_id or f"{args.optimizer}-{args.seed}",
                               space=args.space, optimizer=args.optimizer, seed=args.seed,
                               budget=args.budget, evaluator=evaluator, profile=args.profile,
                               agent={"backend": "coordinate_descent", "seed": args.seed})
    if args.target:
        manifest.targets = _targets(args.target)
    if args.run_id:
        manifest.run_id = args.run_id
    if manifest.budget < 1:
        raise UsageError("budget must be >= 1")
    result = run_experiment(manifest, args.out)
    primary = next(iter(result.evaluator.objectives))
    best = result.optimizer.best()
    print(f"Run {manifest.run_id}: {result.outcome} after {len(result.records)} rounds")
    if best is not None:
        print(f"  best {primary}: {best.objectives.get(primary)!r}")
        print(f"  best config: {json.dumps(best.config.as_dict())}")
    print(f"  logs: {result.run_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from hwtune.harness import compare_optimizers, synthetic_evaluator
    from hwtune.space import load_preset

    space = load_preset(args.space)
    names = [n.strip() for n in args.optimizers.split(",") if n.strip()]
    if len(names) < 2 or len(args.seeds) < 2:
        raise UsageError("compare needs at least two optimizers and two seeds")
    report = compare_optimizers(
        space, lambda s: synthetic_evaluator(args.evaluator, space, seed=s, noise=args.noise),
        names, args.seeds, args.budget, out_dir=args.out, plot=args.plot)
    print(f"{'optimizer':<12} {'runs':>4} {'mean final':>12} {'stderr':>10}")
    for row in report.rows:
        print(f"{row.optimizer:<12} {row.runs:>4} {row.mean_final:>12.5g} {row.stderr_final:>10.3g}")
        if row.failed_seeds:
            print(f"  failed seeds: {row.failed_seeds}")
    if args.out:
        print(f"report: {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_replay(args) -> int:
    from hwtune.harness import replay

    target = Path(args.run)
    if not (target / "manifest.json").is_file() and not target.is_file():
        raise UsageError(f"no manifest.json under {target}")
    result = replay(target, args.out)
    if result.identical:
        print("logs identical")
        return EXIT_OK
    print("logs differ")
    print("\n".join(result.diff))
    return EXIT_RUNTIME


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hwtune", description="Hardware-aware tuning of quantized models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("tune", help="run one experiment from a manifest or flags")
    s.add_argument("--manifest", help="YAML/JSON run manifest")
    s.add_argument("--out", default="runs", help="directory that receives the run folder")
    s.add_argument("--space", default="resnet_appendix_d")
    s.add_argument("--optimizer", default="agent",
                   choices=["agent", "random", "local", "bayesian", "nsga2"])
    s.add_argument("--evaluator", default="quantization_surface",
                   choices=["sphere", "quantization_surface", "step_plateau"])
    s.add_argument("--profile", default=None)
    s.add_argument("--budget", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--run-id", default=None)
    s.add_argument("--target", action="append", default=[], metavar="NAME=VALUE",
                   help="stop early once the objective reaches VALUE")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("select-quant", help="memory gate plus quantization ranking")
    s.add_argument("--params", type=parse_count, required=True, help="parameter count, e.g. 13e9 or 7B")
    s.add_argument("--memory", type=float, default=None, help="memory budget in GB (default: profile)")
    s.add_argument("--profile", default="a6000")
    s.add_argument("--candidates", default="FP16,INT8,INT4")
    s.add_argument("--overhead", type=float, default=1.0, help="multiplier on weight memory")
    s.set_defaults(func=cmd_select_quant)

    s = sub.add_parser("kernel-tune", help="search execution configs for one kernel")
    s.add_argument("--kernel", default="softmax_1024x1x32", help="fixture name or JSON path")
    s.add_argument("--profile", default="a6000")
    s.add_argument("--budget", type=int, default=10)
    s.add_argument("--strategy", default="random", choices=["random", "local", "bayesian"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tensor-type", default=None, help="override, e.g. GGML_TYPE_Q4_0")
    s.add_argument("--precision-report", action="store_true", help="also compare INT4 and INT8")
    s.set_defaults(func=cmd_kernel_tune)

    s = sub.add_parser("compare", help="paired optimizer comparison on a synthetic objective")
    s.add_argument("--space", default="resnet_appendix_d")
    s.add_argument("--evaluator", default="sphere",
                   choices=["sphere", "quantization_surface", "step_plateau"])
    s.add_argument("--optimizers", default="random,local,bayesian,nsga2,agent")
    s.add_argument("--seeds", type=parse_seeds, default=parse_seeds("0-4"), help="e.g. 0-19 or 1,2,5")
    s.add_argument("--budget", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--out", default=None)
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("replay", help="re-run a recorded run and diff the trial logs")
    s.add_argument("run", help="run directory (or its manifest.json)")
    s.add_argument("--out", default=None, help="where to put the replayed run")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.print_usage(sys.stderr)
        print(f"hwtune {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HwTuneError, OSError, ValueError, KeyError) as exc:
        print(f"hwtune {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
