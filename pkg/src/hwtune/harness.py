"""Experiment orchestration: evaluators, the round loop, run logs, replay and comparisons."""

from __future__ import annotations

import csv
import difflib
import json
import logging
import math
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from hwtune.errors import (
    DimensionMismatchError,
    EvaluatorError,
    EvaluatorTimeout,
    InvalidConfigError,
    MetricsParseError,
    NonzeroExit,
    ProposalExhaustedError,
    SchemaError,
)
from hwtune.hardware import HardwareProfile, load_profile
from hwtune.kerneltune import (
    KernelConfig,
    KernelSpec,
    LatencyModelParams,
    config_from_assignment,
    kernel_space,
    load_kernel_spec,
    model_latency,
)
from hwtune.optimizers import (
    MAX,
    MIN,
    AgentOptimizer,
    Observation,
    Optimizer,
    best_so_far,
    make_optimizer,
)
from hwtune.records import TrialRecord
from hwtune.space import Configuration, SearchSpace, from_unit, load_preset, to_unit

log = logging.getLogger(__name__)


# -------------------------------------------------------------- evaluators


@dataclass
class EvalResult:
    objectives: dict[str, float]
    loss_trace: list[float] | None = None


class Evaluator:
    kind = "abstract"
    objectives: dict[str, str] = {}

    def evaluate(self, config: Configuration, kernel_config: KernelConfig | None = None,
                 round: int = 0) -> EvalResult:
        raise NotImplementedError

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind}


SYNTHETIC_NAMES = ("sphere", "quantization_surface", "step_plateau")


class SyntheticEvaluator(Evaluator):
    """Closed-form stand-ins for a training run, bound to a search space.

    All three objectives are functions of the unit-cube encoding ``u`` and a
    seed-derived optimum ``u*`` (snapped so it decodes to a real configuration):

    * ``sphere``: ``-sum((u - u*)**2)``; maximum 0 at ``u*``.
    * ``quantization_surface``: an accuracy-like score with a bit-width
      penalty and a learning-rate/batch-size ridge.
    * ``step_plateau``: the sphere quantized into a few flat levels.

    "latency" is a stand-in cost that grows with every normalized coordinate.
    """

    kind = "synthetic"
    objectives = {"accuracy": MAX, "latency": MIN}

    def __init__(self, name: str, space: SearchSpace, seed: int = 0, noise: float = 0.0,
                 dims: int | None = None, bits: int = 8, levels: int = 5):
        if name not in SYNTHETIC_NAMES:
            raise ValueError(f"unknown synthetic objective {name!r}; choose from {SYNTHETIC_NAMES}")
        if dims is not None and dims != len(space.params):
            raise DimensionMismatchError(f"evaluator declares {dims} dims, space {space.name} has "
                                         f"{len(space.params)}")
        if noise < 0:
            raise ValueError("noise must be >= 0")
        self.name, self.space, self.seed, self.noise = name, space, int(seed), float(noise)
        self.bits, self.levels = int(bits), int(levels)
        raw = np.random.default_rng([self.seed, 7919]).random(len(space.params))
        self.optimum_config = from_unit(space, raw)
        self.optimum = to_unit(space, self.optimum_config)
        self._ridge = self._ridge_axes()
        self.calls = 0

    def _ridge_axes(self) -> tuple[int, int]:
        names = self.space.names
        lr = next((i for i, n in enumerate(names) if "learning_rate" in n or n == "lr"), 0)
        bs = next((i for i, n in enumerate(names) if "batch" in n), min(1, len(names) - 1))
        return lr, bs

    def _bits(self, config: Configuration) -> int:
        for key in ("bits", "w_bits", "weight_bits", "quant_bits"):
            if key in config.assignments:
                return int(config[key])
        return self.bits

    def value(self, config: Configuration) -> float:
        """Noise-free accuracy of ``config``."""
        u = to_unit(self.space, config)
        dist2 = float(np.sum((u - self.optimum) ** 2))
        if self.name == "sphere":
            return -dist2
        if self.name == "step_plateau":
            closeness = 1.0 - math.sqrt(dist2 / max(1, len(u)))
            return math.floor(closeness * self.levels) / self.levels
        i, j = self._ridge
        ridge = ((u[i] - self.optimum[i]) - (u[j] - self.optimum[j])) ** 2 if i != j else 0.0
        bit_penalty = 0.04 * max(0, 16 - self._bits(config)) / 12
        return float(0.95 - 0.25 * dist2 / max(1, len(u)) - 0.2 * ridge - bit_penalty)

    def evaluate(self, config: Configuration, kernel_config: KernelConfig | None = None,
                 round: int = 0) -> EvalResult:
        self.calls += 1
        acc = self.value(config)
        if self.noise:
            acc += float(np.random.default_rng([self.seed, 104729, self.calls]).normal(0, self.noise))
        u = to_unit(self.space, config)
        latency = 1.0 + float(np.mean(u)) * 9.0
        trace = None
        if self.name == "quantization_surface":
            err = max(1e-3, 1.0 - acc)
            trace = [round_sig(err * (1 + 2.0 / e)) for e in range(1, 6)]
        return EvalResult({"accuracy": acc, "latency": latency}, trace)

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "name": self.name, "seed": self.seed, "noise": self.noise,
                "bits": self.bits}


def round_sig(x: float, digits: int = 6) -> float:
    return float(f"{x:.{digits}g}")


class ExternalCommandEvaluator(Evaluator):
    """Runs a user command per trial: config JSON in, metrics JSON out.

    The command template must contain ``{config}``; ``{metrics}``,
    ``{kernel_config}`` and ``{round}`` are optional placeholders. When the
    command writes no metrics file, the last JSON line of stdout is used.
    """

    kind = "external_command"

    def __init__(self, command: str, workdir: str | Path, timeout: float = 3600.0,
                 objectives: Mapping[str, str] | None = None):
        if "{config}" not in command:
            raise ValueError("command template must contain the {config} placeholder")
        self.command = command
        self.workdir = Path(workdir)
        self.timeout = float(timeout)
        self.objectives = dict(objectives or {"accuracy": MAX})

    def evaluate(self, config: Configuration, kernel_config: KernelConfig | None = None,
                 round: int = 0) -> EvalResult:
        self.workdir.mkdir(parents=True, exist_ok=True)
        cfg_path = self.workdir / f"config_{round}.json"
        metrics_path = self.workdir / f"metrics_{round}.json"
        kc_path = self.workdir / f"kernel_config_{round}.json"
        cfg_path.write_text(json.dumps(config.as_dict(), indent=1))
        if kernel_config is not None:
            kc_path.write_text(json.dumps(kernel_config.to_dict(), indent=1))
        if metrics_path.exists():
            metrics_path.unlink()
        cmd = self.command.format(config=shlex.quote(str(cfg_path)),
                                  metrics=shlex.quote(str(metrics_path)),
                                  kernel_config=shlex.quote(str(kc_path)), round=round)
        try:
            proc = subprocess.run(cmd, shell=True, cwd=self.workdir, capture_output=True,
                                  text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            raise EvaluatorTimeout(f"command exceeded {self.timeout:g}s: {cmd}") from exc
        if proc.returncode != 0:
            tail = "\n".join(proc.stderr.strip().splitlines()[-20:])
            raise NonzeroExit(proc.returncode, tail)
        if metrics_path.exists():
            text, source = metrics_path.read_text(), str(metrics_path)
        else:
            lines = [ln for ln in proc.stdout.strip().splitlines() if ln.strip()]
            text, source = (lines[-1] if lines else ""), "stdout"
        return self.parse_metrics(text, source)

    def parse_metrics(self, text: str, source: str = "metrics") -> EvalResult:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MetricsParseError(source, f"not JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise MetricsParseError(source, "expected a JSON object")
        out = {}
        for name in self.objectives:
            if name not in doc:
                raise MetricsParseError(name, "missing")
            v = doc[name]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise MetricsParseError(name, f"expected a finite number, got {v!r}")
            out[name] = float(v)
        trace = doc.get("loss_trace")
        if trace is not None:
            if not isinstance(trace, list) or not all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in trace):
                raise MetricsParseError("loss_trace", "expected a list of numbers")
            trace = [float(x) for x in trace]
        return EvalResult(out, trace)

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "command": self.command, "workdir": str(self.workdir),
                "timeout": self.timeout, "objectives": self.objectives}


class KernelSimEvaluator(Evaluator):
    """Latency of a kernel execution config under the analytic model."""

    kind = "kernel_sim"
    objectives = {"latency": MIN}

    def __init__(self, spec: KernelSpec, profile: HardwareProfile,
                 params: LatencyModelParams = LatencyModelParams(), spec_name: str = "",
                 profile_name: str = ""):
        self.spec, self.profile, self.params = spec, profile, params
        self.spec_name = spec_name or spec.label
        self.profile_name = profile_name or profile.name

    def to_kernel_config(self, config: Configuration | Mapping[str, Any] | KernelConfig) -> KernelConfig:
        if isinstance(config, KernelConfig):
            return config
        values = config.assignments if isinstance(config, Configuration) else config
        if "griddim" in values or "blockdim" in values:
            return KernelConfig(tuple(values["griddim"]), tuple(values["blockdim"]),
                                values.get("tiling size", 1), values.get("unroll size", 1),
                                values.get("code changed", False), values.get("code"))
        return config_from_assignment(values)

    def latency(self, config: Configuration | Mapping[str, Any] | KernelConfig) -> float:
        return model_latency(self.spec, self.to_kernel_config(config), self.profile, self.params)

    def evaluate(self, config: Configuration, kernel_config: KernelConfig | None = None,
                 round: int = 0) -> EvalResult:
        return EvalResult({"latency": self.latency(kernel_config or config)})

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "kernel": self.spec_name, "profile": self.profile_name}


class CompositeEvaluator(Evaluator):
    """Joint runs: accuracy from a fine-tuning evaluator, latency from the kernel model."""

    kind = "composite"

    def __init__(self, finetune: Evaluator, kernel: KernelSimEvaluator):
        self.finetune, self.kernel = finetune, kernel
        self.objectives = {**{k: v for k, v in finetune.objectives.items() if k != "latency"},
                           "latency": MIN}

    def evaluate(self, config: Configuration, kernel_config: KernelConfig | None = None,
                 round: int = 0) -> EvalResult:
        if kernel_config is None:
            raise InvalidConfigError("joint evaluation needs a kernel execution config")
        ft = self.finetune.evaluate(config, None, round)
        objectives = {k: v for k, v in ft.objectives.items() if k != "latency"}
        objectives["latency"] = self.kernel.latency(kernel_config)
        return EvalResult(objectives, ft.loss_trace)

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "finetune": self.finetune.describe(),
                "kernel": self.kernel.describe()}


def synthetic_evaluator(name: str, space: SearchSpace, dims: int | None = None, seed: int = 0,
                        noise: float = 0.0, **kwargs: Any) -> SyntheticEvaluator:
    return SyntheticEvaluator(name, space, seed=seed, noise=noise, dims=dims, **kwargs)


def external_evaluator(command: str, workdir: str | Path, timeout: float = 3600.0,
                       objectives: Mapping[str, str] | None = None) -> ExternalCommandEvaluator:
    return ExternalCommandEvaluator(command, workdir, timeout, objectives)


def kernel_sim_evaluator(spec: KernelSpec | str, profile: HardwareProfile | str,
                         params: LatencyModelParams = LatencyModelParams()) -> KernelSimEvaluator:
    spec_name = spec if isinstance(spec, str) else ""
    profile_name = profile if isinstance(profile, str) else ""
    if isinstance(spec, str):
        spec = load_kernel_spec(spec)
    if isinstance(profile, str):
        profile = load_profile(profile)
    return KernelSimEvaluator(spec, profile, params, spec_name, profile_name)


def build_evaluator(doc: Mapping[str, Any], space: SearchSpace | None) -> Evaluator:
    kind = doc.get("kind", "synthetic")
    if kind == "synthetic":
        opts = {k: doc[k] for k in ("bits", "levels") if k in doc}
        return synthetic_evaluator(doc.get("name", "sphere"), space, doc.get("dims"),
                                   int(doc.get("seed", 0)), float(doc.get("noise", 0.0)), **opts)
    if kind == "external_command":
        return external_evaluator(doc["command"], doc.get("workdir", "."),
                                  float(doc.get("timeout", 3600)), doc.get("objectives"))
    if kind == "kernel_sim":
        return kernel_sim_evaluator(doc["kernel"], doc.get("profile", "a6000"))
    if kind == "composite":
        return CompositeEvaluator(build_evaluator(doc["finetune"], space),
                                  build_evaluator(doc["kernel"], None))
    raise SchemaError(f"unknown evaluator kind {kind!r}")


# ----------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    """Everything needed to reproduce a run.

    ``space`` is a preset name or YAML path; kernel-only runs may leave it
    empty and tune ``kernel_space`` of the evaluator's kernel instead.
    """

    run_id: str = "run"
    space: str = "resnet_appendix_d"
    optimizer: str = "random"
    seed: int = 0
    budget: int = 10
    evaluator: dict[str, Any] = field(default_factory=lambda: {"kind": "synthetic", "name": "sphere"})
    profile: str | None = None
    history_policy: dict[str, Any] = field(default_factory=lambda: {"keep_verbatim": 5,
                                                                   "summarize_rest": True})
    token_cap: int = 16000
    targets: dict[str, float] = field(default_factory=dict)
    objectives: dict[str, str] | None = None
    optimizer_options: dict[str, Any] = field(default_factory=dict)
    agent: dict[str, Any] = field(default_factory=lambda: {"backend": "coordinate_descent"})
    prompt: dict[str, Any] = field(default_factory=dict)
    kernels: list[str] = field(default_factory=list)
    outcome: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunManifest":
        if not isinstance(doc, Mapping):
            raise SchemaError("manifest must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**dict(doc))


def load_manifest(path: str | Path) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise SchemaError(f"unparsable manifest {path}: {exc}") from exc
    return RunManifest.from_dict(doc)


# ------------------------------------------------------------------ the loop


def target_met(objectives: Mapping[str, float], targets: Mapping[str, float],
               directions: Mapping[str, str]) -> bool:
    """All thresholds reached: >= for maximized, <= for minimized objectives."""
    if not targets:
        return False
    for name, threshold in targets.items():
        if name not in objectives:
            return False
        v = objectives[name]
        if directions.get(name, MAX) == MAX and v < threshold:
            return False
        if directions.get(name, MAX) == MIN and v > threshold:
            return False
    return True


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class LoopResult:
    records: list[TrialRecord]
    outcome: str


def run_loop(
    optimizer: Optimizer,
    evaluator: Evaluator,
    budget: int,
    targets: Mapping[str, float] | None = None,
    on_record: Callable[[TrialRecord], None] | None = None,
) -> LoopResult:
    """Ask, evaluate, tell, record; stop at the budget or when targets are met."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    records: list[TrialRecord] = []
    for r in range(1, budget + 1):
        if optimizer.done:
            break
        started = _now()
        config = optimizer.ask()
        proposal = getattr(optimizer, "last_proposal", None) if isinstance(optimizer, AgentOptimizer) else None
        kernel_config = proposal.kernel_config if proposal is not None else None
        if isinstance(evaluator, KernelSimEvaluator) and kernel_config is None:
            kernel_config = evaluator.to_kernel_config(config)
        proposed = _now()
        result = evaluator.evaluate(config, kernel_config, r)
        optimizer.tell(config, result.objectives, kernel_config=kernel_config,
                       loss_trace=result.loss_trace)
        record = TrialRecord(
            round=r, config=config, objectives={k: float(v) for k, v in result.objectives.items()},
            kernel_config=kernel_config, loss_trace=result.loss_trace,
            agent_attempts=proposal.attempts if proposal else 0,
            repaired=proposal.repaired if proposal else False,
            timestamps={"started": started, "proposed": proposed, "evaluated": _now()},
            response_text=proposal.response_text if proposal else None,
        )
        records.append(record)
        if on_record is not None:
            on_record(record)
        if target_met(result.objectives, targets or {}, evaluator.objectives):
            return LoopResult(records, "target_met")
    return LoopResult(records, "budget_exhausted")


def build_space(manifest: RunManifest, evaluator_doc: Mapping[str, Any]) -> SearchSpace | None:
    if manifest.space:
        return load_preset(manifest.space)
    if evaluator_doc.get("kind") == "kernel_sim":
        return kernel_space(load_kernel_spec(evaluator_doc["kernel"]))
    return None


def build_backend(doc: Mapping[str, Any], seed: int):
    from hwtune.agent import BackendConfig, RemoteBackend, mock_agent

    kind = doc.get("backend", "coordinate_descent")
    if kind == "remote":
        keys = {f.name for f in fields(BackendConfig)}
        return RemoteBackend(BackendConfig(**{k: v for k, v in doc.items() if k in keys}))
    cap = int(doc.get("max_input_tokens", 1_000_000))
    if kind == "scripted":
        return mock_agent("scripted", texts=doc.get("texts", []), max_input_tokens=cap)
    return mock_agent("coordinate_descent", seed=int(doc.get("seed", seed)), max_input_tokens=cap)


def build_agent_optimizer(manifest: RunManifest, space: SearchSpace | None,
                          objectives: Mapping[str, str]) -> AgentOptimizer:
    from hwtune.agent import RetryPolicy
    from hwtune.prompt import HistoryPolicy, PromptOptions, render_static

    profile = load_profile(manifest.profile) if manifest.profile else None
    kernels = [load_kernel_spec(k) for k in manifest.kernels]
    opts = PromptOptions(**{"enable_deployment": bool(kernels), **manifest.prompt})
    finetune = opts.enable_finetune and bool(manifest.space)
    static = render_static(space if finetune else None, profile, kernels,
                           PromptOptions(**{**asdict(opts), "enable_finetune": finetune}))
    retry = manifest.agent.get("retry", {})
    return AgentOptimizer(
        space if finetune else None, build_backend(manifest.agent, manifest.seed), static,
        seed=manifest.seed, budget=manifest.budget, objectives=objectives,
        history_policy=HistoryPolicy(**manifest.history_policy), token_cap=manifest.token_cap,
        retry_policy=RetryPolicy(**retry), kernel_spec=kernels[0] if kernels else None,
    )


def build_optimizer(manifest: RunManifest, space: SearchSpace | None, evaluator: Evaluator) -> Optimizer:
    objectives = dict(manifest.objectives or evaluator.objectives)
    if manifest.optimizer == "agent":
        return build_agent_optimizer(manifest, space, objectives)
    if manifest.optimizer != "nsga2":
        first = next(iter(objectives))
        objectives = {first: objectives[first]}
    return make_optimizer(manifest.optimizer, space, seed=manifest.seed, budget=manifest.budget,
                          objectives=objectives, **manifest.optimizer_options)


@dataclass
class RunResult:
    run_dir: Path
    records: list[TrialRecord]
    outcome: str
    optimizer: Optimizer
    evaluator: Evaluator


def _write_traces(path: Path, records: Sequence[TrialRecord], directions: Mapping[str, str]) -> None:
    names = list(directions)
    obs = [Observation(r.config, r.objectives, r.round) for r in records]
    traces = {n: best_so_far(obs, n, directions[n]) for n in names} if obs else {}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", *names, *(f"best_{n}" for n in names)])
        for i, r in enumerate(records):
            w.writerow([r.round, *(repr(r.objectives[n]) for n in names),
                        *(repr(traces[n][i]) for n in names)])


def run_experiment(manifest: RunManifest, out_dir: str | Path) -> RunResult:
    """Execute one run and persist it under ``out_dir/<run_id>``.

    Each trial line is flushed and fsynced before the next round starts, so a
    crash leaves every completed round on disk.
    """
    if manifest.budget < 1:
        raise ValueError("budget must be >= 1")
    space = build_space(manifest, manifest.evaluator)
    evaluator = build_evaluator(manifest.evaluator, space)
    optimizer = build_optimizer(manifest, space, evaluator)

    run_dir = Path(out_dir) / manifest.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "manifest.json").write_text(manifest.to_json())
    trials = (run_dir / "trials.jsonl").open("w")
    timings = (run_dir / "timings.jsonl").open("w")

    def persist(record: TrialRecord) -> None:
        trials.write(record.to_json(include_timestamps=False) + "\n")
        trials.flush()
        os.fsync(trials.fileno())
        timings.write(json.dumps({"round": record.round, **record.timestamps}) + "\n")
        timings.flush()

    records: list[TrialRecord] = []

    def collect(record: TrialRecord) -> None:
        records.append(record)
        persist(record)

    outcome, error = "error", None
    try:
        result = run_loop(optimizer, evaluator, manifest.budget, manifest.targets, collect)
        outcome = result.outcome
    except (EvaluatorError, ProposalExhaustedError, InvalidConfigError) as exc:
        error = exc
        raise
    finally:
        trials.close()
        timings.close()
        directions = {k: v for k, v in evaluator.objectives.items()}
        _write_traces(run_dir / "traces.csv", records, directions)
        usage = {"calls": 0, "input_tokens": 0, "output_tokens": 0, "wall_latency_seconds": []}
        if isinstance(optimizer, AgentOptimizer):
            usage = optimizer.ledger.to_dict()
            usage["bundles"] = optimizer.bundle_log
        (run_dir / "usage.json").write_text(json.dumps(usage, indent=1))
        summary: dict[str, Any] = {"status": outcome, "rounds": len(records)}
        if error is not None:
            summary["error"] = f"{type(error).__name__}: {error}"
        if records:
            primary = next(iter(evaluator.objectives))
            obs = [Observation(r.config, r.objectives, r.round) for r in records]
            summary["best_" + primary] = best_so_far(obs, primary, evaluator.objectives[primary])[-1]
        done = RunManifest.from_dict({**manifest.to_dict(), "outcome": summary})
        (run_dir / "manifest.json").write_text(done.to_json())
    log.info("run %s finished: %s after %d rounds", manifest.run_id, outcome, len(records))
    return RunResult(run_dir, records, outcome, optimizer, evaluator)


@dataclass
class ReplayResult:
    identical: bool
    diff: list[str]
    replay_dir: Path


def replay(run_dir: str | Path, out_dir: str | Path | None = None) -> ReplayResult:
    """Re-run a recorded manifest and compare the trial logs byte for byte."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json" if run_dir.is_dir() else run_dir
    manifest = load_manifest(manifest_path)
    manifest.outcome = None
    original = (manifest_path.parent / "trials.jsonl").read_text()
    target = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="hwtune-replay-"))
    try:
        result = run_experiment(manifest, target)
        fresh = (result.run_dir / "trials.jsonl").read_text()
    except (EvaluatorError, ProposalExhaustedError) as exc:
        fresh = (target / manifest.run_id / "trials.jsonl").read_text()
        log.warning("replay aborted: %s", exc)
    diff = list(difflib.unified_diff(original.splitlines(), fresh.splitlines(),
                                     "recorded/trials.jsonl", "replayed/trials.jsonl", lineterm=""))
    return ReplayResult(original == fresh, diff, target / manifest.run_id)


# ---------------------------------------------------------------- compare


@dataclass
class ComparisonRow:
    optimizer: str
    runs: int
    mean_final: float
    stderr_final: float
    finals: list[float]
    failed_seeds: list[int] = field(default_factory=list)


@dataclass
class ComparisonReport:
    objective: str
    direction: str
    seeds: list[int]
    budget: int
    rows: list[ComparisonRow]
    traces: dict[str, dict[int, list[float]]]
    errors: dict[str, dict[int, str]] = field(default_factory=dict)

    def row(self, name: str) -> ComparisonRow:
        return next(r for r in self.rows if r.optimizer == name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective, "direction": self.direction, "seeds": self.seeds,
            "budget": self.budget, "rows": [asdict(r) for r in self.rows],
            "traces": {k: {str(s): t for s, t in v.items()} for k, v in self.traces.items()},
            "errors": {k: {str(s): e for s, e in v.items()} for k, v in self.errors.items()},
        }


def _row_key(names: Sequence[str], i: int) -> str:
    name = names[i]
    return name if names.count(name) == 1 else f"{name}#{names[:i + 1].count(name)}"


def compare_optimizers(
    space: SearchSpace,
    evaluator_factory: Callable[[int], Evaluator],
    optimizer_names: Sequence[str],
    seeds: Sequence[int],
    budget: int = 10,
    objective: str | None = None,
    out_dir: str | Path | None = None,
    optimizer_kwargs: Mapping[str, Mapping[str, Any]] | None = None,
    plot: bool = False,
) -> ComparisonReport:
    """Run every (optimizer, seed) cell; the evaluator for seed s is shared by all optimizers.

    ``evaluator_factory(s)`` must build a fresh, identically seeded evaluator.
    A cell that raises is recorded as failed and left out of the aggregates.
    """
    if len(optimizer_names) < 2:
        raise ValueError("compare needs at least two optimizers")
    if len(seeds) < 2:
        raise ValueError("compare needs at least two seeds")
    optimizer_kwargs = optimizer_kwargs or {}
    probe = evaluator_factory(seeds[0])
    objective = objective or next(iter(probe.objectives))
    direction = probe.objectives[objective]
    rows, traces, errors = [], {}, {}
    for i, name in enumerate(optimizer_names):
        key = _row_key(optimizer_names, i)
        traces[key], finals, failed = {}, [], []
        for seed in seeds:
            evaluator = evaluator_factory(seed)
            try:
                opt = _comparison_optimizer(name, space, seed, budget, evaluator,
                                            objective, optimizer_kwargs.get(name, {}))
                result = run_loop(opt, evaluator, budget)
                obs = [Observation(r.config, r.objectives, r.round) for r in result.records]
                trace = best_so_far(obs, objective, direction)
            except Exception as exc:  # a failed cell must not sink the whole comparison
                log.warning("compare: %s seed %d failed: %s", name, seed, exc)
                errors.setdefault(key, {})[seed] = f"{type(exc).__name__}: {exc}"
                failed.append(seed)
                continue
            traces[key][seed] = trace
            finals.append(trace[-1])
        n = len(finals)
        mean = float(np.mean(finals)) if n else float("nan")
        stderr = float(np.std(finals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        rows.append(ComparisonRow(key, n, mean, stderr, finals, failed))
    report = ComparisonReport(objective, direction, list(seeds), budget, rows, traces, errors)
    if out_dir is not None:
        write_comparison(report, Path(out_dir), plot)
    return report


def _comparison_optimizer(name: str, space: SearchSpace, seed: int, budget: int,
                          evaluator: Evaluator, objective: str, kwargs: Mapping[str, Any]) -> Optimizer:
    if name == "agent":
        from hwtune.agent import mock_agent
        from hwtune.prompt import PromptOptions, render_static

        backend = kwargs.get("backend") or mock_agent("coordinate_descent", seed=seed)
        static = kwargs.get("static_prompt") or render_static(
            space, None, (), PromptOptions(enable_deployment=False))
        extra = {k: v for k, v in kwargs.items() if k not in ("backend", "static_prompt")}
        return AgentOptimizer(space, backend, static, seed=seed, budget=budget,
                              objectives=evaluator.objectives, **extra)
    if name == "nsga2":
        objectives = dict(evaluator.objectives)
    else:
        objectives = {objective: evaluator.objectives[objective]}
    return make_optimizer(name, space, seed=seed, budget=budget, objectives=objectives, **kwargs)


def write_comparison(report: ComparisonReport, out_dir: Path, plot: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    with (out_dir / "traces.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["optimizer", "seed", "round", "best_so_far"])
        for name, per_seed in report.traces.items():
            for seed, trace in per_seed.items():
                for r, v in enumerate(trace, 1):
                    w.writerow([name, seed, r, repr(v)])
    if plot:
        plot_convergence(report, out_dir / "convergence.png")


def plot_convergence(report: ComparisonReport, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, per_seed in report.traces.items():
        if not per_seed:
            continue
        arr = np.array(list(per_seed.values()))
        mean = arr.mean(axis=0)
        rounds = np.arange(1, arr.shape[1] + 1)
        ax.plot(rounds, mean, marker="o", label=name)
        if arr.shape[0] > 1:
            se = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
            ax.fill_between(rounds, mean - se, mean + se, alpha=0.2)
    ax.set_xlabel("round")
    ax.set_ylabel(f"best-so-far {report.objective}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
