"""Analytic kernel latency model and execution-configuration tuning.

The model stands in for on-device timing. It is deterministic and only its
orderings are meaningful; the microsecond values are not calibrated to any GPU.

    latency = launch
            + compute_coeff * (ops + unpack_ops) / (throughput * util) * pressure / ilp
            + mem_coeff * bytes / reuse(tiling) / min(1, 4 * util)
            + sched * blocks / resident_block_cap
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from hwtune.errors import InvalidConfigError, SchemaError
from hwtune.hardware import FP16, INT4, INT8, HardwareProfile
from hwtune.space import (
    CATEGORICAL,
    UNIFORM_INT,
    Configuration,
    ParamSpec,
    SearchSpace,
)

KERNELS = ("softmax", "silu", "rmsnorm", "rope", "matmul")
DIM_MAX = 256
MAX_BLOCK_THREADS = 1024
TILINGS = tuple(2**i for i in range(9))  # 1 .. 256
UNROLL_MAX = 16

_OPS_PER_ELEM = {"softmax": 5, "silu": 4, "rmsnorm": 3, "rope": 6}
_REUSE_CAP = {"softmax": 4, "silu": 4, "rmsnorm": 4, "rope": 2, "matmul": 64}
_ARITY = {"softmax": (1, 2), "silu": (1, 1), "rmsnorm": (1, 1), "rope": (1, 2), "matmul": (2, 2)}
_DTYPE = {
    "float32": ("FP32", 4.0), "f32": ("FP32", 4.0), "fp32": ("FP32", 4.0),
    "float16": (FP16, 2.0), "f16": (FP16, 2.0), "fp16": (FP16, 2.0),
    "int8": (INT8, 1.0), "q8_0": (INT8, 1.0),
    "int4": (INT4, 0.5), "q4_0": (INT4, 0.5),
}


def _dtype(tensor_type: str) -> tuple[str, float]:
    key = tensor_type.lower().removeprefix("ggml_type_")
    try:
        return _DTYPE[key]
    except KeyError:
        raise SchemaError(f"unknown tensor type {tensor_type!r}") from None


def _prod(xs: Sequence[int]) -> int:
    return math.prod(int(x) for x in xs)


@dataclass(frozen=True)
class KernelSpec:
    kernel: str
    tensor_type: str
    src_shapes: tuple[tuple[int, int, int, int], ...]
    out_shape: tuple[int, int, int, int]
    default_grid: tuple[int, int, int]
    default_block: tuple[int, int, int]
    default_unroll: int = 1
    default_tiling: int = 1
    name: str = ""

    def __post_init__(self) -> None:
        if self.kernel not in KERNELS:
            raise SchemaError(f"unknown kernel {self.kernel!r}")
        _dtype(self.tensor_type)
        lo, hi = _ARITY[self.kernel]
        if not lo <= len(self.src_shapes) <= hi:
            raise SchemaError(f"{self.kernel} takes {lo}..{hi} source tensors")
        for shape in (*self.src_shapes, self.out_shape):
            if len(shape) != 4 or any(int(d) < 1 for d in shape):
                raise SchemaError(f"{self.label}: shapes must be 4 positive dims, got {shape}")
        if self.kernel == "matmul":
            a, b = self.src_shapes
            if a[0] != b[0] or tuple(self.out_shape[:2]) != (a[1], b[1]):
                raise SchemaError(f"{self.label}: inconsistent matmul shapes")
        elif tuple(self.out_shape) != tuple(self.src_shapes[0]):
            raise SchemaError(f"{self.label}: output shape must equal src0 shape")
        # Validates the defaults against the same invariants as any proposal.
        self.default_config()

    @property
    def label(self) -> str:
        return self.name or self.kernel

    def default_config(self) -> "KernelConfig":
        return KernelConfig(self.default_grid, self.default_block,
                            self.default_tiling, self.default_unroll)

    @property
    def work_items(self) -> int:
        return _prod(self.out_shape)

    @property
    def ops(self) -> float:
        if self.kernel == "matmul":
            return 2.0 * self.src_shapes[0][0] * self.work_items
        return float(_OPS_PER_ELEM[self.kernel] * self.work_items)

    @property
    def elements(self) -> int:
        return sum(_prod(s) for s in self.src_shapes) + self.work_items

    def to_prompt_dict(self) -> dict[str, Any]:
        """Same keys as the kernel description shown to the agent."""
        out: dict[str, Any] = {"kernel": self.kernel, "tensor type": self.tensor_type}
        for i, shape in enumerate(self.src_shapes):
            out[f"src{i} tensor shape"] = list(shape)
        out["output tensor shape"] = list(self.out_shape)
        out["default gridDim"] = list(self.default_grid)
        out["default blockDim"] = list(self.default_block)
        out["unroll size"] = self.default_unroll
        out["tiling size"] = self.default_tiling
        return out


@dataclass(frozen=True)
class KernelConfig:
    grid: tuple[int, int, int]
    block: tuple[int, int, int]
    tiling: int = 1
    unroll: int = 1
    code_changed: bool = False
    code: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "block", tuple(self.block))
        problems = config_problems(self)
        if problems:
            raise InvalidConfigError("; ".join(problems))

    @property
    def threads_per_block(self) -> int:
        return _prod(self.block)

    @property
    def blocks(self) -> int:
        return _prod(self.grid)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "griddim": list(self.grid),
            "blockdim": list(self.block),
            "tiling size": self.tiling,
            "unroll size": self.unroll,
            "code changed": self.code_changed,
        }
        if self.code is not None:
            out["code"] = self.code
        return out


def config_problems(cfg: Any) -> list[str]:
    """Invariant violations of a kernel configuration (empty when valid)."""
    out = []
    for label, dims in (("griddim", cfg.grid), ("blockdim", cfg.block)):
        if len(dims) != 3:
            out.append(f"{label} must have 3 components")
            continue
        for d in dims:
            if isinstance(d, bool) or not isinstance(d, int) or not 1 <= d <= DIM_MAX:
                out.append(f"{label} component {d!r} outside [1, {DIM_MAX}]")
    if len(cfg.block) == 3 and all(isinstance(d, int) for d in cfg.block):
        if _prod(cfg.block) > MAX_BLOCK_THREADS:
            out.append(f"block product {_prod(cfg.block)} exceeds {MAX_BLOCK_THREADS}")
    if isinstance(cfg.tiling, bool) or cfg.tiling not in TILINGS:
        out.append(f"tiling size {cfg.tiling!r} is not a power of two in [1, {DIM_MAX}]")
    if isinstance(cfg.unroll, bool) or not isinstance(cfg.unroll, int) or not 1 <= cfg.unroll <= UNROLL_MAX:
        out.append(f"unroll size {cfg.unroll!r} outside [1, {UNROLL_MAX}]")
    return out


@dataclass(frozen=True)
class LatencyModelParams:
    mem_bandwidth_coeff: float = 2e-6  # us per byte at saturation
    compute_coeff: float = 1e-6  # us per op at 1 TOPS
    launch_overhead: float = 2.0  # us
    register_pressure_threshold: int = 4
    unpack_penalty_per_elem: float = 6.0  # extra ops per element when emulated
    occupancy_block_limit: int = 16  # resident blocks per 128 compute units
    threads_per_unit: int = 4
    smem_tiles_per_unit: int = 16
    register_spill_slope: float = 0.5
    block_sched_overhead: float = 0.05  # us per wave of resident blocks

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0")


# --------------------------------------------------------------- the model


def effective_throughput(profile: HardwareProfile, precision: str) -> float:
    """Ops/us scale for ``precision`` on ``profile`` (TOPS or TFLOPS figures)."""
    if precision == "FP32":
        base = profile.fp16_tflops if profile.is_native(FP16) else max(
            profile.declared_throughput(p) for p in profile.native_precisions)
        return max(base / 2, 1e-9)
    if profile.is_native(precision):
        return max(profile.declared_throughput(precision), 1e-9)
    via = profile.emulating_precision(precision)
    tput = profile.declared_throughput(via) if profile.is_native(via) else 0.0
    if profile.is_native(INT8):
        # A widened INT4 path never outruns the native INT8 pipeline.
        tput = min(tput, profile.int8_tops) if tput else profile.int8_tops
    return max(tput, 1e-9)


@dataclass(frozen=True)
class LatencyBreakdown:
    launch: float
    compute: float
    memory: float
    scheduling: float
    utilization: float

    @property
    def total(self) -> float:
        return self.launch + self.compute + self.memory + self.scheduling


def latency_breakdown(
    spec: KernelSpec,
    config: KernelConfig,
    profile: HardwareProfile,
    params: LatencyModelParams = LatencyModelParams(),
    precision: str | None = None,
) -> LatencyBreakdown:
    problems = config_problems(config)
    if problems:
        raise InvalidConfigError("; ".join(problems))
    storage_precision, elem_bytes = _dtype(spec.tensor_type)
    precision = precision or storage_precision

    units = max(profile.compute_units, 128)
    thread_cap = units * params.threads_per_unit
    block_cap = params.occupancy_block_limit * max(1, units // 128)
    smem_cap = params.smem_tiles_per_unit * units / config.tiling
    b = config.threads_per_block
    resident = min(config.blocks * b, block_cap * b, thread_cap, smem_cap)
    parallel = min(resident, spec.work_items)
    util = parallel / thread_cap

    ops = spec.ops
    if precision != "FP32" and not profile.is_native(precision):
        ops += params.unpack_penalty_per_elem * spec.elements
    thr = params.register_pressure_threshold
    ilp = math.sqrt(min(config.unroll, thr))
    pressure = 1.0 + params.register_spill_slope * max(0, config.unroll - thr)
    tput = effective_throughput(profile, precision)
    compute = params.compute_coeff * ops / (tput * util) * pressure / ilp

    reuse = min(config.tiling, _REUSE_CAP[spec.kernel])
    memory = params.mem_bandwidth_coeff * spec.elements * elem_bytes / reuse / min(1.0, 4 * util)
    scheduling = params.block_sched_overhead * config.blocks / block_cap
    return LatencyBreakdown(params.launch_overhead, compute, memory, scheduling, util)


def model_latency(
    spec: KernelSpec,
    config: KernelConfig,
    profile: HardwareProfile,
    params: LatencyModelParams = LatencyModelParams(),
    precision: str | None = None,
) -> float:
    """Modeled kernel latency in microseconds.

    ``precision`` selects the compute path (FP16/INT8/INT4); by default it is
    the kernel's declared tensor type. Memory traffic always uses the tensor storage type.
    """
    return latency_breakdown(spec, config, profile, params, precision).total


# ------------------------------------------------------------ tuning space


def kernel_space(spec: KernelSpec) -> SearchSpace:
    """Search space over execution parameters, seeded with the kernel's default launch config."""
    params = []
    for prefix, dims in (("grid", spec.default_grid), ("block", spec.default_block)):
        for axis, d in zip("xyz", dims):
            params.append(ParamSpec(f"{prefix}_{axis}", UNIFORM_INT, lower=1, upper=DIM_MAX,
                                    default=int(d), log_scale=True))
    params.append(ParamSpec("tiling", CATEGORICAL, default=spec.default_tiling, choices=TILINGS))
    params.append(ParamSpec("unroll", UNIFORM_INT, lower=1, upper=UNROLL_MAX,
                            default=spec.default_unroll))
    return SearchSpace(f"kernel_{spec.label}", tuple(params))


def _fit_block(block: list[int]) -> list[int]:
    while _prod(block) > MAX_BLOCK_THREADS:
        i = max(range(3), key=lambda k: block[k])
        block[i] = max(1, block[i] // 2)
    return block


def config_from_assignment(values: Configuration | Mapping[str, Any]) -> KernelConfig:
    """Map a kernel-space configuration to a KernelConfig.

    Blocks over the thread limit are shrunk by halving their largest dimension.
    """
    v = values.assignments if isinstance(values, Configuration) else values
    grid = [int(v["grid_x"]), int(v["grid_y"]), int(v["grid_z"])]
    block = _fit_block([int(v["block_x"]), int(v["block_y"]), int(v["block_z"])])
    return KernelConfig(tuple(grid), tuple(block), int(v["tiling"]), int(v["unroll"]))


def assignment_from_config(cfg: KernelConfig, space_name: str = "") -> Configuration:
    return Configuration({
        "grid_x": cfg.grid[0], "grid_y": cfg.grid[1], "grid_z": cfg.grid[2],
        "block_x": cfg.block[0], "block_y": cfg.block[1], "block_z": cfg.block[2],
        "tiling": cfg.tiling, "unroll": cfg.unroll,
    }, space_name)


@dataclass
class TuneResult:
    best_config: KernelConfig
    best_latency: float
    default_latency: float
    trace: list[tuple[KernelConfig, float]]

    @property
    def speedup(self) -> float:
        return self.default_latency / self.best_latency


def tune_kernel(
    spec: KernelSpec,
    profile: HardwareProfile,
    params: LatencyModelParams = LatencyModelParams(),
    budget: int = 10,
    strategy: Any = "random",
    seed: int = 0,
) -> TuneResult:
    """Search execution configs; round 0 always evaluates the kernel's default config.

    ``strategy`` is an optimizer bound to ``kernel_space(spec)`` (minimizing
    "latency") or the name of one, built with ``seed``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    space = kernel_space(spec)
    if isinstance(strategy, str):
        from hwtune.optimizers import make_optimizer

        strategy = make_optimizer(strategy, space, seed=seed, budget=max(1, budget - 1),
                                  objectives={"latency": "min"})
    default = spec.default_config()
    default_latency = model_latency(spec, default, profile, params)
    trace = [(default, default_latency)]
    best, best_latency = default, default_latency
    if budget > 1:
        strategy.tell(assignment_from_config(default, space.name), {"latency": default_latency})
    for _ in range(budget - 1):
        if strategy.done:
            break
        proposal = strategy.ask()
        cfg = config_from_assignment(proposal)
        latency = model_latency(spec, cfg, profile, params)
        strategy.tell(proposal, {"latency": latency})
        trace.append((cfg, latency))
        if latency < best_latency:
            best, best_latency = cfg, latency
    return TuneResult(best, best_latency, default_latency, trace)


@dataclass(frozen=True)
class PrecisionComparison:
    faster: str
    ratio: float
    int4_latency: float
    int8_latency: float


def int4_vs_int8_report(
    spec: KernelSpec, profile: HardwareProfile, params: LatencyModelParams = LatencyModelParams()
) -> PrecisionComparison:
    """Compare the default config under INT4 and INT8 compute; ratio = slower / faster."""
    cfg = spec.default_config()
    t4 = model_latency(spec, cfg, profile, params, precision=INT4)
    t8 = model_latency(spec, cfg, profile, params, precision=INT8)
    faster = INT4 if t4 <= t8 else INT8
    return PrecisionComparison(faster, max(t4, t8) / min(t4, t8), t4, t8)


# ---------------------------------------------------------------- fixtures


def spec_from_dict(doc: Mapping[str, Any]) -> KernelSpec:
    try:
        srcs = []
        i = 0
        while f"src{i} tensor shape" in doc:
            srcs.append(tuple(int(d) for d in doc[f"src{i} tensor shape"]))
            i += 1
        return KernelSpec(
            kernel=str(doc["kernel"]).lower(),
            tensor_type=str(doc["tensor type"]),
            src_shapes=tuple(srcs),
            out_shape=tuple(int(d) for d in doc["output tensor shape"]),
            default_grid=tuple(int(d) for d in doc["default gridDim"]),
            default_block=tuple(int(d) for d in doc["default blockDim"]),
            default_unroll=int(doc.get("unroll size", 1)),
            default_tiling=int(doc.get("tiling size", 1)),
            name=str(doc.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed kernel spec: {exc}") from exc


def load_kernel_spec(name_or_path: str | Path) -> KernelSpec:
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        ref = resources.files("hwtune") / "data" / "kernels" / f"{name_or_path}.json"
        if not ref.is_file():
            raise SchemaError(f"unknown kernel fixture {name_or_path!r}")
        text = ref.read_text()
    return spec_from_dict(json.loads(text))


# Kernel benchmark cases as (kernel, input-size triple).
BENCHMARK_CASES = tuple(
    (k, size)
    for k, sizes in (
        ("softmax", ((1024, 1, 32), (1024, 64, 32), (1024, 128, 32))),
        ("silu", ((11008, 1, 1), (11008, 64, 1), (11008, 128, 1))),
        ("rmsnorm", ((4096, 1, 1), (4096, 64, 1), (4096, 128, 1))),
        ("rope", ((128, 1, 1), (128, 64, 1), (128, 128, 1))),
        ("matmul", ((2048, 1, 2048), (2048, 64, 2048), (2048, 128, 2048))),
    )
    for size in sizes
)


def fixture_name(kernel: str, size: Sequence[int]) -> str:
    return f"{kernel}_{'x'.join(str(s) for s in size)}"


def benchmark_fixtures() -> list[KernelSpec]:
    return [load_kernel_spec(fixture_name(k, s)) for k, s in BENCHMARK_CASES]


def with_tensor_type(spec: KernelSpec, tensor_type: str) -> KernelSpec:
    return replace(spec, tensor_type=tensor_type)
