"""Hardware profiles, weight-memory gating and quantization-scheme selection."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from hwtune.errors import EmptyCandidateError, MissingEntryError, SchemaError

FP16 = "FP16"
INT8 = "INT8"
INT4 = "INT4"
PRECISIONS = (FP16, INT8, INT4)
_PRECISION_BITS = {FP16: 16, INT8: 8, INT4: 4}


@dataclass(frozen=True)
class QuantScheme:
    label: str
    weight_bits: int
    activation_bits: int

    def __str__(self) -> str:
        return self.label

    @property
    def precision(self) -> str | None:
        """The hardware precision class this scheme executes in, if any is declared."""
        bits = min(self.weight_bits, self.activation_bits)
        for name, b in _PRECISION_BITS.items():
            if b == bits:
                return name
        return None

    @classmethod
    def from_label(cls, label: str) -> "QuantScheme":
        key = label.strip().upper()
        if key in SCHEMES:
            return SCHEMES[key]
        raise ValueError(f"unknown quantization scheme {label!r}; known: {', '.join(SCHEMES)}")


SCHEMES: dict[str, QuantScheme] = {
    "FP16": QuantScheme("FP16", 16, 16),
    "INT8": QuantScheme("INT8", 8, 8),
    "INT4": QuantScheme("INT4", 4, 4),
    "W8A8": QuantScheme("W8A8", 8, 8),
    "W4A4": QuantScheme("W4A4", 4, 4),
    "W2A2": QuantScheme("W2A2", 2, 2),
}
DEFAULT_CANDIDATES = (SCHEMES["FP16"], SCHEMES["INT8"], SCHEMES["INT4"])


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    memory_budget_gb: float
    native_precisions: frozenset[str]
    fp16_tflops: float
    int8_tops: float
    int4_tops: float
    int4_emulated_via: str | None = None
    compute_units: int = 0
    notes: str = ""
    raw: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.native_precisions:
            raise SchemaError(f"profile {self.name}: no native precision")
        if not set(self.native_precisions) <= set(PRECISIONS):
            raise SchemaError(f"profile {self.name}: unknown precision in {set(self.native_precisions)}")
        if (INT4 in self.native_precisions) == (self.int4_emulated_via is not None):
            raise SchemaError(
                f"profile {self.name}: INT4 must be either native or emulated, not both/neither"
            )
        for label, v in (("FP16", self.fp16_tflops), ("INT8", self.int8_tops),
                         ("INT4", self.int4_tops), ("memory", self.memory_budget_gb)):
            if v < 0:
                raise SchemaError(f"profile {self.name}: negative {label} figure")

    def is_native(self, precision: str) -> bool:
        return precision in self.native_precisions

    def declared_throughput(self, precision: str) -> float:
        return {FP16: self.fp16_tflops, INT8: self.int8_tops, INT4: self.int4_tops}[precision]

    def emulating_precision(self, precision: str) -> str:
        if precision == INT4 and self.int4_emulated_via:
            return self.int4_emulated_via
        return FP16

    def to_prompt_dict(self) -> dict[str, Any]:
        """The key/value view handed to the agent (mirrors the profile file)."""
        skip = {"Name", "Notes", "Memory Limit (GB)", "Native Precisions", "Device"}
        return {k: v for k, v in self.raw.items() if k not in skip}


# ---------------------------------------------------------------- profile io

_NUMBER = re.compile(r"\d+(?:\.\d+)?")
_EMULATED = re.compile(r"emulated\s+via\s+(FP16|INT8|INT4)", re.IGNORECASE)


def _leading_number(text: Any) -> float | None:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    if not isinstance(text, str):
        return None
    m = _NUMBER.search(text)
    return float(m.group()) if m else None


def profile_from_dict(doc: Mapping[str, Any], name: str | None = None) -> HardwareProfile:
    if not isinstance(doc, Mapping):
        raise SchemaError("hardware profile must be a mapping")
    name = str(doc.get("Name", name or "profile"))
    figures: dict[str, float] = {}
    native: set[str] = set()
    emulated_via = None
    for prec in PRECISIONS:
        key = f"{prec} Performance"
        if key not in doc:
            raise SchemaError(f"profile {name}: missing {key!r}")
        text = doc[key]
        unsupported = isinstance(text, str) and "not supported" in text.lower()
        m = _EMULATED.search(text) if isinstance(text, str) else None
        if unsupported:
            figures[prec] = 0.0
            if prec == INT4:
                emulated_via = m.group(1).upper() if m else FP16
            continue
        value = _leading_number(text)
        if value is None:
            raise SchemaError(f"profile {name}: cannot read a figure from {key}={text!r}")
        figures[prec] = value
        native.add(prec)
    if "Native Precisions" in doc:
        native = {str(p).upper() for p in doc["Native Precisions"]}
        if INT4 in native:
            emulated_via = None
        elif emulated_via is None:
            emulated_via = INT8 if INT8 in native else FP16
    budget = doc.get("Memory Limit (GB)", doc.get("memory_budget_gb", 0.0))
    units = 0
    for key in ("CUDA Cores", "ALUs (Shader Cores)", "Compute Units"):
        if key in doc:
            units = int(_leading_number(doc[key]) or 0)
            break
    return HardwareProfile(
        name=name,
        memory_budget_gb=float(_leading_number(budget) or 0.0),
        native_precisions=frozenset(native),
        fp16_tflops=figures[FP16],
        int8_tops=figures[INT8],
        int4_tops=figures[INT4],
        int4_emulated_via=emulated_via,
        compute_units=units,
        notes=str(doc.get("Notes", "")),
        raw=dict(doc),
    )


def load_profile(name_or_path: str | Path) -> HardwareProfile:
    """Load a shipped profile ("a6000", "adreno740") or a JSON file."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text()
    else:
        ref = resources.files("hwtune") / "data" / "profiles" / f"{name_or_path}.json"
        if not ref.is_file():
            raise SchemaError(f"unknown hardware profile {name_or_path!r}")
        text = ref.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unparsable profile: {exc}") from exc
    return profile_from_dict(doc, name=str(name_or_path))


# ------------------------------------------------------------- memory gate


def weight_memory_gb(param_count: float, scheme: QuantScheme, overhead_factor: float = 1.0) -> float:
    """Weight footprint in decimal GB: params x bits / 8 (no KV-cache/activations)."""
    if param_count <= 0:
        raise ValueError("param_count must be positive")
    return param_count * scheme.weight_bits / 8 / 1e9 * overhead_factor


@dataclass(frozen=True)
class GateVerdict:
    scheme: QuantScheme
    admitted: bool
    required_gb: float

    def __str__(self) -> str:
        if self.admitted:
            return f"{self.scheme}: admit ({self.required_gb:g} GB)"
        return f"{self.scheme}: reject (requires {self.required_gb:g} GB)"


def memory_gate(
    param_count: float,
    budget_gb: float,
    candidates: Iterable[QuantScheme] = DEFAULT_CANDIDATES,
    overhead_factor: float = 1.0,
) -> dict[str, GateVerdict]:
    if budget_gb < 0:
        raise ValueError("budget_gb must be >= 0")
    out = {}
    for s in candidates:
        need = weight_memory_gb(param_count, s, overhead_factor)
        out[s.label] = GateVerdict(s, need <= budget_gb, need)
    return out


# -------------------------------------------------------------- selection


@dataclass(frozen=True)
class QuantRecommendation:
    ranking: tuple[QuantScheme, ...]
    rationale: str

    @property
    def best(self) -> QuantScheme:
        return self.ranking[0]


def _native(profile: HardwareProfile, scheme: QuantScheme) -> bool:
    prec = scheme.precision
    return prec is not None and profile.is_native(prec)


def _bandwidth_score(profile: HardwareProfile, scheme: QuantScheme) -> float:
    # Throughput per byte of weight traffic: a scheme with half the bits moves
    # half the bytes, so decode-time speed scales with 16/bits at equal TOPS.
    return profile.declared_throughput(scheme.precision) * 16 / scheme.weight_bits


def select_quant_by_profile(
    profile: HardwareProfile,
    param_count: float,
    admitted: Sequence[QuantScheme],
) -> QuantRecommendation:
    """Rank admitted schemes: native before emulated, then by throughput per weight byte.

    Ties fall to fewer weight bits.
    """
    if not admitted:
        raise EmptyCandidateError("no admissible quantization scheme")
    if len(admitted) == 1:
        only = admitted[0]
        return QuantRecommendation((only,), f"{only} is the only admissible scheme")

    native = [s for s in admitted if _native(profile, s)]
    emulated = [s for s in admitted if not _native(profile, s)]
    native.sort(key=lambda s: (-_bandwidth_score(profile, s), s.weight_bits))
    emulated.sort(key=lambda s: s.weight_bits, reverse=True)
    ranking = tuple(native + emulated)

    lines = []
    if native and emulated:
        lines.append(
            f"{', '.join(map(str, emulated))} not natively supported on {profile.name} "
            f"(unpacking overhead); ranked below native schemes"
        )
    if len(native) > 1:
        scores = ", ".join(f"{s}={_bandwidth_score(profile, s):g}" for s in native)
        lines.append(f"native schemes ordered by throughput per weight byte ({scores})")
        top = _bandwidth_score(profile, native[0])
        if sum(_bandwidth_score(profile, s) == top for s in native) > 1:
            lines.append("tie broken toward fewer weight bits")
    best = ranking[0]
    if not native:
        lines.append("no admitted scheme is native; widest emulation path preferred")
    mem = weight_memory_gb(param_count, best)
    lines.append(f"selected {best}: {mem:g} GB of weights")
    return QuantRecommendation(ranking, "; ".join(lines))


@dataclass
class ThroughputTable:
    entries: dict[tuple[str, str], float] = field(default_factory=dict)

    def add(self, model: str, scheme: QuantScheme | str, tokens_per_second: float) -> None:
        label = scheme.label if isinstance(scheme, QuantScheme) else scheme
        key = (model, label)
        if key in self.entries:
            raise ValueError(f"duplicate entry {key}")
        if tokens_per_second <= 0:
            raise ValueError("throughput must be positive")
        self.entries[key] = float(tokens_per_second)

    def models(self) -> list[str]:
        return list(dict.fromkeys(m for m, _ in self.entries))


def select_quant_by_measurement(
    table: ThroughputTable, model: str, admitted: Sequence[QuantScheme]
) -> QuantScheme:
    if not admitted:
        raise EmptyCandidateError("no admissible quantization scheme")
    for s in admitted:
        if (model, s.label) not in table.entries:
            raise MissingEntryError(model, s.label)
    return min(admitted, key=lambda s: (-table.entries[(model, s.label)], s.weight_bits))


# Token generation speed on the Snapdragon 8 Gen 2 / Adreno 740 handset.
ADRENO_TOKENS_PER_SECOND = {
    "openllama-3B": {"FP16": 5.11, "INT8": 5.25, "INT4": 4.95},
    "tinylama-1.1B": {"FP16": 11.17, "INT8": 11.23, "INT4": 10.43},
    "gpt2-large-774M": {"FP16": 13.41, "INT8": 13.20, "INT4": 12.29},
}


def adreno_throughput_table() -> ThroughputTable:
    table = ThroughputTable()
    for model, row in ADRENO_TOKENS_PER_SECOND.items():
        for label, tps in row.items():
            table.add(model, label, tps)
    return table
