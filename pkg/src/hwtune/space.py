"""Typed hyperparameter search spaces and the configurations drawn from them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
import yaml

from hwtune.errors import InvariantError, SchemaError, UnclampableError

UNIFORM_FLOAT = "uniform-float"
UNIFORM_INT = "uniform-int"
CATEGORICAL = "categorical"
KINDS = (UNIFORM_FLOAT, UNIFORM_INT, CATEGORICAL)


def _is_int(value: Any) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, (bool, np.bool_))


def _is_real(value: Any) -> bool:
    if isinstance(value, (bool, np.bool_)):
        return False
    return isinstance(value, (int, float, np.integer, np.floating))


def _category(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "bool"
    if _is_int(value):
        return "int"
    if _is_real(value):
        return "float"
    return type(value).__name__


def _same_choice(a: Any, b: Any) -> bool:
    # True == 1 in Python; a categorical of ints must not accept a bool.
    return _category(a) == _category(b) and a == b


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    lower: float | int | None = None
    upper: float | int | None = None
    default: Any = None
    log_scale: bool = False
    choices: tuple = ()
    description: str = ""

    def __post_init__(self) -> None:
        if not self.name or not isinstance(self.name, str):
            raise InvariantError(str(self.name), "parameter name must be a non-empty string")
        if self.kind not in KINDS:
            raise InvariantError(self.name, f"unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise InvariantError(self.name, "categorical parameter needs at least one choice")
            if self.log_scale:
                raise InvariantError(self.name, "categorical parameter cannot be log-scale")
            if not any(_same_choice(self.default, c) for c in self.choices):
                raise InvariantError(self.name, f"default {self.default!r} not among choices")
            return
        if not (_is_real(self.lower) and _is_real(self.upper)):
            raise InvariantError(self.name, "numeric parameter needs numeric lower and upper")
        if not self.lower < self.upper:
            raise InvariantError(self.name, f"lower {self.lower} must be < upper {self.upper}")
        if self.kind == UNIFORM_INT and not (_is_int(self.lower) and _is_int(self.upper)):
            raise InvariantError(self.name, "integer parameter needs integer bounds")
        if self.log_scale and self.lower <= 0:
            raise InvariantError(self.name, "log-scale parameter needs lower > 0")
        if not _is_real(self.default):
            raise InvariantError(self.name, f"default {self.default!r} is not numeric")
        if self.kind == UNIFORM_INT and not _is_int(self.default):
            raise InvariantError(self.name, f"default {self.default!r} is not an integer")
        if not self.lower <= self.default <= self.upper:
            raise InvariantError(
                self.name, f"default {self.default} outside [{self.lower}, {self.upper}]"
            )

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == CATEGORICAL:
            out["choices"] = list(self.choices)
        else:
            out["lower"] = self.lower
            out["upper"] = self.upper
            out["log_scale"] = self.log_scale
        out["default"] = self.default
        if self.description:
            out["description"] = self.description
        return out


@dataclass(frozen=True)
class SearchSpace:
    name: str
    params: tuple[ParamSpec, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for p in self.params:
            if p.name in seen:
                raise InvariantError(p.name, "duplicate parameter name")
            seen.add(p.name)

    def __iter__(self) -> Iterator[ParamSpec]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def __contains__(self, name: object) -> bool:
        return any(p.name == name for p in self.params)

    def __getitem__(self, name: str) -> ParamSpec:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "params": [p.to_dict() for p in self.params]}


@dataclass(frozen=True)
class Configuration:
    """A named-value assignment over a search space."""

    assignments: Mapping[str, Any] = field(default_factory=dict)
    space_name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "assignments", dict(self.assignments))

    def __getitem__(self, name: str) -> Any:
        return self.assignments[name]

    def __iter__(self):
        return iter(self.assignments)

    def __len__(self) -> int:
        return len(self.assignments)

    def __hash__(self) -> int:
        return hash((self.space_name, tuple(sorted((k, repr(v)) for k, v in self.assignments.items()))))

    def as_dict(self) -> dict[str, Any]:
        return dict(self.assignments)

    def replace(self, **changes: Any) -> "Configuration":
        return Configuration({**self.assignments, **changes}, self.space_name)


class ViolationKind(str, enum.Enum):
    UNKNOWN_PARAMETER = "UnknownParameter"
    MISSING_PARAMETER = "MissingParameter"
    TYPE_MISMATCH = "TypeMismatch"
    OUT_OF_RANGE = "OutOfRange"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    name: str
    value: Any = None

    def __str__(self) -> str:
        return f"{self.kind.value}({self.name!r}, {self.value!r})"


# --------------------------------------------------------------------------- io


def _coerce_number(value: Any, where: str) -> Any:
    # PyYAML reads "1e-5" (no dot) as a string.
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise SchemaError(f"{where}: expected a number, got {value!r}") from None
    return value


def _param_from_dict(entry: Any, index: int) -> ParamSpec:
    if not isinstance(entry, Mapping):
        raise SchemaError(f"params[{index}] must be a mapping")
    for key in ("name", "kind"):
        if key not in entry:
            raise SchemaError(f"params[{index}] is missing {key!r}")
    name, kind = entry["name"], entry["kind"]
    unknown = set(entry) - {"name", "kind", "lower", "upper", "default", "log_scale",
                            "choices", "description"}
    if unknown:
        raise SchemaError(f"params[{index}] ({name}) has unknown keys {sorted(unknown)}")
    if kind == CATEGORICAL:
        choices = entry.get("choices")
        if not isinstance(choices, list):
            raise SchemaError(f"{name}: categorical parameter needs a 'choices' list")
        default = entry.get("default", choices[0] if choices else None)
        return ParamSpec(name, kind, default=default, choices=tuple(choices),
                         log_scale=bool(entry.get("log_scale", False)),
                         description=entry.get("description", ""))
    if kind not in KINDS:
        raise InvariantError(str(name), f"unknown kind {kind!r}")
    for key in ("lower", "upper", "default"):
        if key not in entry:
            raise SchemaError(f"{name}: numeric parameter is missing {key!r}")
    lower = _coerce_number(entry["lower"], f"{name}.lower")
    upper = _coerce_number(entry["upper"], f"{name}.upper")
    default = _coerce_number(entry["default"], f"{name}.default")
    if kind == UNIFORM_FLOAT:
        lower, upper, default = (float(v) if _is_real(v) else v for v in (lower, upper, default))
    elif kind == UNIFORM_INT:
        lower, upper, default = (
            int(v) if isinstance(v, float) and v.is_integer() else v
            for v in (lower, upper, default)
        )
    return ParamSpec(name, kind, lower=lower, upper=upper, default=default,
                     log_scale=bool(entry.get("log_scale", False)),
                     description=entry.get("description", ""))


def space_from_dict(doc: Any) -> SearchSpace:
    if not isinstance(doc, Mapping):
        raise SchemaError("space document must be a mapping")
    if "name" not in doc or "params" not in doc:
        raise SchemaError("space document needs top-level 'name' and 'params'")
    if not isinstance(doc["params"], list):
        raise SchemaError("'params' must be a list")
    params = tuple(_param_from_dict(e, i) for i, e in enumerate(doc["params"]))
    return SearchSpace(str(doc["name"]), params)


def load_space(source: str | Path) -> SearchSpace:
    """Parse a space document (YAML or JSON text, or a path to one)."""
    if isinstance(source, Path):
        source = source.read_text()
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparsable space document: {exc}") from exc
    return space_from_dict(doc)


def dump_space(space: SearchSpace) -> str:
    return yaml.safe_dump(space.to_dict(), sort_keys=False)


PRESETS = (
    "resnet_appendix_d",
    "resnet_appendix_e_prompt",
    "llama_appendix_d",
    "llama_appendix_e_prompt",
    "deploy_appendix_d",
)


def load_preset(name: str) -> SearchSpace:
    """Load a shipped space by preset name, or from a file path."""
    path = Path(name)
    if path.suffix in (".yaml", ".yml", ".json") and path.exists():
        return load_space(path)
    ref = resources.files("hwtune") / "data" / "spaces" / f"{name}.yaml"
    if not ref.is_file():
        raise SchemaError(f"unknown space preset {name!r}; known: {', '.join(PRESETS)}")
    return load_space(ref.read_text())


# ------------------------------------------------------------------ operations


def default_config(space: SearchSpace) -> Configuration:
    return Configuration({p.name: p.default for p in space.params}, space.name)


def _check_value(p: ParamSpec, value: Any) -> Violation | None:
    if p.kind == CATEGORICAL:
        if any(_same_choice(value, c) for c in p.choices):
            return None
        if any(_category(value) == _category(c) for c in p.choices):
            return Violation(ViolationKind.OUT_OF_RANGE, p.name, value)
        return Violation(ViolationKind.TYPE_MISMATCH, p.name, value)
    ok_type = _is_int(value) if p.kind == UNIFORM_INT else _is_real(value)
    if not ok_type or not math.isfinite(float(value)):
        return Violation(ViolationKind.TYPE_MISMATCH, p.name, value)
    if not p.lower <= value <= p.upper:
        return Violation(ViolationKind.OUT_OF_RANGE, p.name, value)
    return None


def validate(space: SearchSpace, config: Configuration | Mapping[str, Any]) -> list[Violation]:
    """Return every violation of ``config`` against ``space``; empty means valid."""
    values = config.assignments if isinstance(config, Configuration) else config
    violations = [Violation(ViolationKind.UNKNOWN_PARAMETER, k, v)
                  for k, v in values.items() if k not in space]
    for p in space.params:
        if p.name not in values:
            violations.append(Violation(ViolationKind.MISSING_PARAMETER, p.name))
            continue
        v = _check_value(p, values[p.name])
        if v is not None:
            violations.append(v)
    return violations


def is_valid(space: SearchSpace, config: Configuration | Mapping[str, Any]) -> bool:
    return not validate(space, config)


def clamp(space: SearchSpace, config: Configuration | Mapping[str, Any]) -> Configuration:
    """Project every numeric value onto its range; missing params take defaults.

    Integer parameters are rounded before projection. Raises UnclampableError for
    unknown keys, non-numeric values on numeric params and categorical values
    outside ``choices``.
    """
    values = config.assignments if isinstance(config, Configuration) else config
    unknown = [k for k in values if k not in space]
    if unknown:
        raise UnclampableError(f"unknown parameters {unknown}")
    out: dict[str, Any] = {}
    for p in space.params:
        if p.name not in values:
            out[p.name] = p.default
            continue
        v = values[p.name]
        if p.kind == CATEGORICAL:
            match = [c for c in p.choices if _same_choice(v, c)]
            if not match:
                raise UnclampableError(f"{p.name}: {v!r} not among choices")
            out[p.name] = match[0]
            continue
        if not _is_real(v) or not math.isfinite(float(v)):
            raise UnclampableError(f"{p.name}: {v!r} is not a finite number")
        if p.kind == UNIFORM_INT:
            out[p.name] = int(min(max(round(float(v)), p.lower), p.upper))
        else:
            out[p.name] = float(min(max(float(v), p.lower), p.upper))
    return Configuration(out, space.name)


def sample(space: SearchSpace, rng_seed: int | np.random.Generator) -> Configuration:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    out: dict[str, Any] = {}
    for p in space.params:
        if p.kind == CATEGORICAL:
            out[p.name] = p.choices[int(rng.integers(len(p.choices)))]
        elif p.log_scale:
            x = math.exp(rng.uniform(math.log(p.lower), math.log(p.upper)))
            if p.kind == UNIFORM_INT:
                out[p.name] = int(min(max(round(x), p.lower), p.upper))
            else:
                out[p.name] = float(min(max(x, p.lower), p.upper))
        elif p.kind == UNIFORM_INT:
            out[p.name] = int(rng.integers(p.lower, p.upper + 1))
        else:
            out[p.name] = float(rng.uniform(p.lower, p.upper))
    return Configuration(out, space.name)


# ------------------------------------------------------- unit-cube encoding


def to_unit(space: SearchSpace, config: Configuration | Mapping[str, Any]) -> np.ndarray:
    """Encode a configuration into [0, 1]^d (log params in the log domain)."""
    values = config.assignments if isinstance(config, Configuration) else config
    u = np.empty(len(space.params))
    for i, p in enumerate(space.params):
        v = values[p.name]
        if p.kind == CATEGORICAL:
            n = len(p.choices)
            idx = next(j for j, c in enumerate(p.choices) if _same_choice(v, c))
            u[i] = 0.5 if n == 1 else idx / (n - 1)
        elif p.log_scale:
            u[i] = (math.log(v) - math.log(p.lower)) / (math.log(p.upper) - math.log(p.lower))
        else:
            u[i] = (v - p.lower) / (p.upper - p.lower)
    return u


def from_unit(space: SearchSpace, u: Sequence[float]) -> Configuration:
    """Decode a point of the unit cube; the result always validates."""
    out: dict[str, Any] = {}
    for p, x in zip(space.params, u):
        x = min(max(float(x), 0.0), 1.0)
        if p.kind == CATEGORICAL:
            n = len(p.choices)
            out[p.name] = p.choices[min(n - 1, int(round(x * (n - 1))))]
            continue
        if p.log_scale:
            v = math.exp(math.log(p.lower) + x * (math.log(p.upper) - math.log(p.lower)))
        else:
            v = p.lower + x * (p.upper - p.lower)
        if p.kind == UNIFORM_INT:
            out[p.name] = int(min(max(round(v), p.lower), p.upper))
        else:
            out[p.name] = float(min(max(v, p.lower), p.upper))
    return Configuration(out, space.name)
