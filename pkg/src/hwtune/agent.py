"""Chat backends, response parsing/validation, retries and usage accounting."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from hwtune.errors import (
    CapacityError,
    InvalidConfigError,
    ProposalExhaustedError,
    TransportError,
    UnclampableError,
)
from hwtune.kerneltune import (
    DIM_MAX,
    TILINGS,
    UNROLL_MAX,
    KernelConfig,
    KernelSpec,
    _fit_block,
    config_problems,
)
from hwtune.prompt import PromptBundle, estimate_tokens
from hwtune.space import (
    CATEGORICAL,
    UNIFORM_INT,
    Configuration,
    SearchSpace,
    Violation,
    ViolationKind,
    clamp,
    validate,
)

log = logging.getLogger(__name__)

FINETUNE, KERNEL, BOTH = "finetune", "kernel", "both"
_KERNEL_KEYS = ("griddim", "blockdim")


# ------------------------------------------------------------------ ledger


@dataclass(frozen=True)
class CallRecord:
    input_tokens: int
    output_tokens: int
    latency_seconds: float


@dataclass
class UsageLedger:
    records: list[CallRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, entry: CallRecord) -> None:
        with self._lock:
            self.records.append(entry)

    @property
    def calls(self) -> int:
        return len(self.records)

    @property
    def input_tokens(self) -> int:
        return sum(r.input_tokens for r in self.records)

    @property
    def output_tokens(self) -> int:
        return sum(r.output_tokens for r in self.records)

    @property
    def wall_latency_seconds(self) -> list[float]:
        return [r.latency_seconds for r in self.records]

    def cost_estimate(self, prices: "UnitPrices") -> float:
        return self.input_tokens * prices.input_per_token + self.output_tokens * prices.output_per_token

    def to_dict(self) -> dict[str, Any]:
        return {
            "calls": self.calls,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_latency_seconds": self.wall_latency_seconds,
        }


@dataclass(frozen=True)
class UnitPrices:
    input_per_token: float
    output_per_token: float

    @classmethod
    def blended(cls, per_token: float) -> "UnitPrices":
        return cls(per_token, per_token)


@dataclass(frozen=True)
class CostReport:
    total_tokens: int
    total_cost: float
    mean_latency: float


def cost_report(ledger: UsageLedger, unit_prices: UnitPrices | float) -> CostReport:
    prices = unit_prices if isinstance(unit_prices, UnitPrices) else UnitPrices.blended(unit_prices)
    lat = ledger.wall_latency_seconds
    return CostReport(
        total_tokens=ledger.input_tokens + ledger.output_tokens,
        total_cost=ledger.cost_estimate(prices),
        mean_latency=sum(lat) / len(lat) if lat else 0.0,
    )


# ---------------------------------------------------------------- backends


class ChatBackend(Protocol):
    name: str
    max_input_tokens: int

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str: ...


class ScriptedBackend:
    """Replays fixed replies in order, then keeps repeating the last one."""

    def __init__(self, texts: Sequence[str], max_input_tokens: int = 1_000_000, name: str = "scripted"):
        if not texts:
            raise ValueError("scripted backend needs at least one reply")
        self.texts = list(texts)
        self.max_input_tokens = max_input_tokens
        self.name = name
        self.received: list[list[dict[str, str]]] = []
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        with self._lock:
            i = min(len(self.received), len(self.texts) - 1)
            self.received.append([dict(m) for m in messages])
            return self.texts[i]


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "gpt-4-0613"
    temperature: float = 0.0
    max_attempts: int = 3
    timeout_seconds: float = 60.0
    api_key_env: str = "HWTUNE_API_KEY"
    max_input_tokens: int = 8192


class RemoteBackend:
    """Generic chat-completion client: POST a role-tagged message list, read the reply."""

    def __init__(self, config: BackendConfig = BackendConfig(), client: Any = None):
        import httpx

        self.config = config
        self.name = f"remote:{config.model}"
        self.max_input_tokens = config.max_input_tokens
        self._client = client or httpx.Client(timeout=config.timeout_seconds)

    def payload(self, messages: Sequence[Mapping[str, str]]) -> dict[str, Any]:
        return {
            "model": self.config.model,
            "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
            "temperature": self.config.temperature,
        }

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        import httpx

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(self.config.endpoint, json=self.payload(messages), headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {exc}") from exc


@dataclass(frozen=True)
class Reply:
    text: str
    record: CallRecord


def send(
    backend: ChatBackend,
    bundle: PromptBundle,
    ledger: UsageLedger | None = None,
    transport_retries: int = 0,
    backoff_seconds: float = 0.0,
) -> Reply:
    if bundle.token_estimate > backend.max_input_tokens:
        raise CapacityError(
            f"prompt needs ~{bundle.token_estimate} tokens; {backend.name} accepts "
            f"{backend.max_input_tokens}")
    for attempt in range(transport_retries + 1):
        start = time.perf_counter()
        try:
            text = backend.complete(bundle.messages)
            break
        except TransportError:
            if attempt == transport_retries:
                raise
            log.warning("transport error talking to %s, retry %d", backend.name, attempt + 1)
            time.sleep(backoff_seconds * 2**attempt)
    record = CallRecord(bundle.token_estimate, estimate_tokens(text), time.perf_counter() - start)
    if ledger is not None:
        ledger.record(record)
    return Reply(text, record)


# ----------------------------------------------------------------- parsing


class FailureKind(str, enum.Enum):
    BAD_FORMAT = "BadFormat"
    CONSTRAINT_VIOLATION = "ConstraintViolation"
    OFF_TOPIC = "OffTopic"


@dataclass
class Failure:
    kind: FailureKind
    details: list[str] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    finetune_candidate: dict[str, Any] | None = None
    kernel_candidate: dict[str, Any] | None = None
    finetune_ok: Configuration | None = None
    kernel_ok: KernelConfig | None = None

    def __str__(self) -> str:
        return f"{self.kind.value}: {'; '.join(self.details)}" if self.details else self.kind.value


@dataclass
class AgentResponse:
    raw_text: str
    finetune_config: Configuration | None = None
    kernel_config: KernelConfig | None = None
    thought_text: str | None = None
    failure: Failure | None = None

    @property
    def parsed(self) -> bool:
        return self.failure is None


def _scan_objects(text: str) -> tuple[list[tuple[int, Any]], bool]:
    """All top-level JSON objects in ``text`` as (start offset, value).

    The flag reports whether some brace-balanced span failed to parse.
    """
    found: list[tuple[int, Any]] = []
    broken = False
    i = 0
    while True:
        start = text.find("{", i)
        if start < 0:
            return found, broken
        depth, in_str, esc, end = 0, False, False, -1
        for j in range(start, len(text)):
            ch = text[j]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    end = j
                    break
        if end < 0:
            return found, True
        chunk = text[start:end + 1]
        try:
            value = json.loads(chunk)
        except json.JSONDecodeError:
            try:
                value = json.loads(re.sub(r",\s*([}\]])", r"\1", chunk))
            except json.JSONDecodeError:
                broken = True
                i = start + 1
                continue
        found.append((start, value))
        i = end + 1


def _normalize_finetune(space: SearchSpace, obj: Mapping[str, Any]) -> dict[str, Any]:
    out = dict(obj)
    for p in space.params:
        v = out.get(p.name)
        if p.kind == UNIFORM_INT and isinstance(v, float) and v.is_integer():
            out[p.name] = int(v)
    return out


def _kernel_from_obj(obj: Mapping[str, Any], defaults: KernelSpec | None) -> tuple[dict[str, Any] | None, list[str]]:
    """Coerce a kernel JSON object into KernelConfig fields; returns (fields, type problems)."""
    problems = []

    def ints(key: str) -> tuple | None:
        v = obj.get(key)
        if v is None and defaults is not None:
            return defaults.default_grid if key == "griddim" else defaults.default_block
        if not isinstance(v, list) or len(v) != 3 or not all(
                isinstance(d, (int, float)) and not isinstance(d, bool) and float(d).is_integer()
                for d in v):
            problems.append(f"TypeMismatch({key!r}, {v!r})")
            return None
        return tuple(int(d) for d in v)

    def scalar(key: str, fallback: int) -> int | None:
        v = obj.get(key, fallback)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not float(v).is_integer():
            problems.append(f"TypeMismatch({key!r}, {v!r})")
            return None
        return int(v)

    grid, block = ints("griddim"), ints("blockdim")
    tiling = scalar("tiling size", defaults.default_tiling if defaults else 1)
    unroll = scalar("unroll size", defaults.default_unroll if defaults else 1)
    if problems:
        return None, problems
    code = obj.get("code")
    return {
        "grid": grid, "block": block, "tiling": tiling, "unroll": unroll,
        "code_changed": bool(obj.get("code changed", False)),
        "code": code if isinstance(code, str) else (None if code is None else json.dumps(code)),
    }, []


class _Fields:
    def __init__(self, d: Mapping[str, Any]):
        self.__dict__.update(d)


def parse_response(
    raw: str,
    space: SearchSpace | None,
    expect: str = FINETUNE,
    kernel_defaults: KernelSpec | None = None,
) -> AgentResponse:
    """Extract and validate the configuration(s) in an agent reply.

    The first JSON object carrying the expected keys wins; prose before it is
    kept as the thought text.
    """
    if expect not in (FINETUNE, KERNEL, BOTH):
        raise ValueError(f"expect must be finetune, kernel or both, not {expect!r}")
    objects, broken = _scan_objects(raw)
    dicts = [(pos, o) for pos, o in objects if isinstance(o, dict)]
    kernel_objs = [(pos, o) for pos, o in dicts if any(k in o for k in _KERNEL_KEYS)]
    names = set(space.names) if space is not None else set()
    ft_objs = [(pos, o) for pos, o in dicts
               if not any(k in o for k in _KERNEL_KEYS) and names & set(o)]

    def no_match() -> AgentResponse:
        if dicts or (objects and not broken):
            kind = FailureKind.OFF_TOPIC
            detail = "reply contains JSON but not the requested configuration"
        else:
            kind = FailureKind.BAD_FORMAT
            detail = "no parsable JSON object" if broken else "no JSON object found"
        return AgentResponse(raw, failure=Failure(kind, [detail]))

    wanted_ft = expect in (FINETUNE, BOTH)
    wanted_k = expect in (KERNEL, BOTH)
    if (wanted_ft and not ft_objs) or (wanted_k and not kernel_objs):
        return no_match()

    starts = ([ft_objs[0][0]] if wanted_ft else []) + ([kernel_objs[0][0]] if wanted_k else [])
    first = min(starts)
    thought = raw[:first].strip().rstrip("`").removesuffix("json").strip("` \n") or None

    failure = Failure(FailureKind.CONSTRAINT_VIOLATION)
    ft_config = kernel = None
    if wanted_ft:
        candidate = _normalize_finetune(space, ft_objs[0][1])
        violations = validate(space, candidate)
        failure.finetune_candidate = candidate
        if violations:
            failure.violations.extend(violations)
            failure.details.extend(str(v) for v in violations)
        else:
            ft_config = Configuration(candidate, space.name)
            failure.finetune_ok = ft_config
    if wanted_k:
        fields, problems = _kernel_from_obj(kernel_objs[0][1], kernel_defaults)
        if fields is not None:
            failure.kernel_candidate = fields
            problems = config_problems(_Fields(fields))
            if not problems:
                kernel = KernelConfig(**fields)
                failure.kernel_ok = kernel
        failure.details.extend(problems)
    if failure.details:
        return AgentResponse(raw, thought_text=thought, failure=failure)
    return AgentResponse(raw, ft_config, kernel, thought)


# ---------------------------------------------------------------- proposal


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    clamp_fallback: bool = True
    transport_retries: int = 2
    backoff_seconds: float = 0.0


@dataclass
class Proposal:
    config: Configuration | None
    kernel_config: KernelConfig | None
    attempts: int
    repaired: bool = False
    response_text: str = ""
    thought_text: str | None = None
    failures: list[Failure] = field(default_factory=list)


CORRECTIONS = {
    FailureKind.BAD_FORMAT: (
        "Your previous reply did not contain a configuration in the required JSON format. "
        "Reply again with the JSON object only, using exactly the keys listed above."
    ),
    FailureKind.CONSTRAINT_VIOLATION: (
        "Your previous configuration violates the search-space constraints: {details}. "
        "Use only the listed parameter names and keep every value inside its range."
    ),
    FailureKind.OFF_TOPIC: (
        "Your previous reply did not contain the requested configuration. Stay on the tuning "
        "task and reply with the JSON configuration."
    ),
}


def corrective_message(failure: Failure) -> str:
    return CORRECTIONS[failure.kind].format(details="; ".join(failure.details))


def clamp_kernel(fields: Mapping[str, Any]) -> KernelConfig:
    grid = tuple(min(max(int(d), 1), DIM_MAX) for d in fields["grid"])
    block = tuple(_fit_block([min(max(int(d), 1), DIM_MAX) for d in fields["block"]]))
    t = min(max(int(fields["tiling"]), 1), DIM_MAX)
    tiling = min(TILINGS, key=lambda p: (abs(math.log2(p) - math.log2(t)), p))
    unroll = min(max(int(fields["unroll"]), 1), UNROLL_MAX)
    return KernelConfig(grid, block, tiling, unroll, fields.get("code_changed", False), fields.get("code"))


def _repair(failure: Failure, space: SearchSpace | None, expect: str) -> tuple[Configuration | None, KernelConfig | None] | None:
    clampable = {ViolationKind.OUT_OF_RANGE, ViolationKind.MISSING_PARAMETER}
    ft = kernel = None
    if expect in (FINETUNE, BOTH):
        if failure.finetune_ok is not None:
            ft = failure.finetune_ok
        elif failure.finetune_candidate is None or any(v.kind not in clampable for v in failure.violations):
            return None
        else:
            try:
                ft = clamp(space, failure.finetune_candidate)
            except UnclampableError:
                return None
    if expect in (KERNEL, BOTH):
        if failure.kernel_ok is not None:
            kernel = failure.kernel_ok
        elif failure.kernel_candidate is None:
            return None
        else:
            try:
                kernel = clamp_kernel(failure.kernel_candidate)
            except (InvalidConfigError, ValueError):
                return None
    return ft, kernel


def propose(
    backend: ChatBackend,
    bundle: PromptBundle,
    space: SearchSpace | None,
    expect: str = FINETUNE,
    retry_policy: RetryPolicy = RetryPolicy(),
    ledger: UsageLedger | None = None,
    kernel_spec: KernelSpec | None = None,
) -> Proposal:
    """Ask the backend until it returns a valid proposal or attempts run out.

    After exhaustion the most recent constraint violation is clamped into range
    when ``retry_policy.clamp_fallback`` is set and the values are type-correct.
    """
    if retry_policy.max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    failures: list[Failure] = []
    current = bundle
    last_text = ""
    for attempt in range(1, retry_policy.max_attempts + 1):
        reply = send(backend, current, ledger, retry_policy.transport_retries,
                     retry_policy.backoff_seconds)
        last_text = reply.text
        resp = parse_response(reply.text, space, expect, kernel_spec)
        if resp.parsed:
            return Proposal(resp.finetune_config, resp.kernel_config, attempt,
                            response_text=reply.text, thought_text=resp.thought_text,
                            failures=failures)
        failures.append(resp.failure)
        log.info("attempt %d failed: %s", attempt, resp.failure)
        current = bundle.with_messages([
            {"role": "assistant", "content": reply.text},
            {"role": "user", "content": corrective_message(resp.failure)},
        ])
    if retry_policy.clamp_fallback:
        for failure in reversed(failures):
            if failure.kind is not FailureKind.CONSTRAINT_VIOLATION:
                continue
            repaired = _repair(failure, space, expect)
            if repaired is not None:
                ft, kernel = repaired
                return Proposal(ft, kernel, retry_policy.max_attempts, repaired=True,
                                response_text=last_text, failures=failures)
    raise ProposalExhaustedError(failures)


# ------------------------------------------------------------------- mocks

_PARAM_LINE = re.compile(
    r"^'(?P<name>[^']+)':.*?Type: (?P<type>UniformFloat|UniformInteger|Categorical), "
    r"(?:Range: \[(?P<lo>[^,\]]+), (?P<hi>[^\]]+)\]|Choices: \[(?P<choices>.*)\]), "
    r"Default: (?P<default>.+?)(?P<log>, Log scale)?\.$",
    re.MULTILINE,
)
_KERNEL_LINE = re.compile(r"is \[\w+\]: (\{.*\})$", re.MULTILINE)
_BLOCK = re.compile(
    r"Round (?P<round>\d+)\.\nThe current configuration is: (?P<config>\{.*\})\n"
    r"The result based on this configuration: (?P<result>.*)"
    r"(?:\nThe current execution configuration is: (?P<kconfig>\{.*\}))?"
    r"(?:\nThe result based on this configuration: Latency: (?P<klat>[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?) us\.)?"
)
_SUMMARY = re.compile(r"^Round (\d+): ", re.MULTILINE)
_METRIC = re.compile(r"([A-Za-z_][\w ]*?): ([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)")


@dataclass
class _MockParam:
    name: str
    kind: str
    lower: float = 0.0
    upper: float = 0.0
    default: Any = None
    log: bool = False
    choices: list = field(default_factory=list)


def _parse_listing(text: str) -> list[_MockParam]:
    out = []
    for m in _PARAM_LINE.finditer(text):
        kind = m["type"]
        if kind == "Categorical":
            out.append(_MockParam(m["name"], kind, default=json.loads(m["default"]),
                                  choices=json.loads(f"[{m['choices']}]")))
            continue
        cast = int if kind == "UniformInteger" else float
        out.append(_MockParam(m["name"], kind, cast(float(m["lo"])), cast(float(m["hi"])),
                              cast(float(m["default"])), bool(m["log"])))
    return out


class CoordinateDescentBackend:
    """Deterministic stand-in for the LLM agent.

    Reads the search space and history out of the prompt like a model would:
    round 1 returns the defaults; later rounds take the best trial seen so far
    and move one coordinate by one step (multiplicative step for log-scale
    parameters). Replies are always schema-valid.
    """

    def __init__(self, seed: int = 0, max_input_tokens: int = 1_000_000, log_factor: float = 1.5,
                 linear_fraction: float = 0.1):
        self.seed = seed
        self.name = f"mock-coordinate-descent(seed={seed})"
        self.max_input_tokens = max_input_tokens
        self.log_factor = log_factor
        self.linear_fraction = linear_fraction

    def complete(self, messages: Sequence[Mapping[str, str]]) -> str:
        static = messages[1]["content"] if len(messages) > 1 else ""
        params = _parse_listing(static)
        kernel_default = None
        km = _KERNEL_LINE.search(static)
        if km:
            d = json.loads(km.group(1))
            kernel_default = {"griddim": d["default gridDim"], "blockdim": d["default blockDim"],
                              "tiling size": d.get("tiling size", 1),
                              "unroll size": d.get("unroll size", 1), "code changed": False}
        history = "\n".join(m["content"] for m in messages[2:] if m["role"] == "user")
        trials = [m.groupdict() for m in _BLOCK.finditer(history)]
        rounds_seen = max([int(t["round"]) for t in trials]
                          + [int(r) for r in _SUMMARY.findall(history)] + [0])

        if rounds_seen == 0:
            ft = {p.name: p.default for p in params} if params else None
            thought = ("Thought: no trials have been run yet, so the first round uses the "
                       "default parameters as instructed.")
            return self._render(thought, ft, kernel_default)

        best_ft, best_k, note = self._incumbents(trials, params, kernel_default)
        rng = np.random.default_rng([self.seed, rounds_seen])
        moves = []
        ft = None
        if params:
            order = np.random.default_rng(self.seed).permutation(len(params))
            p = params[int(order[(rounds_seen - 1) % len(params)])]
            ft = dict(best_ft)
            ft[p.name], direction = self._step(p, ft[p.name], 1 if rng.random() < 0.5 else -1)
            moves.append(f"'{p.name}' {direction}")
        kernel = None
        if kernel_default is not None:
            kernel, direction = self._kernel_step(best_k, rounds_seen, 1 if rng.random() < 0.5 else -1)
            moves.append(direction)
        thought = (f"Thought: {rounds_seen} round(s) done; {note}. Change one setting at a time: "
                   f"{', '.join(moves)}.\nAction: propose the configuration below.")
        return self._render(thought, ft, kernel)

    def _incumbents(self, trials, params, kernel_default):
        best_ft = {p.name: p.default for p in params}
        best_k = kernel_default
        note = "no parsable result yet"
        best_score = best_lat = None
        for t in trials:
            metrics = _METRIC.findall(t["result"])
            if metrics:
                label, value = metrics[0]
                score = float(value) if "accuracy" in label.lower() or "latency" not in label.lower() else -float(value)
                if best_score is None or score > best_score:
                    best_score = score
                    best_ft = json.loads(t["config"])
                    note = f"round {t['round']} is best so far ({label.strip()} {value})"
            if t.get("kconfig") and t.get("klat"):
                lat = float(t["klat"])
                if best_lat is None or lat < best_lat:
                    best_lat, best_k = lat, json.loads(t["kconfig"])
        return best_ft, best_k, note

    def _step(self, p: _MockParam, value: Any, sign: int) -> tuple[Any, str]:
        for s in (sign, -sign):
            if p.kind == "Categorical":
                i = p.choices.index(value) if value in p.choices else 0
                j = i + s
                if 0 <= j < len(p.choices):
                    return p.choices[j], "to the next choice" if s > 0 else "to the previous choice"
                continue
            if p.log:
                new = value * self.log_factor if s > 0 else value / self.log_factor
            else:
                step = (p.upper - p.lower) * self.linear_fraction
                new = value + s * step
            if p.kind == "UniformInteger":
                new = int(round(new))
                if new == value:
                    new = value + s
            new = min(max(new, p.lower), p.upper)
            if new != value:
                return new, "up" if s > 0 else "down"
        return value, "unchanged"

    def _kernel_step(self, current: Mapping[str, Any], rounds_seen: int, sign: int):
        k = dict(current)
        grid, block = list(k["griddim"]), list(k["blockdim"])
        field_ = ("blockdim", "griddim", "tiling size", "unroll size")[(rounds_seen - 1) % 4]
        for s in (sign, -sign):
            g, b = list(grid), list(block)
            t, u = int(k["tiling size"]), int(k["unroll size"])
            if field_ == "blockdim":
                b[0] = min(max(b[0] * 2 if s > 0 else b[0] // 2, 1), DIM_MAX)
            elif field_ == "griddim":
                g[0] = min(max(g[0] * 2 if s > 0 else g[0] // 2, 1), DIM_MAX)
            elif field_ == "tiling size":
                t = min(max(t * 2 if s > 0 else t // 2, 1), DIM_MAX)
            else:
                u = min(max(u + s, 1), UNROLL_MAX)
            b = _fit_block(b)
            if (g, b, t, u) != (grid, block, int(k["tiling size"]), int(k["unroll size"])):
                k.update({"griddim": g, "blockdim": b, "tiling size": t, "unroll size": u})
                return k, f"{field_} {'up' if s > 0 else 'down'}"
        return k, f"{field_} unchanged"

    @staticmethod
    def _render(thought: str, ft: dict | None, kernel: Mapping | None) -> str:
        parts = [thought]
        if ft is not None and kernel is not None:
            parts.append(f"Fine-tuning:\n```json\n{json.dumps(ft)}\n```")
            parts.append(f"Deployment:\n```json\n{json.dumps(dict(kernel))}\n```")
        elif ft is not None:
            parts.append(f"```json\n{json.dumps(ft)}\n```")
        else:
            parts.append(f"```json\n{json.dumps(dict(kernel))}\n```")
        return "\n".join(parts)


def mock_agent(strategy: str = "coordinate_descent", *, texts: Sequence[str] | None = None,
               seed: int = 0, max_input_tokens: int = 1_000_000) -> ChatBackend:
    """Build a deterministic backend: ``"scripted"`` (needs ``texts``) or ``"coordinate_descent"``."""
    if strategy == "scripted":
        return ScriptedBackend(texts or [], max_input_tokens=max_input_tokens)
    if strategy == "coordinate_descent":
        return CoordinateDescentBackend(seed, max_input_tokens=max_input_tokens)
    raise ValueError(f"unknown mock strategy {strategy!r}")
