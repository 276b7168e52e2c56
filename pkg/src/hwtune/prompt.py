"""Prompt assembly: static task description plus per-round trial history."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

from hwtune.errors import StaticTooLargeError
from hwtune.hardware import HardwareProfile
from hwtune.kerneltune import KernelSpec
from hwtune.records import TrialRecord
from hwtune.space import CATEGORICAL, UNIFORM_INT, ParamSpec, SearchSpace

DEFAULT_TOKEN_CAP = 16000

METRIC_LABELS = {"accuracy": "Verification accuracy", "latency": "Latency"}

REACT_DIRECTIVE = (
    "Work in interleaved Thought, Action, Observation steps. "
    "Thought: before deciding, reason about the current context, the earlier results "
    "and the constraints, and point out missing information or likely mistakes. "
    "Action: give the next configuration that follows from that reasoning. "
    "Observation: when the results come back, compare them with every earlier trial "
    "and adjust the plan before the next step."
)
REACT_REMINDER = "Answer with interleaved Thought, Action, Observation steps."

_PLACEHOLDERS = "xyzwvpabcdefghijklmnoqrstu"


def estimate_tokens(text: str) -> int:
    """Heuristic token count: ceil(characters / 4)."""
    return math.ceil(len(text) / 4)


def _fmt_number(v: Any) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _fmt_metric(v: float) -> str:
    return format(v, ".6g")


def metric_label(name: str) -> str:
    return METRIC_LABELS.get(name, name)


def render_param(p: ParamSpec) -> str:
    desc = f" {p.description}" if p.description else ""
    if p.kind == CATEGORICAL:
        choices = ", ".join(json.dumps(c) for c in p.choices)
        return f"'{p.name}':{desc} Type: Categorical, Choices: [{choices}], Default: {json.dumps(p.default)}."
    kind = "UniformInteger" if p.kind == UNIFORM_INT else "UniformFloat"
    line = (f"'{p.name}':{desc} Type: {kind}, Range: [{_fmt_number(p.lower)}, "
            f"{_fmt_number(p.upper)}], Default: {_fmt_number(p.default)}")
    return line + (", Log scale." if p.log_scale else ".")


def json_template(names: Sequence[str]) -> str:
    body = ",\n ".join(f'"{n}": {_PLACEHOLDERS[i % len(_PLACEHOLDERS)]}' for i, n in enumerate(names))
    return "{" + body + "}"


KERNEL_RESPONSE_SCHEMA = (
    '{\n "griddim": [x, y, z],\n "blockdim": [a, b, c],\n "tiling size": t,\n'
    ' "unroll size": u,\n "code changed": true,\n "code": "..."\n}'
)


@dataclass
class PromptOptions:
    model_name: str = "ResNet32"
    method: str = "QAT"
    quantization: str = "8-bit"
    dataset: str = "CIFAR-10"
    framework: str = "PyTorch"
    pretrained: bool = True
    enable_finetune: bool = True
    enable_deployment: bool = True
    react: bool = True
    extra_notes: str = ""


@dataclass(frozen=True)
class StaticPrompt:
    preamble: str
    hardware_section: str
    deployment_section: str
    finetune_section: str
    react_directive: str
    response_format_examples: str
    system_message: str

    @property
    def text(self) -> str:
        parts = [self.preamble, self.hardware_section, self.finetune_section,
                 self.deployment_section, self.react_directive, self.response_format_examples]
        return "\n\n".join(p for p in parts if p)

    @property
    def expects(self) -> str:
        if self.finetune_section and self.deployment_section:
            return "both"
        return "kernel" if self.deployment_section else "finetune"


def _hardware_section(profile: HardwareProfile) -> str:
    device = profile.raw.get("Device", profile.name)
    return (
        f"The model will be deployed on {device}. Hardware details: "
        f"{json.dumps(profile.to_prompt_dict())}.\n"
        f"The memory limit is {profile.memory_budget_gb:g}GB. Choose a quantization bit width "
        "that fits this limit and runs fast on this hardware."
    )


def _finetune_section(space: SearchSpace, opts: PromptOptions) -> str:
    lines = [
        f"Fine-tuning: {opts.method} of {opts.model_name} with [{opts.quantization}] quantization.",
        f"The dataset is {opts.dataset}. Training code uses {opts.framework}.",
        "Hyperparameter search space:",
        *(render_param(p) for p in space.params),
    ]
    if opts.pretrained:
        lines.append(f"{opts.model_name} starts from a **pretrained model**, so few epochs are needed.")
    lines += [
        "After each attempt you receive the accuracy results. The goal is the lowest error rate "
        "within the round budget. If the loss stops changing, move to a different region of "
        "the search space.",
        "Give **one configuration per round**; after the training results arrive, return an "
        "improved configuration.",
        "**Every hyperparameter must stay inside its range**.",
        "In the **first round**, train with the **default parameters**.",
        "Reply with the configuration as **JSON**, for example:",
        json_template(space.names),
    ]
    if opts.extra_notes:
        lines.append(opts.extra_notes)
    return "\n".join(lines)


def _deployment_section(kernels: Sequence[KernelSpec]) -> str:
    lines = [
        "Deployment: the model is built from GPU kernels (Softmax, SiLU, MatMul, ...). Tune each "
        "kernel's execution configuration: block and grid sizes for parallelism, tiling size "
        "and loop unrolling. You may also change the kernel code (memory placement, thread "
        "scheduling); keep it correct. The measured latency is reported back after each round.",
        "Reply with the execution configuration as JSON:",
        KERNEL_RESPONSE_SCHEMA,
    ]
    for i, k in enumerate(kernels):
        which = "The first kernel to optimize" if i == 0 else "Next kernel"
        lines.append(f"{which} is [{k.kernel}]: {json.dumps(k.to_prompt_dict())}")
    return "\n".join(lines)


def render_static(
    space: SearchSpace | None,
    profile: HardwareProfile | None = None,
    kernels: Sequence[KernelSpec] = (),
    options: PromptOptions | None = None,
) -> StaticPrompt:
    opts = options or PromptOptions()
    finetune = opts.enable_finetune and space is not None
    deploy = opts.enable_deployment and bool(kernels)
    if not (finetune or deploy):
        raise ValueError("at least one of fine-tuning or deployment must be enabled")
    if finetune and deploy:
        preamble = (f"You are helping tune both the {opts.method} fine-tuning and the deployment "
                    f"of {opts.model_name}.")
        system = ("You are an expert assistant for tuning neural networks, covering both "
                  "fine-tuning hyperparameters and deployment kernels. Propose configurations "
                  "and code that raise accuracy and inference speed.")
        fmt = ("Reply with the fine-tuning JSON after a line 'Fine-tuning:' and the execution "
               "JSON after a line 'Deployment:'.")
    elif finetune:
        preamble = f"You are helping tune the {opts.method} hyperparameters of {opts.model_name}."
        system = ("You are an expert assistant for tuning neural-network hyperparameters. "
                  "Propose configurations that raise the network's accuracy.")
        fmt = "Reply with exactly one JSON configuration object per round."
    else:
        preamble = f"You are helping tune the deployment kernels of {opts.model_name}."
        system = ("You are an expert assistant for tuning GPU kernel execution configurations. "
                  "Propose configurations that lower kernel latency.")
        fmt = "Reply with exactly one JSON execution configuration per round."
    return StaticPrompt(
        preamble=preamble,
        hardware_section=_hardware_section(profile) if profile is not None else "",
        deployment_section=_deployment_section(kernels) if deploy else "",
        finetune_section=_finetune_section(space, opts) if finetune else "",
        react_directive=REACT_DIRECTIVE if opts.react else "",
        response_format_examples=fmt,
        system_message=system,
    )


# ----------------------------------------------------------------- dynamic


@dataclass(frozen=True)
class HistoryPolicy:
    keep_verbatim: int = 5
    summarize_rest: bool = True


@dataclass(frozen=True)
class TrialBlock:
    round: int
    text: str
    summary: str
    response_text: str | None = None


@dataclass
class DynamicPrompt:
    rounds_left: int
    trial_blocks: list[TrialBlock] = field(default_factory=list)
    summaries: list[str] = field(default_factory=list)
    react: bool = True

    @property
    def budget_line(self) -> str:
        return f"Note: there are {self.rounds_left} rounds left. Make each attempt count."


def render_trial(record: TrialRecord) -> str:
    objectives = dict(record.objectives)
    kernel_latency = objectives.pop("latency", None) if record.kernel_config else None
    results = ". ".join(f"{metric_label(k)}: {_fmt_metric(v)}" for k, v in objectives.items())
    lines = [f"Round {record.round}."]
    if len(record.config):
        lines += [f"The current configuration is: {json.dumps(record.config.as_dict())}",
                  f"The result based on this configuration: {results}."]
    if record.loss_trace and len(lines) > 1:
        recent = ", ".join(_fmt_metric(x) for x in record.loss_trace[-5:])
        lines[-1] += f" Recent training losses (mean per epoch): [{recent}]"
    if record.kernel_config is not None:
        lines.append(f"The current execution configuration is: {json.dumps(record.kernel_config.to_dict())}")
        if kernel_latency is not None:
            lines.append(f"The result based on this configuration: Latency: {_fmt_metric(kernel_latency)} us.")
    if record.repaired:
        lines.append("(The proposed values were outside the allowed ranges and were clamped.)")
    return "\n".join(lines)


def summarize_trial(record: TrialRecord) -> str:
    parts = ", ".join(f"{metric_label(k)} {_fmt_metric(v)}" for k, v in record.objectives.items())
    return f"Round {record.round}: {parts}"


def render_dynamic(
    history: Sequence[TrialRecord],
    rounds_left: int,
    policy: HistoryPolicy = HistoryPolicy(),
    react: bool = True,
) -> DynamicPrompt:
    if rounds_left < 0:
        raise ValueError("rounds_left must be >= 0")
    k = max(0, policy.keep_verbatim)
    cut = max(0, len(history) - k)
    older, recent = history[:cut], history[cut:]
    summaries = [summarize_trial(r) for r in older] if policy.summarize_rest else []
    blocks = [TrialBlock(r.round, render_trial(r), summarize_trial(r), r.response_text)
              for r in recent]
    return DynamicPrompt(rounds_left, blocks, summaries, react)


# ----------------------------------------------------------------- bundle


@dataclass
class PromptBundle:
    system_message: str
    messages: list[dict[str, str]]
    token_estimate: int
    verbatim_rounds: list[int] = field(default_factory=list)
    summarized: int = 0
    dropped: int = 0

    def to_messages(self) -> list[dict[str, str]]:
        return [dict(m) for m in self.messages]

    def to_json(self) -> str:
        return json.dumps(self.messages, indent=1)

    def with_messages(self, extra: Sequence[dict[str, str]]) -> "PromptBundle":
        msgs = self.to_messages() + [dict(m) for m in extra]
        return PromptBundle(self.system_message, msgs, _estimate(msgs),
                            list(self.verbatim_rounds), self.summarized, self.dropped)


def _estimate(messages: Sequence[dict[str, str]]) -> int:
    return estimate_tokens("".join(m["content"] for m in messages))


def _build(static: StaticPrompt, dyn: DynamicPrompt, blocks: Sequence[TrialBlock],
           summaries: Sequence[str]) -> list[dict[str, str]]:
    msgs = [{"role": "system", "content": static.system_message},
            {"role": "user", "content": static.text}]
    if summaries:
        msgs.append({"role": "user",
                     "content": "Earlier trials (summarized):\n" + "\n".join(summaries)})
    head = dyn.budget_line + (f" {REACT_REMINDER}" if dyn.react else "")
    request = "Please propose the next configuration."
    for i, block in enumerate(blocks):
        if block.response_text:
            msgs.append({"role": "assistant", "content": block.response_text})
        if i < len(blocks) - 1:
            msgs.append({"role": "user", "content": block.text})
        else:
            msgs.append({"role": "user", "content": f"{head}\n{block.text}\n{request}"})
    if not blocks:
        msgs.append({"role": "user", "content": f"{head}\n{request}"})
    return msgs


def assemble(static: StaticPrompt, dynamic: DynamicPrompt, token_cap: int = DEFAULT_TOKEN_CAP) -> PromptBundle:
    """Combine static and dynamic prompts under ``token_cap`` estimated tokens.

    Oldest verbatim trials are demoted to one-line summaries first; if that is
    not enough, the oldest summaries are dropped. The budget line and the
    directive are never removed.
    """
    if estimate_tokens(static.system_message + static.text) >= token_cap:
        raise StaticTooLargeError(
            f"static prompt needs {estimate_tokens(static.system_message + static.text)} "
            f"tokens, cap is {token_cap}")
    blocks = list(dynamic.trial_blocks)
    summaries = list(dynamic.summaries)
    demoted = dropped = 0
    msgs = _build(static, dynamic, blocks, summaries)
    while _estimate(msgs) > token_cap and blocks:
        summaries.append(blocks.pop(0).summary)
        demoted += 1
        msgs = _build(static, dynamic, blocks, summaries)
    while _estimate(msgs) > token_cap and summaries:
        summaries.pop(0)
        dropped += 1
        msgs = _build(static, dynamic, blocks, summaries)
    if _estimate(msgs) > token_cap:
        raise StaticTooLargeError("static prompt plus budget line exceeds the token cap")
    return PromptBundle(static.system_message, msgs, _estimate(msgs),
                        [b.round for b in blocks], demoted, dropped)
