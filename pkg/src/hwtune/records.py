"""Trial records: the persisted unit of one optimization round."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from hwtune.kerneltune import KernelConfig
from hwtune.space import Configuration


@dataclass
class TrialRecord:
    round: int
    config: Configuration
    objectives: dict[str, float]
    kernel_config: KernelConfig | None = None
    loss_trace: list[float] | None = None
    agent_attempts: int = 0
    repaired: bool = False
    timestamps: dict[str, str] = field(default_factory=dict)
    notes: str = ""
    response_text: str | None = None

    def to_dict(self, include_timestamps: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "round": self.round,
            "space": self.config.space_name,
            "config": self.config.as_dict(),
            "kernel_config": self.kernel_config.to_dict() if self.kernel_config else None,
            "objectives": dict(self.objectives),
            "loss_trace": list(self.loss_trace) if self.loss_trace is not None else None,
            "agent_attempts": self.agent_attempts,
            "repaired": self.repaired,
            "notes": self.notes,
            "response_text": self.response_text,
        }
        if include_timestamps:
            out["timestamps"] = dict(self.timestamps)
        return out

    def to_json(self, include_timestamps: bool = True) -> str:
        return json.dumps(self.to_dict(include_timestamps), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "TrialRecord":
        kc = doc.get("kernel_config")
        kernel = None
        if kc:
            kernel = KernelConfig(tuple(kc["griddim"]), tuple(kc["blockdim"]),
                                  kc.get("tiling size", 1), kc.get("unroll size", 1),
                                  kc.get("code changed", False), kc.get("code"))
        return cls(
            round=int(doc["round"]),
            config=Configuration(doc["config"], doc.get("space", "")),
            objectives={k: float(v) for k, v in doc["objectives"].items()},
            kernel_config=kernel,
            loss_trace=doc.get("loss_trace"),
            agent_attempts=int(doc.get("agent_attempts", 0)),
            repaired=bool(doc.get("repaired", False)),
            timestamps=dict(doc.get("timestamps", {})),
            notes=doc.get("notes", ""),
            response_text=doc.get("response_text"),
        )
