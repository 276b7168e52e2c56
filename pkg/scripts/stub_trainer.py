"""Toy training command for the external evaluator contract.

Usage: python stub_trainer.py CONFIG_JSON METRICS_JSON

Reads a hyperparameter configuration, pretends to train, and writes
{"accuracy": ..., "loss_trace": [...]} to METRICS_JSON.
"""

from __future__ import annotations

import json
import math
import sys


def fake_accuracy(cfg: dict) -> float:
    lr = float(cfg.get("learning_rate", 0.01))
    bs = float(cfg.get("batch_size", 128))
    epochs = float(cfg.get("num_epochs", 12))
    penalty = (math.log10(lr) + 2.3) ** 2 * 0.02 + (math.log2(bs) - 7) ** 2 * 0.005
    return max(0.1, 0.93 - penalty - 0.1 / epochs)


def main(argv: list[str]) -> int:
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 1
    cfg = json.loads(open(argv[1]).read())
    acc = fake_accuracy(cfg)
    losses = [round((1 - acc) * (1 + 2.0 / e), 6) for e in range(1, 6)]
    with open(argv[2], "w") as fh:
        json.dump({"accuracy": acc, "loss_trace": losses}, fh)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
