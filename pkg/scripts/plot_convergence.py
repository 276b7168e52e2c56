"""Re-plot convergence curves from a saved comparison report.json."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from hwtune.harness import ComparisonReport, ComparisonRow, plot_convergence


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("report", help="report.json written by compare")
    ap.add_argument("--out", default=None, help="PNG path (default: next to the report)")
    args = ap.parse_args()

    doc = json.loads(Path(args.report).read_text())
    report = ComparisonReport(
        doc["objective"], doc["direction"], doc["seeds"], doc["budget"],
        [ComparisonRow(**r) for r in doc["rows"]],
        {k: {int(s): t for s, t in v.items()} for k, v in doc["traces"].items()})
    out = Path(args.out) if args.out else Path(args.report).with_name("convergence.png")
    print(plot_convergence(report, out))


if __name__ == "__main__":
    main()
