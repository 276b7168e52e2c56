"""Show why a mobile GPU prefers INT8 while a datacenter GPU prefers INT4."""

from __future__ import annotations

from hwtune.hardware import (
    DEFAULT_CANDIDATES,
    adreno_throughput_table,
    load_profile,
    select_quant_by_measurement,
    select_quant_by_profile,
)
from hwtune.kerneltune import benchmark_fixtures, int4_vs_int8_report


def main() -> None:
    candidates = list(DEFAULT_CANDIDATES)
    for name in ("a6000", "adreno740"):
        profile = load_profile(name)
        rec = select_quant_by_profile(profile, 3e9, candidates)
        print(f"{profile.name}: {' > '.join(map(str, rec.ranking))}  ({rec.rationale})")
        print(f"  {'kernel':<24} {'INT4 us':>10} {'INT8 us':>10}  faster")
        for spec in benchmark_fixtures():
            rep = int4_vs_int8_report(spec, profile)
            print(f"  {spec.label:<24} {rep.int4_latency:>10.3f} {rep.int8_latency:>10.3f}  {rep.faster}")
    table = adreno_throughput_table()
    print("measured tokens/s selector:")
    for model in sorted({m for m, _ in table.entries}):
        print(f"  {model:<18} {select_quant_by_measurement(table, model, candidates)}")


if __name__ == "__main__":
    main()
