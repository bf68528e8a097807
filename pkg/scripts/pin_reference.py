"""Regenerate tests/data/reference_ct_pv2_td1.json from a seeded run.

Run only when a deliberate model change shifts the reference numbers.
"""

import hashlib
import json
from pathlib import Path

from ringdrift.harness.config import load_scenario
from ringdrift.harness.cli import bundled_scenario
from ringdrift.harness.trace import trace_to_csv

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "reference_ct_pv2_td1.json"


def summarise(trace) -> dict:
    acc = trace.column("accuracy")
    return {
        "final_accuracy": trace.final["accuracy"],
        "min_accuracy": min(acc),
        "overhead": trace.overhead,
        "events": len(trace.events),
        "csv_sha256": hashlib.sha256(trace_to_csv(trace).encode()).hexdigest(),
    }


def main():
    from ringdrift.harness.runner import run_scenario

    base = load_scenario(bundled_scenario("ct_pv2_td1.json"))
    ref = {"scenario": "ct_pv2_td1.json", "seed": base.seed}
    for mode, enabled in (("no_remediation", False), ("remediated", True)):
        cfg = base.model_copy(update={"remediation": enabled})
        ref[mode] = summarise(run_scenario(cfg))
    OUT.write_text(json.dumps(ref, indent=2) + "\n")
    print(json.dumps(ref, indent=2))


if __name__ == "__main__":
    main()
