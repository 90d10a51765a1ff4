#!/usr/bin/env python3
"""Regenerate the frozen acceptance fixtures.

Run from the repository root:

    python3 scripts/freeze_fixtures.py

Writes tests/fixtures/{probe_toy.ckpt,probe_report.json,probe_schema.json,
protocol_k4_m4.json} and prints the multi-view trend numbers whose frozen
copies live as constants in tests/test_acceptance.py. Rerun after any change
that deliberately shifts deterministic numerics, then update those constants.
"""

import json
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from acceptance_workloads import (probe_environment, run_protocol_fixture,
                                  run_trend)
from mvre.init_schemes import dynamic_init, save_probe_report
from mvre.model import save_checkpoint
from mvre.schema import save_schema
from mvre.vocab import vocab_payload


def main():
    fixtures = ROOT / "tests" / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    print("building probe toy checkpoint ...")
    dataset, schema, vocab, verbalizer, model = probe_environment()
    save_checkpoint(fixtures / "probe_toy.ckpt", model,
                    vocab_payload=vocab_payload(vocab, verbalizer))
    save_schema(schema, fixtures / "probe_schema.json")
    _, report = dynamic_init(schema, vocab, verbalizer, model)
    save_probe_report(report, fixtures / "probe_report.json")
    print(f"  {len(report)} probe records ({time.perf_counter() - t0:.0f}s)")

    print("running similarity-protocol fixture (k=4, m=4) ...")
    protocol = run_protocol_fixture()
    with open(fixtures / "protocol_k4_m4.json", "w", encoding="utf-8") as fh:
        json.dump(protocol, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"  ratios: multi={protocol['ratio_multi_mask']:.4f} "
          f"single={protocol['ratio_single_mask']:.4f} "
          f"({time.perf_counter() - t0:.0f}s)")

    print("measuring multi-view trend (this is the slow part) ...")
    trend = run_trend()
    print(json.dumps(trend, indent=2))
    print(f"done in {time.perf_counter() - t0:.0f}s")
    print("\npaste into tests/test_acceptance.py:")
    print(f"  TREND_MEAN_M1 = {trend['mean_low']!r}")
    print(f"  TREND_MEAN_M3 = {trend['mean_high']!r}")
    print(f"  TREND_MARGIN = {trend['margin']!r}")


if __name__ == "__main__":
    main()
