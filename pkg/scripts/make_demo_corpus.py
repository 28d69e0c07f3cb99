#!/usr/bin/env python3
"""Generate a self-contained demo corpus for offline CLI runs.

Writes review pairs, gold annotations, a recorded backend transcript, and a
matching config so `revconflict run / eval / distill / rounds-sweep` all work
without network access. The transcript is produced by the same deterministic
fake-model machinery the test suite uses (tests/scenario.py).
"""

import argparse
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "tests"))

import scenario  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo", help="output directory (default: demo/)")
    parser.add_argument("--pairs", type=int, default=20, help="number of review pairs")
    parser.add_argument("--rounds", type=int, default=2, help="debate rounds in the config")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    plans, _ = scenario.demo_corpus(args.pairs)
    config = scenario.default_config(rounds=args.rounds)
    scenario.write_pairs([p.pair for p in plans], out / "pairs.jsonl")
    scenario.write_pairs([scenario.gold_pair_for(p) for p in plans], out / "gold.jsonl")
    scenario.record_script(plans, config, out / "script.jsonl")
    scenario.write_scripted_config(
        out / "config.toml", rounds=args.rounds, script=out / "script.jsonl"
    )

    sweep_plans, _ = scenario.sweep_corpus(12)
    scenario.write_pairs(scenario.sweep_gold(sweep_plans), out / "sweep_pairs.jsonl")
    scenario.record_sweep_script(sweep_plans, out / "sweep_script.jsonl")

    print(f"wrote demo corpus to {out}/")
    print("try:")
    print(
        f"  revconflict run --input {out}/pairs.jsonl --config {out}/config.toml "
        f"--output {out}/pred.jsonl"
    )
    print(
        f"  revconflict eval --pred {out}/pred.jsonl --gold {out}/gold.jsonl "
        f"--report {out}/report.json"
    )
    print(
        f"  revconflict distill --input {out}/pairs.jsonl --config {out}/config.toml "
        f"--out {out}/sft"
    )
    print(
        f"  revconflict rounds-sweep --input {out}/sweep_pairs.jsonl "
        f"--script {out}/sweep_script.jsonl --output {out}/sweep.csv"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
