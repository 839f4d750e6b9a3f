"""Show catastrophic forgetting and its mitigation on one seed.

Trains FINETUNE, EWC, TWP, and JOINT on the default synthetic sequence
and prints each accuracy matrix with AP/AF: fine-tuning loses the first
task, regularized methods keep it.
"""

import argparse
import json

from gnncl.harness.runner import run_config_from_dict, run_sequence


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--backbone", default="gat",
                    choices=("gcn", "gat", "gin"))
    ap.add_argument("--out-dir", default=None,
                    help="optional directory for per-run artifacts")
    args = ap.parse_args()

    for kind in ("FINETUNE", "EWC", "TWP", "JOINT"):
        raw = {"dataset": {"kind": "sbm"},
               "model": {"backbone": args.backbone},
               "strategy": {"kind": kind},
               "seed": args.seed}
        if args.out_dir:
            raw["out_dir"] = f"{args.out_dir}/{kind.lower()}"
        result = run_sequence(run_config_from_dict(raw))
        print(f"== {kind} ==")
        print(result.r.to_csv(), end="")
        print(json.dumps({"ap": round(result.ap, 4),
                          "af": round(result.af, 4)}))
        print()


if __name__ == "__main__":
    main()
