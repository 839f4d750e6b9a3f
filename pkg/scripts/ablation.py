"""Run the importance-term ablation and print the aggregate table.

Variants: W/_Loss keeps only the loss-gradient importance, W/_TWP adds
the topological term, Full adds the capacity penalty on top.
"""

import argparse

from gnncl.harness.runner import (
    aggregate_csv,
    resolve_sweep,
    sweep_and_report,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="0,1,2,3,4",
                    help="comma-separated seed list")
    ap.add_argument("--backbone", default="gat",
                    choices=("gcn", "gat", "gin"))
    ap.add_argument("--beta", type=float, default=None,
                    help="capacity coefficient for the Full variant")
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()

    strategy = {"kind": "TWP"}
    if args.beta is not None:
        strategy["beta"] = args.beta
    base = {"dataset": {"kind": "sbm"},
            "model": {"backbone": args.backbone},
            "strategy": strategy}
    resolved_base, variants = resolve_sweep(
        {"base": base, "ablation": True})
    seeds = [int(s) for s in args.seeds.split(",")]
    cells = sweep_and_report(resolved_base, variants, seeds, args.out_dir)
    print(aggregate_csv(cells), end="")


if __name__ == "__main__":
    main()
