"""Strategy x backbone summary table over several seeds.

Prints mean/std AP and AF for every combination. Slow with all
strategies; use --strategies to restrict.
"""

import argparse

import numpy as np

from gnncl.continual.strategies import STRATEGY_KINDS
from gnncl.harness.runner import run_config_from_dict, run_sequence


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--backbones", default="gcn,gat,gin")
    ap.add_argument("--strategies",
                    default="FINETUNE,EWC,MAS,LWF,GEM,TWP,JOINT")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    backbones = args.backbones.split(",")
    strategies = args.strategies.split(",")
    unknown = set(strategies) - set(STRATEGY_KINDS)
    if unknown:
        ap.error(f"unknown strategies: {', '.join(sorted(unknown))}")

    print("backbone,strategy,ap_mean,ap_std,af_mean,af_std")
    for backbone in backbones:
        for kind in strategies:
            aps, afs = [], []
            for seed in seeds:
                result = run_sequence(run_config_from_dict(
                    {"dataset": {"kind": "sbm"},
                     "model": {"backbone": backbone},
                     "strategy": {"kind": kind},
                     "seed": seed}))
                aps.append(result.ap)
                afs.append(result.af)
            print("%s,%s,%.4f,%.4f,%.4f,%.4f" % (
                backbone, kind, np.mean(aps), np.std(aps),
                np.mean(afs), np.std(afs)))


if __name__ == "__main__":
    main()
