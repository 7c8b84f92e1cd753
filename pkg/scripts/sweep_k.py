#!/usr/bin/env python3
"""Cluster-count ablation: corrected target WER for k speaker clusters,
with k = 0 meaning the plain (unclustered) correction vector."""

import argparse
import json

import numpy as np

from pseudo2real.toy import ExperimentConfig, ToyWorldConfig, run_seeds


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--ks", default="0,1,2,4,8,16")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="k_sweep.json")
    args = ap.parse_args()

    cfg, exp = ToyWorldConfig(), ExperimentConfig()
    rows = []
    for k in (int(x) for x in args.ks.split(",")):
        reps = run_seeds(cfg, exp, range(args.seeds), k=k or None, threads=args.threads)
        row = {
            "k": k,
            "wer_pseudo": float(np.mean([r.wer_pseudo for r in reps])),
            "wer_corrected": float(np.mean([r.wer_corrected for r in reps])),
            "rel_reduction": float(np.mean([r.relative_reduction for r in reps])),
            "tau_norm": float(np.mean([r.tau_norm for r in reps])),
        }
        rows.append(row)
        print(f"k={k:>3}  pseudo {row['wer_pseudo']:.4f}  corrected {row['wer_corrected']:.4f}"
              f"  rel {row['rel_reduction']:+.4f}  |tau| {row['tau_norm']:.3f}")

    with open(args.out, "w") as f:
        json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
