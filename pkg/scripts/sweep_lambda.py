#!/usr/bin/env python3
"""Target-test WER of theta_t_pseudo + lam * tau across a lambda grid,
averaged over seeds. The selection step is skipped: every lambda is scored
on the target test set directly."""

import argparse
import json
from dataclasses import replace

import numpy as np

from pseudo2real.toy import ExperimentConfig, ToyWorldConfig, generate_world, lambda_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--grid", default="0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0,1.2,1.5")
    ap.add_argument("--out", default="lambda_sweep.json")
    args = ap.parse_args()

    grid = [float(x) for x in args.grid.split(",")]
    cfg, exp = ToyWorldConfig(), ExperimentConfig()
    curves = np.array([
        [w for _, w in lambda_sweep(generate_world(replace(cfg, master_seed=s)), exp, grid)]
        for s in range(args.seeds)
    ])
    mean, sd = curves.mean(0), curves.std(0)
    best = int(np.argmin(mean))
    for lam, m, s in zip(grid, mean, sd):
        mark = "  <-" if lam == grid[best] else ""
        print(f"lambda {lam:4.1f}  wer {m:.4f} +- {s:.4f}{mark}")

    with open(args.out, "w") as f:
        json.dump({"grid": grid, "mean": mean.tolist(), "std": sd.tolist(), "per_seed": curves.tolist()}, f, indent=2)


if __name__ == "__main__":
    main()
