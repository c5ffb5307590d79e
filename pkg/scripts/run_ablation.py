#!/usr/bin/env python3
"""Optimization ladder for the GEMM and attention fixtures.

    python3 scripts/run_ablation.py --out results/ablation.csv
"""
import argparse
import os

from warpspec.experiments import LADDER_HEADER, ablate
from warpspec.sim import MachineConfig, load_machine
from warpspec.tile_ir import parse_kernel

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "warpspec", "fixtures")


def read(path):
    with open(path) as f:
        return parse_kernel(f.read())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/ablation.csv")
    ap.add_argument("--machine")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    mc = load_machine(args.machine) if args.machine else MachineConfig()
    lines = [LADDER_HEADER]
    for name in ("gemm.k", "attention.k"):
        _, rungs = ablate(os.path.join(FIXTURES, name), mc, read, seed=args.seed)
        base = rungs[0].cycles
        for r in rungs:
            lines.append(r.csv(base))
            print(f"{name:12s} {r.name:12s} {r.mode:10s} D={r.D} cycles={r.cycles:6d} x{base / r.cycles:.2f}")
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
