#!/usr/bin/env python3
"""D x P sweep over the shipped fixtures; one CSV per kernel.

    python3 scripts/run_sweep.py --out-dir results/sweep
"""
import argparse
import os

from warpspec.experiments import SWEEP_HEADER, sweep
from warpspec.sim import MachineConfig, load_machine
from warpspec.tile_ir import parse_kernel

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "src", "warpspec", "fixtures")
KERNELS = ("gemm.k", "gemm_batched.k", "attention.k")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results/sweep")
    ap.add_argument("--machine")
    ap.add_argument("-D", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("-P", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    mc = load_machine(args.machine) if args.machine else MachineConfig()
    os.makedirs(args.out_dir, exist_ok=True)
    for name in KERNELS:
        with open(os.path.join(FIXTURES, name)) as f:
            graph = parse_kernel(f.read())
        # fine mode only makes sense for dot-only loops; auto handles attention
        mode = "fine" if name.startswith("gemm") else "auto"
        rows = sweep(graph, mc, args.D, args.P, mode=mode, seed=args.seed)
        path = os.path.join(args.out_dir, name.replace(".k", ".csv"))
        with open(path, "w") as f:
            f.write(SWEEP_HEADER + "\n" + "".join(r.csv() + "\n" for r in rows))
        ok = [r for r in rows if r.status == "ok"]
        best = min(ok, key=lambda r: r.cycles)
        print(f"{name}: {len(ok)}/{len(rows)} feasible, best D={best.D} P={best.P} "
              f"persistent={int(best.persistent)} cycles={best.cycles} -> {path}")


if __name__ == "__main__":
    main()
