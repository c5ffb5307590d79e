"""Design-space sweep and the optimization ladder."""
from __future__ import annotations

import os
from dataclasses import dataclass, replace

from .driver import CompileOptions, compile_kernel, random_inputs, run_compiled
from .errors import SmemOverflow, WarpSpecError
from .sim import COMPLETED


@dataclass(frozen=True)
class SweepRow:
    D: int
    P: int
    persistent: bool
    status: str             # ok | infeasible:<why> | <verdict>
    cycles: int = 0
    mode: str = ""
    tc_util: float = 0.0

    def csv(self):
        return f"{self.D},{self.P},{int(self.persistent)},{self.status},{self.cycles},{self.mode},{self.tc_util:.4f}"


SWEEP_HEADER = "D,P,persistent,status,cycles,mode,tc_util"


def sweep(graph, mc, depths, pipes, mode="auto", seed=0, base=None):
    """One row per (D, P, persistent); D < P and smem overflow are infeasible."""
    base = base or CompileOptions()
    inputs = random_inputs(graph, seed)
    rows = []
    for persistent in (False, True):
        for D in depths:
            for P in pipes:
                if D < P:
                    rows.append(SweepRow(D, P, persistent, "infeasible:D<P"))
                    continue
                opts = replace(base, D=D, P=P, mode=mode, persistent=persistent)
                try:
                    c = compile_kernel(graph, opts, mc)
                except SmemOverflow:
                    rows.append(SweepRow(D, P, persistent, "infeasible:smem"))
                    continue
                except WarpSpecError as e:
                    rows.append(SweepRow(D, P, persistent, f"infeasible:{type(e).__name__}"))
                    continue
                out = run_compiled(c, opts, mc, inputs)
                status = "ok" if out.verdict == COMPLETED else out.verdict
                rows.append(SweepRow(D, P, persistent, status, out.cycles, c.mode,
                                     out.utilization["TensorCore"]))
    return rows


@dataclass(frozen=True)
class Rung:
    name: str
    kernel: str
    D: int
    P: int
    mode: str
    coop_wgs: int
    persistent: bool
    cycles: int
    verdict: str

    def csv(self, baseline):
        speedup = baseline / self.cycles if self.cycles else 0.0
        return (f"{self.name},{self.kernel},{self.D},{self.P},{self.mode},{self.coop_wgs},"
                f"{int(self.persistent)},{self.cycles},{self.verdict},{speedup:.3f}")


LADDER_HEADER = "rung,kernel,D,P,mode,coop_wgs,persistent,cycles,verdict,speedup"


def large_sibling(kernel_path):
    stem, ext = os.path.splitext(kernel_path)
    path = f"{stem}_large{ext}"
    return path if os.path.exists(path) else None


def ablate(kernel_path, mc, parse, seed=0, depths=(2, 3, 4)):
    """Baseline -> +WS -> +cooperative/large tile -> +persistent -> +best D."""
    graph = parse(kernel_path)
    big_path = large_sibling(kernel_path) or kernel_path
    big = parse(big_path)
    name = os.path.basename(kernel_path)

    def rung(label, g, path, opts):
        c = compile_kernel(g, opts, mc)
        out = run_compiled(c, opts, mc, random_inputs(g, seed))
        return Rung(label, os.path.basename(path), opts.D, opts.P, c.mode,
                    opts.coop_wgs, opts.persistent, out.cycles, out.verdict)

    rungs = [
        rung("baseline", graph, kernel_path, CompileOptions(warp_specialize=False, D=1)),
        rung("+ws", graph, kernel_path, CompileOptions(D=2, P=1)),
    ]
    coop = CompileOptions(D=2, P=1, coop_wgs=2)
    rungs.append(rung("+coop-large", big, big_path, coop))
    pers = replace(coop, persistent=True)
    rungs.append(rung("+persistent", big, big_path, pers))
    best = None
    for D in depths:
        try:
            r = rung(f"+best-D", big, big_path, replace(pers, D=D))
        except SmemOverflow:
            continue
        if r.verdict == COMPLETED and (best is None or r.cycles < best.cycles):
            best = r
    rungs.append(best if best is not None else replace(rungs[-1], name="+best-D"))
    return name, rungs
