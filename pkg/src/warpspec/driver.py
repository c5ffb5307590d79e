"""Pass pipeline: partition -> pipeline -> lower -> grid-opt -> simulate."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, PipelineInfeasible, StagePlanAmbiguous
from .gridopt import CooperativeConfig, WorkQueue, apply_cooperative, apply_persistent, check_registers
from .lowering import LoweredModule, lower
from .partitioner import partition, sequential_program
from .pipeliner import MmaPipelineConfig, apply_coarse_grained, apply_fine_grained, identify_stages
from .program import WarpSpecProgram
from .sim import COMPLETED, MachineConfig, simulate, utilization
from .tile_ir import KernelGraph, interpret_sequential
from .tile_ir.interp import DTYPES

MODES = ("auto", "fine", "coarse", "none")
MISMATCH = "Mismatch"


@dataclass(frozen=True)
class CompileOptions:
    D: int = 2
    P: int = 1
    mode: str = "auto"
    coop_wgs: int = 1
    persistent: bool = False
    tiles: Optional[int] = None
    literal_prologue: bool = False
    warp_specialize: bool = True    # False: unspecialized single-WG baseline
    drop_consumed: bool = False     # test hook: delete every empty-barrier arrive

    def __post_init__(self):
        if self.D < 1:
            raise ConfigError(f"aref depth D must be >= 1, got {self.D}")
        if self.P < 1:
            raise ConfigError(f"pipeline depth P must be >= 1, got {self.P}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown pipeline mode {self.mode!r}")
        if self.coop_wgs < 1:
            raise ConfigError("--coop-wgs must be >= 1")
        if self.tiles is not None and self.tiles < 1:
            raise ConfigError("--tiles must be >= 1")


@dataclass
class Compiled:
    graph: KernelGraph
    program: WarpSpecProgram
    module: LoweredModule
    mode: str
    plan: object = None
    registers: int = 0
    runnable: bool = True

    def tiles(self, opts):
        n = self.graph.grid if opts.tiles is None else min(opts.tiles, self.graph.grid)
        return list(range(n))


def _dot_only(program):
    region = program.region(1) or program.regions[-1]
    if region.loop is None:
        return False
    kinds = [s.kind for s in region.loop.body if hasattr(s, "kind")]
    return "dot" in kinds and all(k in ("dot", "const", "idx") for k in kinds)


def pipeline(program: WarpSpecProgram, opts: CompileOptions):
    """Apply the requested (or automatically chosen) consumer rewrite."""
    if opts.mode == "none" or program.region(1) is None or program.region(1).loop is None:
        if opts.mode in ("fine", "coarse"):
            raise PipelineInfeasible(f"mode {opts.mode} needs a consumer loop")
        return program, "none", None
    if opts.mode == "fine":
        return apply_fine_grained(program, MmaPipelineConfig(opts.P)), "fine", None
    if opts.mode == "coarse":
        plan = identify_stages(program)
        return apply_coarse_grained(program, plan, literal=opts.literal_prologue), "coarse", plan
    try:
        plan = identify_stages(program)
    except StagePlanAmbiguous:
        plan = None
    if plan is not None and plan.C and plan.T:
        try:
            return apply_coarse_grained(program, plan, literal=opts.literal_prologue), "coarse", plan
        except (PipelineInfeasible, StagePlanAmbiguous):
            pass
    if _dot_only(program):
        return apply_fine_grained(program, MmaPipelineConfig(opts.P)), "fine", plan
    return program, "none", plan


def compile_kernel(graph: KernelGraph, opts: CompileOptions, mc: MachineConfig) -> Compiled:
    if opts.mode == "fine" and opts.P > opts.D:
        raise PipelineInfeasible(f"mode fine needs D >= P (D={opts.D}, P={opts.P})")
    if opts.warp_specialize:
        prog = partition(graph, opts.D)
        prog, mode, plan = pipeline(prog, opts)
    else:
        prog, mode, plan = sequential_program(graph), "sequential", None
    mod = lower(prog, mc.smem_bytes, drop_consumed=opts.drop_consumed, P=opts.P)
    if opts.coop_wgs > 1:
        mod = apply_cooperative(mod, CooperativeConfig(opts.coop_wgs))
    regs = check_registers(mod, mc)
    if opts.persistent:
        n = graph.grid if opts.tiles is None else min(opts.tiles, graph.grid)
        mod = apply_persistent(mod, mc, WorkQueue.of(n))
    runnable = not (mode == "coarse" and opts.literal_prologue)
    return Compiled(graph, prog, mod, mode, plan, regs, runnable)


def seed_from_env(default=0):
    raw = os.environ.get("WARPSPEC_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"WARPSPEC_SEED must be an integer, got {raw!r}") from None


def random_inputs(graph: KernelGraph, seed=0):
    """Small integer payloads in [-3, 3] for every buffer that is read."""
    rng = np.random.default_rng(seed)
    read = {op.attrs["src"] for op in graph.all_ops() if op.kind == "tma_load"}
    return {
        p.name: rng.integers(-3, 4, size=(p.type.rows, p.type.cols)).astype(DTYPES[p.type.elem])
        for p in graph.params if p.name in read
    }


@dataclass
class RunOutcome:
    verdict: str
    cycles: int
    utilization: dict
    oracle_match: Optional[bool]
    mismatch: Optional[str] = None
    sim: object = None
    compiled: Compiled = None
    extra: dict = field(default_factory=dict)


def first_difference(got, want):
    for name in sorted(want):
        a, b = got[name], want[name]
        if a.shape != b.shape:
            return f"{name}: shape {a.shape} != {b.shape}"
        diff = np.argwhere(a != b)
        if len(diff):
            idx = tuple(int(i) for i in diff[0])
            return f"{name}{list(idx)}: got {a[idx]}, expected {b[idx]}"
    return None


def run_compiled(c: Compiled, opts: CompileOptions, mc: MachineConfig, inputs=None, seed=0) -> RunOutcome:
    if not c.runnable:
        raise PipelineInfeasible("the literal coarse-grained schedule is listing-only; run without --literal-prologue")
    inputs = random_inputs(c.graph, seed) if inputs is None else inputs
    tiles = c.tiles(opts)
    res = simulate(c.module, mc, inputs, None if opts.persistent else tiles)
    util = utilization(res.trace)
    if res.verdict != COMPLETED:
        return RunOutcome(res.verdict, res.cycles, util, None, sim=res, compiled=c)
    want = interpret_sequential(c.graph, inputs, tiles)
    diff = first_difference(res.outputs, want)
    verdict = COMPLETED if diff is None else MISMATCH
    return RunOutcome(verdict, res.cycles, util, diff is None, diff, res, c)


def run_kernel(graph, opts: CompileOptions, mc: MachineConfig, inputs=None, seed=0) -> RunOutcome:
    return run_compiled(compile_kernel(graph, opts, mc), opts, mc, inputs, seed)
