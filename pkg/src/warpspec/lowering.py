"""Lower aref statements to mbarrier waits/arrivals and asynchronous copies.

For iteration ``g`` (global to the CTA: ``tile_ordinal * trip + k``; once
channels use the tile ordinal) a channel of depth D uses slot ``g % D`` and
waits parity ``(g // D) % 2``:

    put      -> bar_wait_phase empty, bar_expect_tx full, tma_async_load -> full
    get      -> bar_wait_phase full
    consumed -> bar_arrive empty

Each slot owns an empty and a full barrier.  Empty barriers start with one
completed phase (the initial E=1 credit); full barriers start pending.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import SmemOverflow, UnloweredAref
from .program import (
    Consumed, Get, It, Marker, MmaIssue as PMmaIssue, MmaWait, Put,
    WarpSpecProgram,
)
from .tile_ir.core import Loop, Op
from .tile_ir.text import format_loop_header, format_op

EMPTY, FULL = "empty", "full"
SYNC_GROUP = "sync"


# ------------------------------------------------------------ instructions

def _slot_expr(it: It, depth, ind):
    return f"[{it.fmt(ind)}%{depth}]"


def _parity_expr(it: It, depth, ind):
    return f"({it.fmt(ind)}/{depth})%2"


@dataclass(frozen=True)
class BarWaitPhase:
    chan: int
    bar: str
    it: It
    binds: tuple = ()       # get results bound to the slot's payload members

    def fmt(self, depth, ind):
        b = "e" if self.bar == EMPTY else "f"
        binds = f" -> {', '.join(self.binds)}" if self.binds else ""
        return (f"bar_wait_phase {b}{self.chan}{_slot_expr(self.it, depth, ind)} "
                f"parity {_parity_expr(self.it, depth, ind)}{binds}")


@dataclass(frozen=True)
class BarExpectTx:
    chan: int
    it: It
    tx_bytes: int

    def fmt(self, depth, ind):
        return f"bar_expect_tx f{self.chan}{_slot_expr(self.it, depth, ind)} {self.tx_bytes}"


@dataclass(frozen=True)
class TmaAsyncLoad:
    chan: int
    it: It
    member: int
    op: Op                  # the original tma_load (source and address operands)

    def fmt(self, depth, ind):
        a = self.op.attrs
        addr = ", ".join(str(o) for o in self.op.operands)
        s = _slot_expr(self.it, depth, ind)
        return f"tma_async_load {a['src']}[{addr}] : {a['type']} -> ch{self.chan}{s}.{self.member} arrive f{self.chan}{s}"


@dataclass(frozen=True)
class BarArrive:
    chan: int
    it: It
    tx_bytes: int = 0
    min_iter: Optional[int] = None

    def fmt(self, depth, ind):
        guard = f" if {ind}>={self.min_iter}" if self.min_iter is not None else ""
        return f"bar_arrive e{self.chan}{_slot_expr(self.it, depth, ind)}{guard}"


@dataclass(frozen=True)
class MmaIssue:
    op: Op
    group: str

    def fmt(self, depth, ind):
        return f"mma_issue {self.group}: {format_op(self.op)}"


@dataclass(frozen=True)
class MmaWaitGroup:
    pendings: Optional[int] = None
    group: Optional[str] = None

    def fmt(self, depth, ind):
        return f"mma_wait group={self.group}" if self.group is not None else f"mma_wait pendings={self.pendings}"


@dataclass(frozen=True)
class CudaOp:
    op: Op

    def fmt(self, depth, ind):
        return f"cuda {format_op(self.op)}"


@dataclass(frozen=True)
class StoreGlobal:
    op: Op

    def fmt(self, depth, ind):
        return f"store_global {format_op(self.op)[len('store '):]}"


@dataclass(frozen=True)
class CtaSync:
    """All warp groups of the CTA meet here (inserted before each epilogue)."""

    def fmt(self, depth, ind):
        return "cta_sync"


@dataclass(frozen=True)
class WorkLoopNext:
    """Persistent kernels: fetch the next tile from the work queue."""

    def fmt(self, depth, ind):
        return "work_loop_next"


CHANNEL_INSTRS = (BarWaitPhase, BarExpectTx, TmaAsyncLoad, BarArrive)


# ------------------------------------------------------------------ module

@dataclass(frozen=True)
class MBarrier:
    name: str
    chan: int
    slot: int
    kind: str
    arrival_threshold: int = 1
    init_completed: int = 0


@dataclass(frozen=True)
class Stream:
    wg: int
    role: str               # "producer" | "consumer"
    prologue: tuple
    loop: Optional[Loop]
    epilogue: tuple
    band: Optional[tuple] = None    # (index, count) for cooperative consumers
    banded: frozenset = frozenset() # values holding only this consumer's row band

    def instructions(self):
        body = self.loop.body if self.loop else ()
        return (*self.prologue, *body, *self.epilogue)


@dataclass(frozen=True)
class LoweredModule:
    name: str
    params: tuple
    grid: int
    trip: int
    channels: tuple
    slot_base: dict         # (chan, slot) -> byte offset
    smem_bytes: int
    barriers: tuple
    streams: tuple
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def barrier(self, chan, slot, kind):
        for b in self.barriers:
            if (b.chan, b.slot, b.kind) == (chan, slot, kind):
                return b
        raise KeyError((chan, slot, kind))

    def with_streams(self, streams, **meta):
        return replace(self, streams=tuple(streams), meta={**self.meta, **meta})


def smem_plan(channels):
    base, off = {}, 0
    for c in channels:
        for s in range(c.depth):
            base[(c.index, s)] = off
            off += c.slot_bytes
    return base, off


def _lower_block(stmts, prog, drop_consumed):
    """Lower one straight-line block; loads are folded into their put."""
    loads = {s.result: s for s in stmts if isinstance(s, Op) and s.kind == "tma_load"}
    folded = set()
    out = []
    for s in stmts:
        if isinstance(s, Op):
            if s.kind == "tma_load":
                continue
            if s.kind == "dot":         # unpipelined dot: issue and wait at once
                out += [MmaIssue(s, SYNC_GROUP), MmaWaitGroup(group=SYNC_GROUP)]
            else:
                out.append(StoreGlobal(s) if s.kind == "store" else CudaOp(s))
        elif isinstance(s, Put):
            decl = prog.channels[s.chan]
            missing = [v for v in s.values if v not in loads]
            if missing:
                raise UnloweredAref(f"put on {decl.name} carries {missing}, not loads of the same block")
            out.append(BarWaitPhase(s.chan, EMPTY, s.it))
            out.append(BarExpectTx(s.chan, s.it, decl.slot_bytes))
            out += [TmaAsyncLoad(s.chan, s.it, i, loads[v]) for i, v in enumerate(s.values)]
            folded.update(s.values)
        elif isinstance(s, Get):
            out.append(BarWaitPhase(s.chan, FULL, s.it, s.results))
        elif isinstance(s, Consumed):
            if not drop_consumed:
                out.append(BarArrive(s.chan, s.it, 0, s.min_iter))
        elif isinstance(s, PMmaIssue):
            out.append(MmaIssue(s.op, s.group))
        elif isinstance(s, MmaWait):
            out.append(MmaWaitGroup(s.pendings, s.group))
        elif isinstance(s, Marker):
            continue
        else:
            raise UnloweredAref(f"cannot lower statement {s!r}")
    stray = set(loads) - folded
    if stray:
        raise UnloweredAref(f"loads {sorted(stray)} are not fed into any channel")
    return tuple(out)


def lower(prog: WarpSpecProgram, smem_capacity=None, drop_consumed=False, P=None) -> LoweredModule:
    """Rewrite every channel statement; no aref node survives.

    ``drop_consumed`` deletes every empty-barrier arrival (a mutation used
    to exercise deadlock detection).
    """
    base, total = smem_plan(prog.channels)
    if smem_capacity is not None and total > smem_capacity:
        raise SmemOverflow(f"slot plan needs {total} bytes of shared memory, capacity is {smem_capacity}")
    barriers = []
    for c in prog.channels:
        for s in range(c.depth):
            barriers.append(MBarrier(f"e{c.index}.{s}", c.index, s, EMPTY, 1, 1))
            barriers.append(MBarrier(f"f{c.index}.{s}", c.index, s, FULL, 1, 0))
    streams = []
    roles = {r.partition: r for r in prog.regions}
    for wg, r in enumerate(prog.regions):
        pro = _lower_block(r.prologue, prog, drop_consumed)
        loop = None
        if r.loop is not None:
            body = _lower_block(r.loop.body, prog, drop_consumed)
            loop = replace(r.loop, body=body)
        epi = _lower_block(r.epilogue, prog, drop_consumed)
        role = "producer" if len(roles) > 1 and r.partition == 0 else "consumer"
        streams.append(Stream(wg, role, pro, loop, epi))
    depth = max((c.depth for c in prog.channels if not c.once), default=1)
    meta = {"D": depth, "P": P, "consumer_wgs": 1, "persistent": False, "types": dict(prog.types)}
    return LoweredModule(prog.name, prog.params, prog.grid, prog.trip, prog.channels,
                         base, total, tuple(barriers), tuple(streams), meta)


# ----------------------------------------------------------------- listing

def format_module(mod: LoweredModule) -> str:
    out = [f"module {mod.name} grid {mod.grid} trip {mod.trip}",
           f"smem {mod.smem_bytes} bytes"]
    for c in mod.channels:
        once = " once" if c.once else ""
        bases = ", ".join(str(mod.slot_base[(c.index, s)]) for s in range(c.depth))
        out.append(f"  {c.name} depth {c.depth}{once} slot {c.slot_bytes} bytes at [{bases}]")
    for b in mod.barriers:
        out.append(f"barrier {b.name} {b.kind} threshold {b.arrival_threshold} completed {b.init_completed}")
    depth = {c.index: c.depth for c in mod.channels}
    for st in mod.streams:
        band = f" band {st.band[0]}/{st.band[1]}" if st.band else ""
        out.append(f"== WG{st.wg} == {st.role}{band}")
        ind = st.loop.induction if st.loop else "k"

        def line(i, pad):
            d = depth.get(getattr(i, "chan", None), 1)
            return pad + i.fmt(d, ind)

        out += [line(i, "  ") for i in st.prologue]
        if st.loop is not None:
            out.append("  " + format_loop_header(st.loop))
            out += [line(i, "    ") for i in st.loop.body]
            if st.loop.yields:
                out.append("    yield " + ", ".join(st.loop.yields))
            out.append("  }")
        out += [line(i, "  ") for i in st.epilogue]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------- verification

def _walk(prologue, loop, epilogue):
    for s in prologue:
        yield s, None
    if loop is not None:
        for k in range(loop.trip):
            for s in loop.body:
                yield s, k
    for s in epilogue:
        yield s, None


def slot_parity(decl, it, k):
    """(slot, parity) addressed by a channel statement at iteration k."""
    g = 0 if decl.once else it.eval(k if k is not None else 0)
    return g % decl.depth, (g // decl.depth) % 2


def _aref_multiset(prog):
    ms = Counter()
    for r in prog.regions:
        for s, k in _walk(r.prologue, r.loop, r.epilogue):
            if isinstance(s, Consumed) and s.min_iter is not None and k is not None and k < s.min_iter:
                continue
            kind = {Put: "put", Get: "get", Consumed: "consumed"}.get(type(s))
            if kind:
                ms[(s.chan, kind) + slot_parity(prog.channels[s.chan], s.it, k)] += 1
    return ms


def _lowered_multiset(mod):
    ms = Counter()
    decls = {c.index: c for c in mod.channels}
    for st in mod.streams:
        for i, k in _walk(st.prologue, st.loop, st.epilogue):
            if isinstance(i, BarArrive) and i.min_iter is not None and k is not None and k < i.min_iter:
                continue
            if isinstance(i, BarWaitPhase):
                kind = "put" if i.bar == EMPTY else "get"
            elif isinstance(i, BarArrive):
                kind = "consumed"
            else:
                continue
            ms[(i.chan, kind) + slot_parity(decls[i.chan], i.it, k)] += 1
    return ms


@dataclass
class LoweringReport:
    violations: list

    @property
    def clean(self):
        return not self.violations

    def __str__(self):
        return "clean" if self.clean else "\n".join(self.violations)


def verify_lowering(mod: LoweredModule, original: WarpSpecProgram) -> LoweringReport:
    """Check erasure, barrier allocation and wait/arrive accounting."""
    v = []
    for st in mod.streams:
        for i in st.instructions():
            if isinstance(i, (Put, Get, Consumed, Op)):
                v.append(f"WG{st.wg}: residual aref/IR node {type(i).__name__}")
    for c in mod.channels:
        n = sum(1 for b in mod.barriers if b.chan == c.index)
        if n != 2 * c.depth:
            v.append(f"{c.name}: {n} barriers, expected {2 * c.depth}")
    want, got = _aref_multiset(original), _lowered_multiset(mod)
    # cooperative replication duplicates every consumer get/consumed
    n = mod.meta.get("consumer_wgs", 1)
    if n > 1:
        want = Counter({k: c * (n if k[1] in ("get", "consumed") else 1) for k, c in want.items()})
    names = {"put": "put", "get": "get", "consumed": "consumed"}
    for key in sorted(set(want) | set(got)):
        if want[key] != got[key]:
            chan, kind, slot, par = key
            v.append(f"ch{chan} {names[kind]}-count mismatch at slot {slot} parity {par}: "
                     f"{got[key]} lowered vs {want[key]} in the program")
    return LoweringReport(v)
