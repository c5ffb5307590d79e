"""Deterministic discrete-event execution of lowered modules.

One global clock.  At each instant the lowest-indexed runnable warp group
executes one instruction; asynchronous work (TMA copies, MMAs) completes
through a time-ordered event queue.  A CTA deadlocks when no agent can run
and no event is pending while some agent is unfinished.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InternalError, SmemOverflow
from ..lowering import (
    EMPTY, FULL, BarArrive, BarExpectTx, BarWaitPhase, CtaSync, CudaOp,
    LoweredModule, MmaIssue, MmaWaitGroup, StoreGlobal, TmaAsyncLoad,
    WorkLoopNext,
)
from ..program import bind_loop_event, unroll
from ..tile_ir.core import PID
from ..tile_ir.interp import compute, load_block, make_buffers, store_block
from .machine import MachineConfig

COMPLETED, DEADLOCK, RACE = "Completed", "Deadlock", "RaceDetected"
TMA, TENSOR, CUDA = "TMA", "TensorCore", "CudaCore"
UNITS = (TMA, TENSOR, CUDA)


@dataclass(frozen=True)
class Interval:
    unit: str
    wg: int
    start: int
    end: int
    label: str
    sm: int = 0
    lane: int = 0


@dataclass
class SimTrace:
    intervals: list = field(default_factory=list)
    events: list = field(default_factory=list)
    cycles: int = 0
    num_sms: int = 1
    launches: list = field(default_factory=list)    # (sm, launch start cycle)


@dataclass(frozen=True)
class BlockedAgent:
    wg: int
    instr: str
    on: str
    barrier: Optional[str] = None
    want: Optional[int] = None
    at: Optional[int] = None

    def __str__(self):
        if self.barrier is not None:
            return f"WG{self.wg} blocked on {self.barrier} want parity {self.want}, at phase {self.at} ({self.instr})"
        return f"WG{self.wg} blocked on {self.on} ({self.instr})"


@dataclass
class DeadlockReport:
    blocked: list
    cycle: int
    sm: int = 0

    def __str__(self):
        return f"deadlock at cycle {self.cycle}: " + "; ".join(str(b) for b in self.blocked)


@dataclass
class SimResult:
    outputs: Optional[dict]
    cycles: int
    trace: SimTrace
    verdict: str
    deadlock: Optional[DeadlockReport] = None
    race: Optional[str] = None

    @property
    def ok(self):
        return self.verdict == COMPLETED


class _Race(Exception):
    pass


class _Future:
    __slots__ = ("value", "done", "shape")

    def __init__(self, shape):
        self.value, self.done, self.shape = None, False, shape


@dataclass(frozen=True)
class SlotRef:
    chan: int
    slot: int
    member: int
    gen: int


class _Slot:
    def __init__(self, arity):
        self.members = [None] * arity
        self.gen = None
        self.writing = 0
        self.holders = set()


class _Bar:
    def __init__(self, spec):
        self.spec = spec
        self.completed = spec.init_completed
        self.arrivals = 0
        self.expected = 0
        self.tx = 0

    def try_complete(self):
        if self.arrivals >= self.spec.arrival_threshold and self.tx >= self.expected:
            self.completed += 1
            self.arrivals -= self.spec.arrival_threshold
            self.expected = self.tx = 0

    def passed(self, parity):
        return self.completed % 2 != parity

    @property
    def phase(self):
        """Parity of the last completed phase (-1 counts as parity 1)."""
        return (self.completed - 1) % 2


class _Agent:
    def __init__(self, idx, stream, events):
        self.idx = idx
        self.stream = stream
        self.events = events
        self.cur = next(events, None)
        self.env = {}
        self.ordinal = 0
        self.ready_at = 0
        self.blocked = None
        self.pending = []           # (group key, future)
        self.joins = 0
        self.join_target = None
        self.last_engine = 0

    @property
    def done(self):
        return self.cur is None


def _agent_events(stream, pids):
    for ordinal, pid in enumerate(pids):
        yield "tile", (ordinal, pid), None
        yield from unroll(stream.prologue, stream.loop, stream.epilogue)


class _Cta:
    def __init__(self, mod: LoweredModule, mc: MachineConfig, bufs, pids, t0=0, sm=0, trace=None):
        self.mod, self.mc, self.bufs = mod, mc, bufs
        self.now = t0
        self.sm = sm
        self.trace = trace if trace is not None else SimTrace()
        self.decls = {c.index: c for c in mod.channels}
        self.slots = {(c.index, s): _Slot(len(c.payload)) for c in mod.channels for s in range(c.depth)}
        self.bars = {(b.chan, b.slot, b.kind): _Bar(b) for b in mod.barriers}
        self.agents = [_Agent(i, st, _agent_events(st, pids)) for i, st in enumerate(mod.streams)]
        for a in self.agents:
            a.ready_at = t0
        self.heap = []
        self.seq = 0
        self.tma_free = [t0] * mc.tma_engine_count
        self.tc_free = t0
        self.cuda_free = t0
        self.end = t0

    # ---------------------------------------------------------- plumbing
    def at(self, t, fn):
        heapq.heappush(self.heap, (t, self.seq, fn))
        self.seq += 1

    def interval(self, unit, wg, start, end, label, lane=0):
        self.trace.intervals.append(Interval(unit, wg, start, end, label, self.sm, lane))
        self.end = max(self.end, end)

    def note(self, kind, a, what):
        self.trace.events.append({"t": self.now, "sm": self.sm, "wg": a.idx, "kind": kind, "on": what})

    def iteration(self, a, instr, k):
        decl = self.decls[instr.chan]
        g = a.ordinal if decl.once else a.ordinal * self.mod.trip + instr.it.eval(k if k is not None else 0)
        return g, g % decl.depth, (g // decl.depth) % 2

    def resolve(self, a, name, raw):
        v = raw
        if isinstance(v, _Future):
            if not v.done:
                raise InternalError(f"WG{a.idx} read {name!r} before its MMA completed")
            v = v.value
        if isinstance(v, SlotRef):
            slot = self.slots[(v.chan, v.slot)]
            if slot.gen != v.gen or slot.writing:
                raise _Race(f"WG{a.idx} read {name!r} from ch{v.chan} slot {v.slot} "
                            f"after it was refilled (wanted generation {v.gen}, slot holds {slot.gen})")
            v = slot.members[v.member]
            if a.stream.band and name in a.stream.banded:
                b, n = a.stream.band
                step = v.shape[0] // n
                v = v[b * step:(b + 1) * step]
        return v

    def value(self, a, o):
        if isinstance(o, int):
            return o
        return self.resolve(a, o, a.env[o])

    # -------------------------------------------------------------- loop
    def run(self):
        while True:
            while self.heap and self.heap[0][0] <= self.now:
                _, _, fn = heapq.heappop(self.heap)
                fn()
            a = self.pick()
            if a is not None:
                self.step(a)
                continue
            times = [x.ready_at for x in self.agents if not x.done]
            if self.heap:
                times.append(self.heap[0][0])
            times = [t for t in times if t > self.now]
            if not times:
                if all(x.done for x in self.agents):
                    self.end = max(self.end, self.now)
                    return self.end
                return self.deadlock()
            self.now = min(times)

    def pick(self):
        for a in self.agents:
            if a.done or a.ready_at > self.now:
                continue
            if a.blocked is not None:
                if not self.satisfied(a, a.blocked):
                    continue
                self.note("unblock", a, a.blocked[-1])
                a.blocked = None
            return a
        return None

    def satisfied(self, a, cond):
        kind = cond[0]
        if kind == "bar":
            return self.bars[cond[1]].passed(cond[2])
        if kind == "mma":
            return self.mma_ready(a, cond[1])
        if kind == "join":
            return all(x.done or x.joins >= cond[1] for x in self.agents)
        raise InternalError(f"unknown block condition {cond!r}")

    def block(self, a, cond):
        a.blocked = cond
        self.note("block", a, cond[-1])

    def advance(self, a, cost=1):
        a.ready_at = self.now + cost
        a.cur = next(a.events, None)
        if a.cur is None:
            self.end = max(self.end, a.ready_at)

    # -------------------------------------------------------------- step
    def step(self, a):
        tag, s, k = a.cur
        if tag == "tile":
            a.ordinal, pid = s
            a.env = {PID: pid}
            a.pending = []
            return self.advance(a, 0)
        if tag != "stmt":
            bind_loop_event(tag, s, k, a.env)
            return self.advance(a, 0)
        handler = getattr(self, "do_" + type(s).__name__, None)
        if handler is None:
            raise InternalError(f"simulator cannot execute {s!r}")
        handler(a, s, k)

    def do_CudaOp(self, a, ins, k):
        op = ins.op
        vals = [self.value(a, o) for o in op.operands]
        band = a.stream.band if (a.stream.band and op.result in a.stream.banded) else None
        out = compute(op, vals, band)
        a.env[op.result] = out
        if isinstance(out, np.ndarray):
            start = max(self.now, self.cuda_free)
            end = start + self.mc.cuda_cycles(out.size)
            self.cuda_free = end
            self.interval(CUDA, a.idx, start, end, op.result)
            a.ready_at = end
            a.cur = next(a.events, None)
            self.end = max(self.end, end)
            return
        self.advance(a)

    def do_MmaIssue(self, a, ins, k):
        op = ins.op
        raw = [a.env[o] if isinstance(o, str) else o for o in op.operands]
        shapes = []
        for name, r in zip(op.operands, raw):
            if isinstance(r, _Future):
                shapes.append(r.shape)
            else:
                shapes.append(np.shape(self.resolve(a, name, r)))
        (m, kk), ysh = shapes[0], shapes[1]
        n = ysh[0] if op.attrs.get("transb") else ysh[1]
        fut = _Future((m, n))
        start = max(self.now + 1, self.tc_free)
        end = start + self.mc.mma_cycles(m, n, kk)
        self.tc_free = end
        key = (ins.group, a.ordinal, k)
        a.pending.append((key, fut))
        a.env[op.result] = fut

        def complete():
            vals = [self.resolve(a, name, r) for name, r in zip(op.operands, raw)]
            fut.value = compute(op, vals)
            fut.done = True
            a.pending[:] = [p for p in a.pending if p[1] is not fut]

        self.at(end, complete)
        self.interval(TENSOR, a.idx, start, end, f"{ins.group}:{op.result}")
        self.advance(a)

    def mma_ready(self, a, ins):
        if ins.group is not None:
            return not any(key[0] == ins.group for key, _ in a.pending)
        return len({key for key, _ in a.pending}) <= ins.pendings

    def do_MmaWaitGroup(self, a, ins, k):
        if self.mma_ready(a, ins):
            return self.advance(a)
        self.block(a, ("mma", ins, f"mma_wait {ins.group or ins.pendings}"))

    def do_BarWaitPhase(self, a, ins, k):
        g, slot, parity = self.iteration(a, ins, k)
        key = (ins.chan, slot, ins.bar)
        if not self.bars[key].passed(parity):
            return self.block(a, ("bar", key, parity, f"{self.bars[key].spec.name} parity {parity}"))
        if ins.bar == FULL and ins.binds:
            mem = self.slots[(ins.chan, slot)]
            if mem.gen != g or mem.writing:
                raise _Race(f"WG{a.idx} acquired ch{ins.chan} slot {slot} for iteration {g} "
                            f"but it holds iteration {mem.gen}")
            mem.holders.add(a.idx)
            for i, name in enumerate(ins.binds):
                a.env[name] = SlotRef(ins.chan, slot, i, g)
        self.advance(a)

    def do_BarExpectTx(self, a, ins, k):
        _, slot, _ = self.iteration(a, ins, k)
        bar = self.bars[(ins.chan, slot, FULL)]
        bar.arrivals += 1
        bar.expected += ins.tx_bytes
        bar.try_complete()
        self.advance(a)

    def do_TmaAsyncLoad(self, a, ins, k):
        g, slot, _ = self.iteration(a, ins, k)
        op = ins.op
        r, c = (self.value(a, o) for o in op.operands)
        ttype = op.attrs["type"]
        data = load_block(self.bufs[op.attrs["src"]], r, c, ttype)
        if ins.member == 0:
            lane = min(range(len(self.tma_free)), key=lambda i: (self.tma_free[i], i))
        else:
            lane = a.last_engine        # members of one put form one tuple transfer
        a.last_engine = lane
        start = max(self.now, self.tma_free[lane])
        end = start + self.mc.tma_cycles(ttype.elems)
        self.tma_free[lane] = end
        mem = self.slots[(ins.chan, slot)]
        bar = self.bars[(ins.chan, slot, FULL)]

        def begin():
            if mem.holders:
                raise _Race(f"TMA write into ch{ins.chan} slot {slot} (iteration {g}) while "
                            f"WG{sorted(mem.holders)} still hold it")
            mem.writing += 1
            mem.gen = g

        def finish():
            mem.members[ins.member] = data
            mem.writing -= 1
            bar.tx += ttype.nbytes
            bar.try_complete()

        self.at(start, begin)
        self.at(end, finish)
        self.interval(TMA, a.idx, start, end, f"ch{ins.chan}[{g}].{ins.member}", lane)
        self.advance(a)

    def do_BarArrive(self, a, ins, k):
        if ins.min_iter is not None and k is not None and k < ins.min_iter:
            return self.advance(a, 0)
        _, slot, _ = self.iteration(a, ins, k)
        bar = self.bars[(ins.chan, slot, EMPTY)]
        self.slots[(ins.chan, slot)].holders.discard(a.idx)
        bar.arrivals += 1
        bar.try_complete()
        self.advance(a)

    def do_StoreGlobal(self, a, ins, k):
        op = ins.op
        r, c, v = (self.value(a, o) for o in op.operands)
        if a.stream.band and op.operands[2] in a.stream.banded:
            r += a.stream.band[0] * v.shape[0]
        store_block(self.bufs[op.attrs["dst"]], r, c, v)
        lane = min(range(len(self.tma_free)), key=lambda i: (self.tma_free[i], i))
        start = max(self.now, self.tma_free[lane])
        end = start + self.mc.store_cycles(np.size(v))
        self.tma_free[lane] = end
        self.interval(TMA, a.idx, start, end, f"store {op.attrs['dst']}", lane)
        a.ready_at = end
        a.cur = next(a.events, None)
        self.end = max(self.end, end)

    def _join(self, a, ins, k):
        if a.join_target is None:
            a.joins += 1
            a.join_target = a.joins
        if self.satisfied(a, ("join", a.join_target)):
            a.join_target = None
            return self.advance(a, 0)
        self.block(a, ("join", a.join_target, ins.fmt(1, "k")))

    do_CtaSync = _join
    do_WorkLoopNext = _join

    # ---------------------------------------------------------- deadlock
    def deadlock(self):
        blocked = []
        for a in self.agents:
            if a.done:
                continue
            tag, s, k = a.cur
            instr = s.fmt(self.decls[s.chan].depth if hasattr(s, "chan") else 1, "k") if tag == "stmt" else tag
            if a.blocked and a.blocked[0] == "bar":
                bar = self.bars[a.blocked[1]]
                blocked.append(BlockedAgent(a.idx, instr, "barrier", bar.spec.name, a.blocked[2], bar.phase))
            else:
                blocked.append(BlockedAgent(a.idx, instr, a.blocked[-1] if a.blocked else "nothing"))
        raise _Deadlock(DeadlockReport(blocked, self.now, self.sm))


class _Deadlock(Exception):
    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


def detect_deadlock(cta: _Cta):
    """Report for a quiescent CTA, or None when every agent finished."""
    if all(a.done for a in cta.agents):
        return None
    try:
        cta.deadlock()
    except _Deadlock as d:
        return d.report


def cta_schedule(mod: LoweredModule, mc: MachineConfig, tiles=None):
    """[(sm, [pid, ...])] in launch order; persistent CTAs take a strided share."""
    if tiles is None:
        tiles = mod.meta.get("queue") or range(mod.grid)
    queue = list(tiles)
    if mod.meta.get("persistent"):
        n = min(mc.num_sms, len(queue))
        return [(s, queue[s::mc.num_sms]) for s in range(n)]
    return [(i % mc.num_sms, [t]) for i, t in enumerate(queue)]


def simulate(mod: LoweredModule, mc: MachineConfig, inputs, tiles=None) -> SimResult:
    """Run every CTA of the grid; SMs run their CTAs back to back."""
    if mod.smem_bytes > mc.smem_bytes:
        raise SmemOverflow(f"slot plan needs {mod.smem_bytes} bytes of shared memory, machine has {mc.smem_bytes}")
    bufs = make_buffers(mod, inputs)
    trace = SimTrace(num_sms=mc.num_sms)
    sm_time = {}
    for sm, pids in cta_schedule(mod, mc, tiles):
        trace.launches.append((sm, sm_time.get(sm, 0)))
        t0 = sm_time.get(sm, 0) + mc.cta_launch_overhead
        cta = _Cta(mod, mc, bufs, pids, t0, sm, trace)
        try:
            sm_time[sm] = cta.run()
        except _Deadlock as d:
            trace.cycles = cta.now
            return SimResult(None, cta.now, trace, DEADLOCK, deadlock=d.report)
        except _Race as r:
            trace.cycles = cta.now
            return SimResult(None, cta.now, trace, RACE, race=str(r))
    cycles = max(sm_time.values(), default=0)
    trace.cycles = cycles
    trace.num_sms = max(1, len(sm_time))
    return SimResult(bufs, cycles, trace, COMPLETED)
