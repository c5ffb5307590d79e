"""Warp-specialized program IR.

A ``WarpSpecProgram`` is a set of warp-group regions that share nothing but
declared aref channels.  Each region has the kernel's prologue/loop/epilogue
shape, with channel statements (put/get/consumed) and, after pipelining,
explicit MMA issue/wait statements mixed into the op stream.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import aref
from .errors import InternalError, KernelSyntaxError, WarpSpecError
from .tile_ir.core import PID, Loop, Op, TileType
from .tile_ir.interp import exec_op, make_buffers
from .tile_ir.text import (
    ID, Lines, format_loop_header, format_op, format_params, parse_block,
    parse_header, parse_id, parse_op_line, parse_type, split_commas,
)

PRODUCER, CONSUMER = 0, 1


@dataclass(frozen=True)
class It:
    """Iteration an aref statement refers to: ``k + offset`` or an absolute index."""

    offset: int = 0
    absolute: bool = False

    def eval(self, k):
        return self.offset if self.absolute else k + self.offset

    def fmt(self, ind="k"):
        if self.absolute:
            return str(self.offset)
        if self.offset == 0:
            return ind
        sign = "+" if self.offset > 0 else "-"
        return f"({ind}{sign}{abs(self.offset)})"


K = It()


@dataclass(frozen=True)
class ChannelDecl:
    index: int
    depth: int
    payload: tuple
    once: bool = False

    @property
    def name(self):
        return f"ch{self.index}"

    @property
    def slot_bytes(self):
        return sum(t.nbytes for t in self.payload)


@dataclass(frozen=True)
class Put:
    chan: int
    it: It
    values: tuple


@dataclass(frozen=True)
class Get:
    chan: int
    it: It
    results: tuple


@dataclass(frozen=True)
class Consumed:
    chan: int
    it: It
    min_iter: Optional[int] = None


@dataclass(frozen=True)
class MmaIssue:
    op: Op
    group: str


@dataclass(frozen=True)
class MmaWait:
    pendings: Optional[int] = None
    group: Optional[str] = None


@dataclass(frozen=True)
class Marker:
    text: str


CHANNEL_STMTS = (Put, Get, Consumed)


@dataclass(frozen=True)
class Region:
    partition: int
    prologue: tuple
    loop: Optional[Loop]
    epilogue: tuple

    def statements(self):
        body = self.loop.body if self.loop else ()
        return (*self.prologue, *body, *self.epilogue)


@dataclass(frozen=True)
class WarpSpecProgram:
    name: str
    params: tuple
    grid: int
    trip: int
    channels: tuple
    regions: tuple
    types: dict = field(default_factory=dict, compare=False, hash=False)

    def region(self, partition):
        for r in self.regions:
            if r.partition == partition:
                return r
        return None

    def replace_region(self, new):
        regions = tuple(new if r.partition == new.partition else r for r in self.regions)
        return WarpSpecProgram(self.name, self.params, self.grid, self.trip,
                               self.channels, regions, self.types)


# ---------------------------------------------------------------- printing

def _slot(decl, it, ind):
    return f"{decl.name}[{it.fmt(ind)}%{decl.depth}]"


def format_stmt(s, channels, ind="k"):
    if isinstance(s, Op):
        return format_op(s)
    if isinstance(s, Put):
        return f"put {_slot(channels[s.chan], s.it, ind)} = " + ", ".join(s.values)
    if isinstance(s, Get):
        return ", ".join(s.results) + f" = get {_slot(channels[s.chan], s.it, ind)}"
    if isinstance(s, Consumed):
        guard = f" if {ind}>={s.min_iter}" if s.min_iter is not None else ""
        return f"consumed {_slot(channels[s.chan], s.it, ind)}{guard}"
    if isinstance(s, MmaIssue):
        return f"mma_issue {s.group}: {format_op(s.op)}"
    if isinstance(s, MmaWait):
        return f"mma_wait group={s.group}" if s.group is not None else f"mma_wait pendings={s.pendings}"
    if isinstance(s, Marker):
        return f"// {s.text}"
    raise TypeError(f"unknown statement {s!r}")


def print_program(prog: WarpSpecProgram) -> str:
    out = [f"program {prog.name}{format_params(prog.params, prog.grid)} {{", f"  trip {prog.trip}"]
    for c in prog.channels:
        once = " once" if c.once else ""
        out.append(f"  channel {c.name} depth {c.depth}{once} : (" + ", ".join(str(t) for t in c.payload) + ")")
    for r in prog.regions:
        out.append(f"  warp_group {r.partition} {{")
        ind = r.loop.induction if r.loop else "k"
        out += ["    " + format_stmt(s, prog.channels, ind) for s in r.prologue]
        if r.loop is not None:
            out.append("    " + format_loop_header(r.loop))
            out += ["      " + format_stmt(s, prog.channels, ind) for s in r.loop.body]
            if r.loop.yields:
                out.append("      yield " + ", ".join(r.loop.yields))
            out.append("    }")
        out += ["    " + format_stmt(s, prog.channels, ind) for s in r.epilogue]
        out.append("  }")
    out.append("}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------- parsing

_CH_RE = re.compile(r"^ch(\d+)\[(.+)%(\d+)\]$")
_IT_RE = re.compile(rf"^\(?\s*({ID})\s*(?:([+-])\s*(\d+))?\s*\)?$")


def _parse_index(text, no, col):
    m = _CH_RE.match(text.strip())
    if not m:
        raise KernelSyntaxError(f"bad channel index {text.strip()!r}", no, col)
    expr = m.group(2).strip()
    if re.match(r"^\d+$", expr):
        it = It(int(expr), True)
    else:
        im = _IT_RE.match(expr)
        if not im:
            raise KernelSyntaxError(f"bad iteration expression {expr!r}", no, col)
        off = int(im.group(3) or 0) * (-1 if im.group(2) == "-" else 1)
        it = It(off)
    return int(m.group(1)), it


def parse_stmt(text, no=None, col=None):
    if text.startswith("//"):
        return Marker(text[2:].strip())
    if text.startswith("put "):
        idx, _, vals = text[4:].partition("=")
        ch, it = _parse_index(idx, no, col)
        return Put(ch, it, tuple(parse_id(v, no, col) for v in split_commas(vals)))
    if text.startswith("consumed "):
        rest = text[len("consumed "):]
        min_iter = None
        if " if " in rest:
            rest, guard = rest.split(" if ", 1)
            gm = re.match(rf"^{ID}\s*>=\s*(\d+)$", guard.strip())
            if not gm:
                raise KernelSyntaxError(f"bad guard {guard!r}", no, col)
            min_iter = int(gm.group(1))
        ch, it = _parse_index(rest, no, col)
        return Consumed(ch, it, min_iter)
    if text.startswith("mma_issue "):
        group, _, op = text[len("mma_issue "):].partition(":")
        return MmaIssue(parse_op_line(op.strip(), no, col), group.strip())
    if text.startswith("mma_wait "):
        key, _, val = text[len("mma_wait "):].partition("=")
        if key.strip() == "group":
            return MmaWait(group=val.strip())
        return MmaWait(pendings=int(val))
    if "= get " in text:
        lhs, rhs = text.split("= get ", 1)
        ch, it = _parse_index(rhs, no, col)
        return Get(ch, it, tuple(parse_id(r, no, col) for r in split_commas(lhs)))
    return parse_op_line(text, no, col)


def parse_program(text: str) -> WarpSpecProgram:
    lines = Lines(text, keep_markers=True)
    name, params, grid = parse_header(lines, "program")
    trip, channels, regions = 0, [], []
    while True:
        no, col, t = lines.next()
        if t == "}":
            break
        if t.startswith("trip "):
            trip = int(t[5:])
        elif t.startswith("channel "):
            m = re.match(r"^channel\s+ch(\d+)\s+depth\s+(\d+)\s*(once)?\s*:\s*\((.*)\)$", t)
            if not m:
                raise KernelSyntaxError(f"bad channel declaration {t!r}", no, col)
            payload = tuple(parse_type(p, no, col) for p in split_commas(m.group(4)))
            channels.append(ChannelDecl(int(m.group(1)), int(m.group(2)), payload, bool(m.group(3))))
        elif t.startswith("warp_group"):
            m = re.match(r"^warp_group\s+(\d+)\s*\{$", t)
            if not m:
                raise KernelSyntaxError(f"bad warp_group header {t!r}", no, col)
            pro, loop, epi = parse_block(lines, parse_stmt)
            regions.append(Region(int(m.group(1)), pro, loop, epi))
        else:
            raise KernelSyntaxError(f"unexpected {t!r}", no, col)
    return WarpSpecProgram(name, params, grid, trip, tuple(channels), tuple(regions))


# --------------------------------------------------------------- execution

def unroll(prologue, loop, epilogue):
    """Flatten a region into ('stmt', s, k) / ('enter'|'iter'|'yield', loop, k) events."""
    for s in prologue:
        yield "stmt", s, None
    if loop is not None:
        yield "enter", loop, None
        for k in range(loop.trip):
            yield "iter", loop, k
            for s in loop.body:
                yield "stmt", s, k
            yield "yield", loop, k
    for s in epilogue:
        yield "stmt", s, None


def bind_loop_event(tag, loop, k, env):
    if tag == "enter":
        for name, init in loop.iter_args:
            env[name] = env[init]
    elif tag == "iter":
        env[loop.induction] = k
    elif tag == "yield":
        new = [env[y] for y in loop.yields]
        for name, v in zip(loop.arg_names, new):
            env[name] = v


def stmt_iteration(s, k, decl, tile=0, trip=0):
    """Global iteration index addressed by a channel statement."""
    if decl.once:
        return tile
    return tile * trip + s.it.eval(k if k is not None else 0)


class CoDeadlock(WarpSpecError):
    module = "partitioner"


@dataclass
class CoRunStats:
    max_lead: dict = field(default_factory=dict)
    puts: dict = field(default_factory=dict)
    gets: dict = field(default_factory=dict)
    consumes: dict = field(default_factory=dict)


def co_interpret(prog: WarpSpecProgram, inputs, tiles=None, stats=None):
    """Interleave all regions under blocking aref semantics.

    Lowest-indexed region that can make progress runs one statement at a
    time.  Returns the global buffers; raises ``CoDeadlock`` when every
    unfinished region is blocked.
    """
    bufs = make_buffers(prog, inputs)
    stats = stats if stats is not None else CoRunStats()
    for pid in (range(prog.grid) if tiles is None else tiles):
        chans = [aref.ArefChannel(c.depth, c.payload, c.name) for c in prog.channels]
        agents = []
        for r in prog.regions:
            events = list(unroll(r.prologue, r.loop, r.epilogue))
            agents.append({"events": events, "pc": 0, "env": {PID: pid}})
        while True:
            live = [a for a in agents if a["pc"] < len(a["events"])]
            if not live:
                break
            for a in live:
                if _co_step(a, chans, prog, bufs, stats):
                    break
            else:
                where = []
                for i, a in enumerate(agents):
                    if a["pc"] < len(a["events"]):
                        tag, s, k = a["events"][a["pc"]]
                        where.append(f"WG{i} at {format_stmt(s, prog.channels)} (k={k})")
                raise CoDeadlock("deadlock: " + "; ".join(where))
    return bufs


def _co_step(agent, chans, prog, bufs, stats):
    tag, s, k = agent["events"][agent["pc"]]
    env = agent["env"]
    if tag != "stmt":
        bind_loop_event(tag, s, k, env)
    elif isinstance(s, Op):
        exec_op(s, env, bufs)
    elif isinstance(s, MmaIssue):
        exec_op(s.op, env, bufs)
    elif isinstance(s, (MmaWait, Marker)):
        pass
    else:
        decl = prog.channels[s.chan]
        ch = chans[s.chan]
        it = 0 if decl.once else s.it.eval(k if k is not None else 0)
        try:
            if isinstance(s, Put):
                ch.put(it, tuple(env[v] for v in s.values), aref.BLOCKING)
                stats.puts[s.chan] = stats.puts.get(s.chan, 0) + 1
                stats.max_lead[s.chan] = max(stats.max_lead.get(s.chan, 0), ch.lead)
                if ch.lead > decl.depth:
                    raise InternalError(f"{decl.name}: producer lead {ch.lead} exceeds depth")
            elif isinstance(s, Get):
                vals = ch.get(it, aref.BLOCKING)
                for name, v in zip(s.results, vals):
                    env[name] = v
                stats.gets[s.chan] = stats.gets.get(s.chan, 0) + 1
            elif isinstance(s, Consumed):
                if s.min_iter is None or k is None or k >= s.min_iter:
                    ch.consumed(it)
                    stats.consumes[s.chan] = stats.consumes.get(s.chan, 0) + 1
        except aref.WouldBlock:
            return False
    agent["pc"] += 1
    return True


def region_defs(region):
    """Names defined inside a region (ops, gets, loop variables)."""
    defs = {PID}
    for s in region.statements():
        if isinstance(s, Op):
            defs.update(s.results)
        elif isinstance(s, MmaIssue):
            defs.update(s.op.results)
        elif isinstance(s, Get):
            defs.update(s.results)
    if region.loop is not None:
        defs.add(region.loop.induction)
        defs.update(region.loop.arg_names)
    return defs


def region_uses(region):
    uses = set()
    for s in region.statements():
        if isinstance(s, Op):
            uses.update(s.value_operands())
        elif isinstance(s, MmaIssue):
            uses.update(s.op.value_operands())
        elif isinstance(s, Put):
            uses.update(s.values)
    if region.loop is not None:
        uses.update(i for _, i in region.loop.iter_args)
        uses.update(region.loop.yields)
    return uses


def cross_region_edges(prog: WarpSpecProgram):
    """Values used in a region but defined only elsewhere; empty after a clean cut."""
    bad = []
    for r in prog.regions:
        missing = region_uses(r) - region_defs(r)
        bad += [(r.partition, name) for name in sorted(missing)]
    return bad


def payload_types(values, types):
    return tuple(types[v] for v in values)


def is_tile(t):
    return isinstance(t, TileType)
