"""Task-aware partitioning into a producer (load) and consumer (compute) warp group."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from .errors import UnsupportedKernel
from .program import (
    CONSUMER, PRODUCER, ChannelDecl, Consumed, Get, It, Put, Region,
    WarpSpecProgram,
)
from .tile_ir.core import PID, KernelGraph, Loop, infer_types

TILE_KINDS = ("dot", "ew", "reduce", "store")


class Tag(str, Enum):
    ITER = "IterationStmt"
    TILE = "TileStmt"


@dataclass
class PartitionTag:
    tags: dict                      # op key -> Tag
    placement: dict                 # op key -> frozenset of partitions
    arg_needs: dict                 # iter arg -> set of partitions
    duplicated: set = field(default_factory=set)

    def partition_of(self, key):
        return PRODUCER if self.tags[key] is Tag.ITER else CONSUMER


@dataclass(frozen=True)
class ChannelSpec:
    loads: tuple        # load result names, in program order
    consumer: str       # key of the first tile statement reading the payload
    depth: int
    once: bool = False  # prologue/epilogue load, transferred once per tile

    @property
    def arity(self):
        return len(self.loads)


def op_keys(graph: KernelGraph):
    """Stable key per op: its result name, or store#n for stores."""
    keys, n = {}, 0
    for _, ops in graph.sections():
        for op in ops:
            if op.results:
                keys[id(op)] = op.results[0]
            else:
                keys[id(op)] = f"store#{n}"
                n += 1
    return keys


def _defs(graph):
    d = {}
    for section, ops in graph.sections():
        for op in ops:
            for r in op.results:
                d[r] = (section, op)
    return d


def annotate(graph: KernelGraph, roles=None) -> PartitionTag:
    """Tag every op by backward traversal from loads and tile sinks.

    ``roles`` maps op kinds to partitions; only the Hopper split (loads on
    the producer, everything else on the consumer) is supported.
    """
    if roles is not None and any(
        (k == "tma_load") != (p == PRODUCER) for k, p in roles.items()
    ):
        raise UnsupportedKernel("only the two-role load/compute split is supported")
    keys = op_keys(graph)
    defs = _defs(graph)
    loop = graph.loop
    args = {n: (init, y) for (n, init), y in zip(loop.iter_args, loop.yields)} if loop else {}
    placement = defaultdict(set)
    arg_needs = defaultdict(set)
    work = []

    def need(name, part, via_yield=False):
        if not isinstance(name, str) or name == PID or (loop and name == loop.induction):
            return
        if name in args:
            if part not in arg_needs[name]:
                arg_needs[name].add(part)
                init, y = args[name]
                work.append((init, part, False))
                work.append((y, part, True))
            return
        work.append((name, part, via_yield))

    for _, ops in graph.sections():
        for op in ops:
            if op.kind == "tma_load":
                placement[keys[id(op)]].add(PRODUCER)
                for o in op.operands:
                    need(o, PRODUCER)
            elif op.kind in TILE_KINDS:
                placement[keys[id(op)]].add(CONSUMER)
                for o in op.operands:
                    need(o, CONSUMER)

    while work:
        name, part, via_yield = work.pop()
        if name not in defs:
            continue
        section, op = defs[name]
        if op.kind == "tma_load":
            if part == PRODUCER:
                raise UnsupportedKernel(f"tile {name!r} feeds address computation")
            if via_yield and section == "body":
                raise UnsupportedKernel(f"loaded tile {name!r} is loop-carried; it would outlive its aref slot")
            continue
        if op.kind in TILE_KINDS:
            if part == PRODUCER:
                raise UnsupportedKernel(f"tile statement {name!r} is required by address computation")
            continue
        key = keys[id(op)]
        if part not in placement[key]:
            placement[key].add(part)
            for o in op.operands:
                need(o, part)

    tags, final = {}, {}
    for _, ops in graph.sections():
        for op in ops:
            key = keys[id(op)]
            where = frozenset(placement.get(key, ()))
            if op.kind == "tma_load":
                tags[key] = Tag.ITER
            elif where == {PRODUCER}:
                tags[key] = Tag.ITER
            else:
                tags[key] = Tag.TILE
                if not where:
                    where = frozenset({CONSUMER})   # dead pure code stays with the consumer
            final[key] = where
    for n in args:
        key = f"yield:{n}"
        needs = arg_needs.get(n, set())
        tags[key] = Tag.ITER if needs == {PRODUCER} else Tag.TILE
        final[key] = frozenset(needs)
    dup = {k for k, w in final.items() if w == {PRODUCER, CONSUMER}}
    return PartitionTag(tags, final, {n: set(v) for n, v in arg_needs.items()}, dup)


def _users(graph):
    """name -> list of (section, position, op) in program order."""
    users = defaultdict(list)
    for section, ops in graph.sections():
        for i, op in enumerate(ops):
            for o in op.value_operands():
                users[o].append((section, i, op))
    return users


def plan_channels(graph: KernelGraph, tags: PartitionTag, depth=2):
    """Group cut loads into channels: loads feeding the same dot share one."""
    if depth < 1:
        raise ValueError("channel depth must be positive")
    keys = op_keys(graph)
    users = _users(graph)
    specs, groups = [], {}
    for section, ops in graph.sections():
        for op in ops:
            if op.kind != "tma_load":
                continue
            tile_users = [u for u in users.get(op.result, []) if u[2].kind in TILE_KINDS]
            if not tile_users:
                continue    # dead load: nothing to transfer
            if section == "epilogue" and any(u[0] != "epilogue" for u in tile_users):
                raise UnsupportedKernel(f"epilogue load {op.result!r} used before it is loaded")
            first = tile_users[0][2]
            once = section != "body"
            gkey = (section, keys[id(first)]) if first.kind == "dot" else (section, op.result)
            if gkey in groups:
                groups[gkey].append(op.result)
            else:
                groups[gkey] = [op.result]
                specs.append((gkey, keys[id(first)], once))
    return [ChannelSpec(tuple(groups[g]), cons, 1 if once else depth, once) for g, cons, once in specs]


def _build(graph, types, specs, place, produce, consume, args_for):
    """Assemble one region.

    ``place(op)`` says whether a non-load op belongs here; ``produce`` emits
    loads and puts, ``consume`` emits gets and consumed.
    """
    member = {}
    for ci, spec in enumerate(specs):
        for m in spec.loads:
            member[m] = ci
    loop = graph.loop

    def last_body_use():
        last = {}
        for i, op in enumerate(loop.body if loop else ()):
            if place(op):
                for o in op.value_operands():
                    if o in member and not specs[member[o]].once:
                        last[member[o]] = i
        return last

    def emit(ops, section, got, last=None):
        out = []
        for i, op in enumerate(ops):
            if op.kind == "tma_load":
                ci = member.get(op.result)
                if ci is None or not produce:
                    continue
                out.append(op)
                spec = specs[ci]
                if op.result == spec.loads[-1]:
                    it = It(0, True) if spec.once else It()
                    out.append(Put(ci, it, spec.loads))
                    if consume:
                        out.append(Get(ci, it, spec.loads))
                        got.add(ci)
                continue
            if not place(op):
                continue
            if consume:
                for o in op.value_operands():
                    ci = member.get(o)
                    if ci is not None and ci not in got:
                        spec = specs[ci]
                        out.append(Get(ci, It(0, True) if spec.once else It(), spec.loads))
                        got.add(ci)
            out.append(op)
            if consume and last is not None:
                for ci, li in last.items():
                    if li == i:
                        out.append(Consumed(ci, It()))
        return out

    once_got = set()
    pro = emit(graph.prologue, "prologue", once_got)
    if consume and loop is not None:
        # prologue-loaded tiles read inside the loop are fetched before it
        for ci, spec in enumerate(specs):
            if spec.once and ci not in once_got and spec.loads[0] in {o.result for o in graph.prologue}:
                pro.append(Get(ci, It(0, True), spec.loads))
                once_got.add(ci)
    rloop = None
    if loop is not None:
        body = emit(loop.body, "body", set(once_got), last_body_use() if consume else None)
        names = args_for(loop)
        iter_args = tuple((n, i) for n, i in loop.iter_args if n in names)
        yields = tuple(y for (n, _), y in zip(loop.iter_args, loop.yields) if n in names)
        if body or iter_args:
            rloop = Loop(loop.induction, loop.trip, iter_args, tuple(body), yields)
    epi = emit(graph.epilogue, "epilogue", once_got)
    if consume:
        epi += [Consumed(ci, It(0, True)) for ci, s in enumerate(specs) if s.once and ci in once_got]
    return tuple(pro), rloop, tuple(epi)


def _decls(specs, types):
    return tuple(
        ChannelDecl(i, s.depth, tuple(types[m] for m in s.loads), s.once)
        for i, s in enumerate(specs)
    )


def distribute(graph: KernelGraph, tags: PartitionTag, specs) -> WarpSpecProgram:
    """Clone the loop per partition and connect the halves through channels."""
    types, _ = infer_types(graph)
    keys = op_keys(graph)

    def placed(part):
        return lambda op: part in tags.placement[keys[id(op)]]

    def args(part):
        return lambda loop: {n for n in loop.arg_names if part in tags.arg_needs.get(n, ())}

    regions = []
    pro, loop, epi = _build(graph, types, specs, placed(PRODUCER), True, False, args(PRODUCER))
    if pro or loop or epi:
        regions.append(Region(PRODUCER, pro, loop, epi))
    pro, loop, epi = _build(graph, types, specs, placed(CONSUMER), False, True, args(CONSUMER))
    regions.append(Region(CONSUMER, pro, loop, epi))
    return WarpSpecProgram(graph.name, graph.params, graph.grid, graph.trip,
                           _decls(specs, types), tuple(regions), types)


def sequential_program(graph: KernelGraph) -> WarpSpecProgram:
    """Unspecialized baseline: one warp group loads, waits and computes in order."""
    types, _ = infer_types(graph)
    tags = annotate(graph)
    specs = plan_channels(graph, tags, depth=1)
    pro, loop, epi = _build(
        graph, types, specs, lambda op: True, True, True,
        lambda lp: set(lp.arg_names),
    )
    region = Region(PRODUCER, pro, loop, epi)
    return WarpSpecProgram(graph.name, graph.params, graph.grid, graph.trip,
                           _decls(specs, types), (region,), types)


def partition(graph: KernelGraph, depth=2) -> WarpSpecProgram:
    tags = annotate(graph)
    return distribute(graph, tags, plan_channels(graph, tags, depth))
