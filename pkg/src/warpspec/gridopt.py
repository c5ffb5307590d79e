"""Cooperative consumer warp groups and persistent CTAs."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import IndivisibleTile, RegisterBudgetExceeded, UnsupportedKernel
from .lowering import (
    EMPTY, BarWaitPhase, CtaSync, CudaOp, LoweredModule, MmaIssue,
    StoreGlobal, Stream, WorkLoopNext,
)
from .tile_ir.core import ELEM_BYTES, TileType


@dataclass(frozen=True)
class CooperativeConfig:
    num_consumer_wgs: int = 1
    split_axis: str = "rows"

    def __post_init__(self):
        if self.num_consumer_wgs < 1:
            raise IndivisibleTile("need at least one consumer warp group")
        if self.split_axis != "rows":
            raise IndivisibleTile("only row-band splits are supported")


@dataclass
class WorkQueue:
    """Row-major queue of output tiles; each tile is handed out once."""

    tiles: tuple
    next: int = 0
    taken: list = field(default_factory=list)

    @classmethod
    def of(cls, n):
        return cls(tuple(range(n)))

    def take(self):
        if self.next >= len(self.tiles):
            return None
        t = self.tiles[self.next]
        self.next += 1
        self.taken.append(t)
        return t

    def __len__(self):
        return len(self.tiles)

    def assignment(self, num_sms):
        """Static round-robin: resident CTA s takes every num_sms-th tile."""
        share = [[] for _ in range(min(num_sms, len(self.tiles)))]
        i = 0
        while (t := self.take()) is not None:
            share[i % len(share)].append(t)
            i += 1
        return share


def _type(types, name):
    if name in types:
        return types[name]
    return types.get(name.rsplit(".", 1)[0])


def _walk(stream):
    yield from stream.prologue
    if stream.loop is not None:
        yield from stream.loop.body
    yield from stream.epilogue


def band_analysis(stream: Stream, types):
    """Names that each consumer holds as a row band of the full tile.

    Backward from stores: stored tiles are banded; a banded dot needs a
    banded lhs and accumulator and the full rhs; ew operands with the
    result's row count follow the result; reduce along rows (axis=1)
    passes banding through, along columns it cannot.
    """
    defs = {}
    for ins in _walk(stream):
        if isinstance(ins, (CudaOp, MmaIssue)):
            for r in ins.op.results:
                defs[r] = ins.op
    carried = {}
    if stream.loop is not None:
        for (name, init), y in zip(stream.loop.iter_args, stream.loop.yields):
            carried[name] = (init, y)

    banded, full = set(), set()
    work = []

    def mark(name, want_band):
        if not isinstance(name, str):
            return
        t = _type(types, name)
        if not isinstance(t, TileType):
            return
        if want_band:
            if name in full:
                raise IndivisibleTile(f"{name!r} is needed both as a row band and as a full tile")
            if name not in banded:
                banded.add(name)
                work.append((name, True))
        else:
            if name in banded:
                raise IndivisibleTile(f"{name!r} is needed both as a row band and as a full tile")
            if name not in full:
                full.add(name)
                work.append((name, False))

    for ins in _walk(stream):
        if isinstance(ins, StoreGlobal):
            mark(ins.op.operands[2], True)

    while work:
        name, band = work.pop()
        if name in carried:
            for o in carried[name]:
                mark(o, band)
        op = defs.get(name)
        if op is None:
            continue
        if not band:
            for o in op.value_operands():
                mark(o, False)
        elif op.kind == "dot":
            x, y, acc = op.operands
            mark(x, True)
            mark(y, False)
            mark(acc, True)
        elif op.kind == "ew":
            rows = _type(types, name).rows
            for o in op.value_operands():
                t = _type(types, o)
                mark(o, isinstance(t, TileType) and t.rows == rows and rows > 1)
        elif op.kind == "reduce":
            if op.attrs["axis"] == 0:
                raise IndivisibleTile(f"{name!r} reduces across rows; a row band cannot compute it")
            mark(op.operands[0], True)
    # yields of carried banded values are banded too (loop-carried bands)
    for name, (init, y) in carried.items():
        if name in banded and y not in banded:
            raise IndivisibleTile(f"loop-carried {name!r} mixes banded and full values")
    return frozenset(banded)


def _consumer(mod):
    cons = [s for s in mod.streams if s.role == "consumer"]
    if len(cons) != 1 or len(mod.streams) < 2:
        raise UnsupportedKernel("cooperative mode needs exactly one producer and one consumer warp group")
    return cons[0]


def apply_cooperative(mod: LoweredModule, cc: CooperativeConfig) -> LoweredModule:
    """Replicate the consumer into row-band copies that share every slot."""
    n = cc.num_consumer_wgs
    if n == 1:
        return mod.with_streams(mod.streams, consumer_wgs=1)
    cons = _consumer(mod)
    types = mod.meta.get("types", {})
    banded = band_analysis(cons, types)
    for name in sorted(banded):
        t = _type(types, name)
        if t.rows % n:
            raise IndivisibleTile(f"{name!r} has {t.rows} rows, not divisible by {n} consumer warp groups")
    streams = [s for s in mod.streams if s.role != "consumer"]
    base = len(streams)
    streams += [replace(cons, wg=base + i, band=(i, n), banded=banded) for i in range(n)]
    barriers = tuple(replace(b, arrival_threshold=n) if b.kind == EMPTY else b for b in mod.barriers)
    out = replace(mod, barriers=barriers)
    return out.with_streams(streams, consumer_wgs=n)


def register_estimate(mod: LoweredModule, mc):
    """Per-consumer-WG registers: accumulator bytes split across consumers plus overhead."""
    types = mod.meta.get("types", {})
    n = mod.meta.get("consumer_wgs", 1)
    acc = 0
    for s in mod.streams:
        if s.role != "consumer" or s.loop is None:
            continue
        acc = max(acc, sum(
            _type(types, name).elems * ELEM_BYTES[_type(types, name).elem]
            for name in s.loop.arg_names if isinstance(_type(types, name), TileType)))
        break
    else:
        # unrolled (coarse) consumers: count the tiles the final epilogue stores
        for s in mod.streams:
            if s.role == "consumer":
                for ins in _walk(s):
                    if isinstance(ins, StoreGlobal):
                        t = _type(types, ins.op.operands[2])
                        if isinstance(t, TileType):
                            acc += t.elems * ELEM_BYTES[t.elem]
                break
    return -(-acc // n) + mc.reg_overhead


def check_registers(mod: LoweredModule, mc):
    need = register_estimate(mod, mc)
    if need > mc.regs_per_wg:
        n = mod.meta.get("consumer_wgs", 1)
        raise RegisterBudgetExceeded(
            f"consumer warp group needs ~{need} registers (over {n} WG(s)), budget is {mc.regs_per_wg}")
    return need


def apply_persistent(mod: LoweredModule, mc=None, tiles: WorkQueue = None) -> LoweredModule:
    """Resident CTAs loop over the work queue.

    Every stream joins a CTA-wide barrier before its epilogue and again at
    the end of each tile (work_loop_next), so per-tile execution matches the
    non-persistent CTA while launch overhead is paid once per resident CTA.
    """
    if mod.meta.get("persistent"):
        return mod
    streams = [replace(s, epilogue=(CtaSync(), *s.epilogue, WorkLoopNext())) for s in mod.streams]
    queue = tuple(tiles.tiles) if tiles is not None else tuple(range(mod.grid))
    return mod.with_streams(streams, persistent=True, queue=queue)


def launch_overhead(mod: LoweredModule, mc, tiles=None):
    """Cycles spent launching CTAs under the model (one launch per CTA)."""
    n = len(mod.meta.get("queue", ())) if tiles is None and mod.meta.get("queue") else (
        mod.grid if tiles is None else len(tiles))
    ctas = min(mc.num_sms, n) if mod.meta.get("persistent") else n
    return ctas * mc.cta_launch_overhead


def full_waits(stream):
    return [i for i in _walk(stream) if isinstance(i, BarWaitPhase) and i.bar != EMPTY]
