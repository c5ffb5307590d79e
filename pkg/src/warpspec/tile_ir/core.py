from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

ELEM_KINDS = ("int", "real")
ELEM_BYTES = {"int": 4, "real": 8}

# Scalar name bound by the runtime to the flat tile index.
PID = "pid"

OP_KINDS = ("const", "idx", "tma_load", "dot", "ew", "reduce", "store")
IDX_FNS = ("add", "sub", "mul", "div", "mod", "min", "max")
EW_ARITY = {
    "add": 2, "sub": 2, "mul": 2, "max": 2, "min": 2,
    "neg": 1, "relu": 1, "abs": 1, "exp": 1,
}
REDUCE_FNS = ("sum", "max", "min")


@dataclass(frozen=True)
class TileType:
    rows: int
    cols: int
    elem: str

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"tile dims must be positive, got {self.rows}x{self.cols}")
        if self.elem not in ELEM_KINDS:
            raise ValueError(f"unknown element kind {self.elem!r}")

    @property
    def elems(self):
        return self.rows * self.cols

    @property
    def nbytes(self):
        return self.elems * ELEM_BYTES[self.elem]

    def __str__(self):
        return f"{self.rows}x{self.cols} {self.elem}"


@dataclass(frozen=True)
class ScalarType:
    def __str__(self):
        return "index"


SCALAR = ScalarType()
Type = Union[TileType, ScalarType]
Operand = Union[str, int]


@dataclass(frozen=True)
class Param:
    name: str
    type: TileType


@dataclass(frozen=True)
class Op:
    """One IR operation.

    Operand layout per kind:
      const     ()                 attrs: value ('zeros' | int | float | nested tuple), type
      idx       (a, b)             attrs: fn
      tma_load  (row, col)         attrs: src, type
      dot       (a, b, acc)        attrs: transb
      ew        (x, ...)           attrs: fn
      reduce    (x,)               attrs: fn, axis
      store     (row, col, value)  attrs: dst
    """

    kind: str
    results: tuple
    operands: tuple
    attrs: dict = field(default_factory=dict, compare=True, hash=False)

    @property
    def result(self):
        return self.results[0] if self.results else None

    def value_operands(self):
        """Operands that name SSA values (integer literals excluded)."""
        return [o for o in self.operands if isinstance(o, str)]

    @property
    def is_async_capable(self):
        return self.kind == "dot"


@dataclass(frozen=True)
class Loop:
    """Counted loop ``for induction in 0..trip``.

    ``iter_args`` are (name, init) pairs.  Inside the body a name denotes the
    current iteration's value; after the loop it denotes the final value.
    The body element type is generic so region and lowered streams reuse it.
    """

    induction: str
    trip: int
    iter_args: tuple
    body: tuple
    yields: tuple

    @property
    def arg_names(self):
        return tuple(n for n, _ in self.iter_args)


@dataclass(frozen=True)
class KernelGraph:
    name: str
    params: tuple
    prologue: tuple
    loop: Optional[Loop]
    epilogue: tuple
    grid: int = 1

    def param(self, name):
        for p in self.params:
            if p.name == name:
                return p
        return None

    @property
    def trip(self):
        return self.loop.trip if self.loop else 0

    def all_ops(self):
        body = self.loop.body if self.loop else ()
        return (*self.prologue, *body, *self.epilogue)

    def sections(self):
        """Yield (section, ops) for prologue/body/epilogue."""
        yield "prologue", self.prologue
        yield "body", self.loop.body if self.loop else ()
        yield "epilogue", self.epilogue


@dataclass(frozen=True)
class Diagnostic:
    op: str
    message: str

    def __str__(self):
        return f"{self.op}: {self.message}"


def op_label(op):
    if op.results:
        return op.results[0]
    if op.kind == "store":
        return f"store {op.attrs.get('dst')}[{op.operands[0]}, {op.operands[1]}]"
    return op.kind


def broadcast(a: TileType, b: TileType):
    rows = _bdim(a.rows, b.rows)
    cols = _bdim(a.cols, b.cols)
    if rows is None or cols is None:
        return None
    return TileType(rows, cols, a.elem)


def _bdim(x, y):
    if x == y or y == 1:
        return x
    if x == 1:
        return y
    return None


def infer_types(graph: KernelGraph):
    """Return (types, diagnostics).  ``types`` maps every defined name."""
    types = {PID: SCALAR}
    diags = []
    buffers = {p.name: p.type for p in graph.params}

    def check_defs(op, scope):
        ok = True
        for o in op.value_operands():
            if o not in scope:
                diags.append(Diagnostic(op_label(op), f"use of undefined value {o!r}"))
                ok = False
        return ok

    def define(op, names, ty, scope):
        for n in names:
            if n in types or n in buffers:
                diags.append(Diagnostic(op_label(op), f"redefinition of {n!r}"))
            types[n] = ty
            scope.add(n)

    def run(ops, scope):
        for op in ops:
            if not check_defs(op, scope):
                for n in op.results:
                    scope.add(n)
                continue
            ty = _op_type(op, types, buffers, diags)
            if op.results:
                define(op, op.results, ty, scope)

    scope = {PID}
    run(graph.prologue, scope)
    outer = set(scope)
    loop = graph.loop
    if loop is not None:
        if loop.trip < 0:
            diags.append(Diagnostic("loop", f"negative trip count {loop.trip}"))
        inner = set(scope)
        types[loop.induction] = SCALAR
        inner.add(loop.induction)
        for name, init in loop.iter_args:
            if init not in scope:
                diags.append(Diagnostic("loop", f"iter arg {name!r} initialised from undefined {init!r}"))
                ity = None
            else:
                ity = types.get(init)
            if name in types:
                diags.append(Diagnostic("loop", f"redefinition of {name!r}"))
            types[name] = ity
            inner.add(name)
        run(loop.body, inner)
        if len(loop.yields) != len(loop.iter_args):
            diags.append(Diagnostic("yield", f"{len(loop.yields)} yields for {len(loop.iter_args)} iter args"))
        else:
            for (name, _), y in zip(loop.iter_args, loop.yields):
                if y not in inner:
                    diags.append(Diagnostic("yield", f"use of undefined value {y!r}"))
                elif types.get(y) != types.get(name):
                    diags.append(Diagnostic("yield", f"yield {y!r} : {types.get(y)} does not match iter arg {name!r} : {types.get(name)}"))
        outer |= set(loop.arg_names)
    run(graph.epilogue, outer)
    return types, diags


def _op_type(op, types, buffers, diags):
    label = op_label(op)

    def err(msg):
        diags.append(Diagnostic(label, msg))

    def ty(o):
        return SCALAR if isinstance(o, int) else types.get(o)

    k = op.kind
    if k == "const":
        return op.attrs.get("type") or SCALAR
    if k == "idx":
        if op.attrs.get("fn") not in IDX_FNS:
            err(f"unknown index function {op.attrs.get('fn')!r}")
        if len(op.operands) != 2:
            err("idx takes two operands")
        for o in op.operands:
            if ty(o) != SCALAR:
                err(f"idx operand {o!r} is not scalar")
        return SCALAR
    if k == "tma_load":
        src = op.attrs.get("src")
        rtype = op.attrs["type"]
        if src not in buffers:
            err(f"tma_load from unknown buffer {src!r}")
        elif buffers[src].elem != rtype.elem:
            err(f"tma_load element kind {rtype.elem} differs from buffer {src} ({buffers[src].elem})")
        for o in op.operands:
            if ty(o) != SCALAR:
                err(f"tma_load offset {o!r} is not scalar")
        return rtype
    if k == "dot":
        if len(op.operands) != 3:
            err("dot takes a, b and acc")
            return None
        a, b, acc = (ty(o) for o in op.operands)
        if not all(isinstance(t, TileType) for t in (a, b, acc)):
            err("dot operands must be tiles")
            return None
        bk, bn = (b.cols, b.rows) if op.attrs.get("transb") else (b.rows, b.cols)
        if a.cols != bk:
            err(f"dot inner dimensions differ: {a.rows}x{a.cols} times {bk}x{bn}")
        if not (a.elem == b.elem == acc.elem):
            err("dot element kinds differ")
        if (acc.rows, acc.cols) != (a.rows, bn):
            err(f"dot accumulator {acc.rows}x{acc.cols} does not match output {a.rows}x{bn}")
        return TileType(a.rows, bn, acc.elem)
    if k == "ew":
        fn = op.attrs.get("fn")
        if fn not in EW_ARITY:
            err(f"unknown elementwise function {fn!r}")
            return None
        if len(op.operands) != EW_ARITY[fn]:
            err(f"ew {fn} takes {EW_ARITY[fn]} operand(s), got {len(op.operands)}")
            return None
        tys = [ty(o) for o in op.operands]
        if not all(isinstance(t, TileType) for t in tys):
            err("ew operands must be tiles")
            return None
        if len({t.elem for t in tys}) != 1:
            err("ew element kinds differ")
        if fn == "exp" and tys[0].elem != "real":
            err("exp requires real tiles")
        out = tys[0]
        for t in tys[1:]:
            out = broadcast(out, t)
            if out is None:
                err("ew operand shapes are not broadcast-compatible")
                return None
        return out
    if k == "reduce":
        t = ty(op.operands[0]) if op.operands else None
        if not isinstance(t, TileType):
            err("reduce operand must be a tile")
            return None
        if op.attrs.get("fn") not in REDUCE_FNS:
            err(f"unknown reduction {op.attrs.get('fn')!r}")
        axis = op.attrs.get("axis")
        if axis not in (0, 1):
            err(f"reduce axis must be 0 or 1, got {axis!r}")
            return None
        return TileType(1, t.cols, t.elem) if axis == 0 else TileType(t.rows, 1, t.elem)
    if k == "store":
        dst = op.attrs.get("dst")
        r, c, v = op.operands
        for o in (r, c):
            if ty(o) != SCALAR:
                err(f"store offset {o!r} is not scalar")
        vt = ty(v)
        if dst not in buffers:
            err(f"store to unknown buffer {dst!r}")
        elif not isinstance(vt, TileType):
            err(f"stored value {v!r} is not a tile")
        elif vt.elem != buffers[dst].elem:
            err(f"store element kind {vt.elem} differs from buffer {dst}")
        return None
    err(f"unknown op kind {k!r}")
    return None


def validate(graph: KernelGraph):
    """Diagnostics for every violated type/SSA invariant; empty when valid."""
    return infer_types(graph)[1]
