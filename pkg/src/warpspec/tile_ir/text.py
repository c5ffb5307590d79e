"""Line-oriented textual kernel format: canonical printer and parser."""
from __future__ import annotations

import ast
import re

from ..errors import KernelSyntaxError, KernelTypeError
from .core import KernelGraph, Loop, Op, Param, TileType, validate

ID = r"[A-Za-z_][A-Za-z0-9_.]*"
_ID_RE = re.compile(rf"^{ID}$")
_INT_RE = re.compile(r"^-?\d+$")
_TYPE_RE = re.compile(r"^(\d+)\s*x\s*(\d+)\s+(\w+)$")


# ---------------------------------------------------------------- printing

def fmt_operand(o):
    return str(o)


def fmt_value(v):
    if isinstance(v, tuple):
        return "[" + ", ".join(fmt_value(x) for x in v) + "]"
    return repr(v) if isinstance(v, float) else str(v)


def format_op(op: Op) -> str:
    k, a = op.kind, op.attrs
    lhs = ", ".join(op.results) + " = " if op.results else ""
    ops = ", ".join(fmt_operand(o) for o in op.operands)
    if k == "const":
        v = a["value"]
        if a.get("type") is None:
            return f"{lhs}const {v}"
        return f"{lhs}const {fmt_value(v)} : {a['type']}"
    if k == "idx":
        return f"{lhs}idx {a['fn']} {ops}"
    if k == "tma_load":
        r, c = op.operands
        return f"{lhs}tma_load {a['src']}[{r}, {c}] : {a['type']}"
    if k == "dot":
        x, y, acc = op.operands
        tail = ", transb" if a.get("transb") else ""
        return f"{lhs}dot {x}, {y}, acc={acc}{tail}"
    if k == "ew":
        return f"{lhs}ew {a['fn']} {ops}"
    if k == "reduce":
        return f"{lhs}reduce {a['fn']} {op.operands[0]} axis={a['axis']}"
    if k == "store":
        r, c, v = op.operands
        return f"store {a['dst']}[{r}, {c}] = {v}"
    raise ValueError(f"cannot print op kind {k!r}")


def format_loop_header(loop: Loop) -> str:
    head = f"loop {loop.induction} in 0..{loop.trip}"
    if loop.iter_args:
        head += " iter (" + ", ".join(f"{n} = {i}" for n, i in loop.iter_args) + ")"
    return head + " {"


def format_params(params, grid):
    ps = ", ".join(f"{p.name}: buf<{p.type.rows}x{p.type.cols} {p.type.elem}>" for p in params)
    return f"({ps})" + (f" grid {grid}" if grid != 1 else "")


def print_kernel(graph: KernelGraph) -> str:
    out = [f"kernel {graph.name}{format_params(graph.params, graph.grid)} {{"]
    out += ["  " + format_op(op) for op in graph.prologue]
    if graph.loop is not None:
        loop = graph.loop
        out.append("  " + format_loop_header(loop))
        out += ["    " + format_op(op) for op in loop.body]
        if loop.yields:
            out.append("    yield " + ", ".join(loop.yields))
        out.append("  }")
    out += ["  " + format_op(op) for op in graph.epilogue]
    out.append("}")
    return "\n".join(out) + "\n"


# ----------------------------------------------------------------- parsing

class Lines:
    """Comment-stripped, non-empty source lines with 1-based line numbers."""

    def __init__(self, text, keep_markers=False):
        self.items = []
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0]
            if not keep_markers:
                line = line.split("//", 1)[0]
            line = line.strip()
            if line:
                col = len(raw) - len(raw.lstrip()) + 1
                self.items.append((no, col, line))
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else None

    def next(self):
        item = self.peek()
        if item is None:
            last = self.items[-1][0] if self.items else 1
            raise KernelSyntaxError("unexpected end of input", last)
        self.pos += 1
        return item


def parse_type(s, line=None, col=None):
    m = _TYPE_RE.match(s.strip())
    if not m:
        raise KernelSyntaxError(f"bad tile type {s.strip()!r}", line, col)
    try:
        return TileType(int(m.group(1)), int(m.group(2)), m.group(3))
    except ValueError as e:
        raise KernelSyntaxError(str(e), line, col) from None


def parse_operand(s, line=None, col=None):
    s = s.strip()
    if _INT_RE.match(s):
        return int(s)
    if _ID_RE.match(s):
        return s
    raise KernelSyntaxError(f"bad operand {s!r}", line, col)


def parse_id(s, line=None, col=None):
    s = s.strip()
    if not _ID_RE.match(s):
        raise KernelSyntaxError(f"bad identifier {s!r}", line, col)
    return s


def split_commas(s):
    return [p.strip() for p in s.split(",")] if s.strip() else []


def _literal(s, line, col):
    try:
        v = ast.literal_eval(s)
    except (ValueError, SyntaxError):
        raise KernelSyntaxError(f"bad literal {s!r}", line, col) from None

    def freeze(x):
        if isinstance(x, list):
            return tuple(freeze(e) for e in x)
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise KernelSyntaxError(f"bad literal element {x!r}", line, col)
        return x

    return freeze(v)


_ADDR_RE = re.compile(rf"^({ID})\s*\[(.*)\]$")


def _addr(s, line, col):
    m = _ADDR_RE.match(s.strip())
    if not m:
        raise KernelSyntaxError(f"expected buf[row, col], got {s.strip()!r}", line, col)
    parts = split_commas(m.group(2))
    if len(parts) != 2:
        raise KernelSyntaxError("addresses take exactly two offsets", line, col)
    return m.group(1), tuple(parse_operand(p, line, col) for p in parts)


def parse_op_line(text, line=None, col=None) -> Op:
    """Parse one op statement (not loop/yield/braces)."""
    if text.startswith("store "):
        body = text[len("store "):]
        if "=" not in body:
            raise KernelSyntaxError("store needs '= value'", line, col)
        addr, val = body.rsplit("=", 1)
        dst, offs = _addr(addr, line, col)
        return Op("store", (), (*offs, parse_operand(val, line, col)), {"dst": dst})
    if "=" not in text:
        raise KernelSyntaxError(f"expected assignment, got {text!r}", line, col)
    lhs, rhs = text.split("=", 1)
    results = tuple(parse_id(r, line, col) for r in split_commas(lhs))
    rhs = rhs.strip()
    kind, _, rest = rhs.partition(" ")
    rest = rest.strip()
    if len(results) != 1:
        raise KernelSyntaxError("ops define exactly one value", line, col)
    if kind == "const":
        if ":" in rest:
            lit, ty = rest.rsplit(":", 1)
            ttype = parse_type(ty, line, col)
            lit = lit.strip()
            value = "zeros" if lit == "zeros" else _literal(lit, line, col)
            if value != "zeros":
                _check_literal_shape(value, ttype, line, col)
            return Op("const", results, (), {"value": value, "type": ttype})
        if not _INT_RE.match(rest):
            raise KernelSyntaxError(f"scalar constants must be integers, got {rest!r}", line, col)
        return Op("const", results, (), {"value": int(rest), "type": None})
    if kind == "idx":
        fn, _, ops = rest.partition(" ")
        return Op("idx", results, tuple(parse_operand(o, line, col) for o in split_commas(ops)), {"fn": fn})
    if kind == "tma_load":
        if ":" not in rest:
            raise KernelSyntaxError("tma_load needs a result type", line, col)
        addr, ty = rest.rsplit(":", 1)
        src, offs = _addr(addr, line, col)
        return Op("tma_load", results, offs, {"src": src, "type": parse_type(ty, line, col)})
    if kind == "dot":
        parts = split_commas(rest)
        transb = False
        if parts and parts[-1] == "transb":
            transb = True
            parts = parts[:-1]
        if len(parts) != 3 or not parts[2].startswith("acc="):
            raise KernelSyntaxError("dot syntax is: dot a, b, acc=c[, transb]", line, col)
        a, b = (parse_operand(p, line, col) for p in parts[:2])
        acc = parse_operand(parts[2][4:], line, col)
        return Op("dot", results, (a, b, acc), {"transb": transb})
    if kind == "ew":
        fn, _, ops = rest.partition(" ")
        return Op("ew", results, tuple(parse_operand(o, line, col) for o in split_commas(ops)), {"fn": fn})
    if kind == "reduce":
        m = re.match(rf"^(\w+)\s+({ID})\s+axis\s*=\s*(-?\d+)$", rest)
        if not m:
            raise KernelSyntaxError("reduce syntax is: reduce <fn> <id> axis=<0|1>", line, col)
        return Op("reduce", results, (m.group(2),), {"fn": m.group(1), "axis": int(m.group(3))})
    raise KernelSyntaxError(f"unknown op {kind!r}", line, col)


def _check_literal_shape(value, ttype, line, col):
    ok = (isinstance(value, tuple) and len(value) == ttype.rows
          and all(isinstance(r, tuple) and len(r) == ttype.cols for r in value))
    if not ok:
        raise KernelSyntaxError(f"literal does not have shape {ttype.rows}x{ttype.cols}", line, col)


_LOOP_RE = re.compile(rf"^loop\s+({ID})\s+in\s+0\s*\.\.\s*(-?\d+)\s*(?:iter\s*\((.*)\))?\s*\{{$")
_HEADER_RE = re.compile(rf"^(kernel|program)\s+({ID})\s*\((.*)\)\s*(?:grid\s+(\d+))?\s*\{{$")
_PARAM_RE = re.compile(rf"^({ID})\s*:\s*buf\s*<(.*)>$")


def parse_header(lines: Lines, keyword):
    no, col, text = lines.next()
    m = _HEADER_RE.match(text)
    if not m or m.group(1) != keyword:
        raise KernelSyntaxError(f"expected '{keyword} <name>(...) {{'", no, col)
    params = []
    for p in split_commas(m.group(3)):
        pm = _PARAM_RE.match(p)
        if not pm:
            raise KernelSyntaxError(f"bad parameter {p!r}", no, col)
        params.append(Param(pm.group(1), parse_type(pm.group(2), no, col)))
    grid = int(m.group(4)) if m.group(4) else 1
    if grid < 1:
        raise KernelSyntaxError("grid must be positive", no, col)
    return m.group(2), tuple(params), grid


def parse_loop_header(text, no, col):
    m = _LOOP_RE.match(text)
    if not m:
        raise KernelSyntaxError("bad loop header; expected 'loop k in 0..N iter (x = init, ...) {'", no, col)
    iter_args = []
    for part in split_commas(m.group(3) or ""):
        if "=" not in part:
            raise KernelSyntaxError(f"bad iter arg {part!r}", no, col)
        n, i = part.split("=", 1)
        iter_args.append((parse_id(n, no, col), parse_id(i, no, col)))
    return m.group(1), int(m.group(2)), tuple(iter_args)


def parse_block(lines: Lines, parse_stmt, allow_loop=True):
    """Parse statements up to the closing brace.

    Returns (prologue, loop, epilogue); ``parse_stmt`` turns a line into a
    statement.  Only one loop per block; nesting is rejected.
    """
    pro, epi, loop = [], [], None
    cur = pro
    while True:
        no, col, text = lines.next()
        if text == "}":
            return tuple(pro), loop, tuple(epi)
        if text.startswith("loop"):
            if not allow_loop:
                raise KernelSyntaxError("nested loops are not supported", no, col)
            if loop is not None:
                raise KernelSyntaxError("only one loop region is supported", no, col)
            ind, trip, iter_args = parse_loop_header(text, no, col)
            body, yields = [], ()
            while True:
                bno, bcol, btext = lines.next()
                if btext == "}":
                    break
                if btext.startswith("loop"):
                    raise KernelSyntaxError("nested loops are not supported", bno, bcol)
                if btext.startswith("yield"):
                    yields = tuple(parse_id(y, bno, bcol) for y in split_commas(btext[5:]))
                    continue
                body.append(parse_stmt(btext, bno, bcol))
            loop = Loop(ind, trip, iter_args, tuple(body), yields)
            cur = epi
            continue
        cur.append(parse_stmt(text, no, col))


def parse_kernel(text: str, check=True) -> KernelGraph:
    """Parse kernel source; raises KernelSyntaxError / KernelTypeError."""
    lines = Lines(text)
    name, params, grid = parse_header(lines, "kernel")
    pro, loop, epi = parse_block(lines, parse_op_line)
    extra = lines.peek()
    if extra is not None:
        raise KernelSyntaxError(f"trailing input {extra[2]!r}", extra[0], extra[1])
    graph = KernelGraph(name, params, pro, loop, epi, grid)
    if check:
        diags = validate(graph)
        if diags:
            raise KernelTypeError(diags)
    return graph
