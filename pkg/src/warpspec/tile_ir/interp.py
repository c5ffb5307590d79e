"""Sequential reference interpreter; the oracle for every transformation."""
from __future__ import annotations

import numpy as np

from ..errors import KernelRuntimeError
from .core import PID, KernelGraph, TileType

DTYPES = {"int": np.int64, "real": np.float64}


def make_tile(ttype: TileType, value):
    if isinstance(value, str) and value == "zeros":
        return np.zeros((ttype.rows, ttype.cols), dtype=DTYPES[ttype.elem])
    return np.array(value, dtype=DTYPES[ttype.elem]).reshape(ttype.rows, ttype.cols)


def idx_apply(fn, a, b):
    if fn == "add":
        return a + b
    if fn == "sub":
        return a - b
    if fn == "mul":
        return a * b
    if fn in ("div", "mod"):
        if b == 0:
            raise KernelRuntimeError(f"index {fn} by zero")
        return a // b if fn == "div" else a % b
    if fn == "min":
        return min(a, b)
    if fn == "max":
        return max(a, b)
    raise KernelRuntimeError(f"unknown index function {fn}")


_EW = {
    "add": np.add, "sub": np.subtract, "mul": np.multiply,
    "max": np.maximum, "min": np.minimum, "neg": np.negative,
    "abs": np.abs, "exp": np.exp,
    "relu": lambda x: np.maximum(x, 0),
}
_RED = {"sum": np.sum, "max": np.max, "min": np.min}


def load_block(buf: np.ndarray, row, col, ttype: TileType):
    """Read a rows x cols block at (row, col); out-of-bounds reads are zero."""
    out = np.zeros((ttype.rows, ttype.cols), dtype=DTYPES[ttype.elem])
    r0, c0 = max(row, 0), max(col, 0)
    r1, c1 = min(row + ttype.rows, buf.shape[0]), min(col + ttype.cols, buf.shape[1])
    if r1 > r0 and c1 > c0:
        out[r0 - row:r1 - row, c0 - col:c1 - col] = buf[r0:r1, c0:c1]
    return out


def store_block(buf: np.ndarray, row, col, tile):
    """Write ``tile`` at (row, col); out-of-bounds parts are dropped."""
    rows, cols = tile.shape
    r0, c0 = max(row, 0), max(col, 0)
    r1, c1 = min(row + rows, buf.shape[0]), min(col + cols, buf.shape[1])
    if r1 > r0 and c1 > c0:
        buf[r0:r1, c0:c1] = tile[r0 - row:r1 - row, c0 - col:c1 - col]


def compute(op, vals, band=None):
    """Value of a pure op given its operand values (no buffer access).

    ``band`` = (index, count) slices tile constants to a row band; used by
    cooperative consumer warp groups.
    """
    k, a = op.kind, op.attrs
    if k == "const":
        if a.get("type") is None:
            return a["value"]
        tile = make_tile(a["type"], a["value"])
        return band_rows(tile, band) if band else tile
    if k == "idx":
        return idx_apply(a["fn"], *vals)
    if k == "dot":
        x, y, acc = vals
        if a.get("transb"):
            y = y.T
        return acc + x @ y
    if k == "ew":
        return _EW[a["fn"]](*vals)
    if k == "reduce":
        return _RED[a["fn"]](vals[0], axis=a["axis"], keepdims=True)
    raise KernelRuntimeError(f"op kind {k} is not pure")


def band_rows(tile, band):
    b, n = band
    step = tile.shape[0] // n
    return tile[b * step:(b + 1) * step]


def make_buffers(graph: KernelGraph, inputs):
    bufs = {}
    for p in graph.params:
        shape = (p.type.rows, p.type.cols)
        if p.name in inputs:
            arr = np.asarray(inputs[p.name])
            if arr.shape != shape:
                raise KernelRuntimeError(f"input {p.name} has shape {arr.shape}, expected {shape}")
            bufs[p.name] = arr.astype(DTYPES[p.type.elem], copy=True)
        else:
            bufs[p.name] = np.zeros(shape, dtype=DTYPES[p.type.elem])
    unknown = set(inputs) - set(bufs)
    if unknown:
        raise KernelRuntimeError(f"unknown input buffers {sorted(unknown)}")
    return bufs


def exec_op(op, env, bufs):
    """Execute ``op`` against ``env`` (name -> value) and global buffers."""
    def get(o):
        return o if isinstance(o, int) else env[o]

    if op.kind == "tma_load":
        r, c = (get(o) for o in op.operands)
        env[op.result] = load_block(bufs[op.attrs["src"]], r, c, op.attrs["type"])
    elif op.kind == "store":
        r, c, v = (get(o) for o in op.operands)
        store_block(bufs[op.attrs["dst"]], r, c, v)
    else:
        env[op.result] = compute(op, [get(o) for o in op.operands])


def run_tile(graph: KernelGraph, bufs, pid):
    env = {PID: pid}
    for op in graph.prologue:
        exec_op(op, env, bufs)
    loop = graph.loop
    if loop is not None:
        for name, init in loop.iter_args:
            env[name] = env[init]
        for k in range(loop.trip):
            env[loop.induction] = k
            for op in loop.body:
                exec_op(op, env, bufs)
            new = [env[y] for y in loop.yields]
            for (name, _), v in zip(loop.iter_args, new):
                env[name] = v
    for op in graph.epilogue:
        exec_op(op, env, bufs)


def interpret_sequential(graph: KernelGraph, inputs, tiles=None):
    """Run every tile of the grid in order; returns all buffers by name."""
    bufs = make_buffers(graph, inputs)
    for pid in (range(graph.grid) if tiles is None else tiles):
        run_tile(graph, bufs, pid)
    return bufs
