"""Tile-level kernel IR: types, text format, validation and the reference interpreter."""
from .core import (
    ELEM_BYTES, PID, SCALAR, Diagnostic, KernelGraph, Loop, Op, Param,
    ScalarType, TileType, infer_types, validate,
)
from .interp import interpret_sequential
from .text import parse_kernel, print_kernel

__all__ = [
    "ELEM_BYTES", "PID", "SCALAR", "Diagnostic", "KernelGraph", "Loop", "Op",
    "Param", "ScalarType", "TileType", "infer_types", "interpret_sequential",
    "parse_kernel", "print_kernel", "validate",
]
