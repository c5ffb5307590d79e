import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpspec.partitioner import Tag, annotate, distribute, partition, plan_channels
from warpspec.program import (
    CONSUMER, PRODUCER, Consumed, Get, Put, CoRunStats, co_interpret, cross_region_edges,
    parse_program, print_program,
)
from warpspec.randgen import random_kernel_text
from warpspec.tile_ir import interpret_sequential, parse_kernel

from conftest import load, rand_inputs, same

NO_LOAD = """
kernel fill(c: buf<4x4 int>) grid 1 {
  zero = const 0
  acc0 = const zeros : 4x4 int
  one = const [[1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1], [1, 1, 1, 1]] : 4x4 int
  loop k in 0..3 iter (acc = acc0) {
    acc1 = ew add acc, one
    yield acc1
  }
  store c[zero, zero] = acc
}
"""

THREE_LOADS = """
kernel two_dots(a: buf<4x4 int>, b: buf<4x4 int>, e: buf<4x4 int>, c: buf<4x4 int>) grid 1 {
  zero = const 0
  acc0 = const zeros : 4x4 int
  loop k in 0..2 iter (acc = acc0) {
    x = tma_load a[zero, zero] : 4x4 int
    y = tma_load b[zero, zero] : 4x4 int
    z = tma_load e[zero, zero] : 4x4 int
    t = dot x, y, acc=acc0
    acc1 = dot t, z, acc=acc
    yield acc1
  }
  store c[zero, zero] = acc
}
"""


def test_gemm_tags(gemm):
    t = annotate(gemm)
    for k in ("o_am", "o_bn", "x", "y", "o_k1", "yield:o_k"):
        assert t.tags[k] is Tag.ITER, k
    for k in ("acc1", "yield:acc", "store#0", "o_cm", "o_cn"):
        assert t.tags[k] is Tag.TILE, k


def test_shared_pure_scalars_are_duplicated(gemm):
    t = annotate(gemm)
    assert {"pm", "pn"} <= t.duplicated
    assert t.placement["pm"] == frozenset({PRODUCER, CONSUMER})


def test_no_load_kernel_is_all_tile(gemm):
    g = parse_kernel(NO_LOAD)
    t = annotate(g)
    assert all(v is Tag.TILE for v in t.tags.values())
    prog = partition(g)
    assert prog.channels == () and len(prog.regions) == 1
    assert prog.regions[0].partition == CONSUMER


def test_attention_tags(attention):
    t = annotate(attention)
    assert t.tags["kt"] is Tag.ITER and t.tags["vt"] is Tag.ITER
    for k in ("s", "mx", "p", "m1", "acc1"):
        assert t.tags[k] is Tag.TILE


def test_gemm_single_pair_channel(gemm):
    specs = plan_channels(gemm, annotate(gemm), 2)
    assert len(specs) == 1
    assert specs[0].loads == ("x", "y") and specs[0].arity == 2 and specs[0].depth == 2


def test_distinct_dots_get_distinct_channels(attention):
    specs = plan_channels(attention, annotate(attention), 3)
    body = [s for s in specs if not s.once]
    assert [s.loads for s in body] == [("kt",), ("vt",)]
    assert all(s.depth == 3 for s in body)


def test_three_loads_two_dots():
    g = parse_kernel(THREE_LOADS)
    specs = plan_channels(g, annotate(g), 2)
    assert sorted(s.arity for s in specs) == [1, 2]


def test_gemm_program_shape(gemm):
    prog = partition(gemm, 2)
    prod, cons = prog.region(PRODUCER), prog.region(CONSUMER)
    assert [type(s).__name__ for s in prod.loop.body if isinstance(s, (Put, Get, Consumed))] == ["Put"]
    kinds = [type(s).__name__ if not hasattr(s, "kind") else s.kind for s in cons.loop.body]
    assert kinds == ["Get", "dot", "Consumed"]
    assert prod.loop.trip == cons.loop.trip == gemm.loop.trip
    assert prod.loop.arg_names == ("o_k",) and cons.loop.arg_names == ("acc",)
    assert any(getattr(s, "kind", None) == "store" for s in cons.epilogue)
    assert cross_region_edges(prog) == []


def test_program_text_round_trip(attention):
    prog = partition(attention, 2)
    text = print_program(prog)
    assert "warp_group 0 {" in text and "put ch" in text and "consumed ch" in text
    assert print_program(parse_program(text)) == text


@pytest.mark.parametrize("name", ["gemm.k", "attention.k", "gemm_batched.k"])
@pytest.mark.parametrize("D", [1, 2, 3])
def test_co_interpretation_matches_sequential(name, D):
    g = load(name)
    inputs = rand_inputs(g, D)
    stats = CoRunStats()
    got = co_interpret(partition(g, D), inputs, stats=stats)
    assert same(got, interpret_sequential(g, inputs))
    assert all(v <= D for v in stats.max_lead.values())


def test_one_put_get_consumed_per_iteration(gemm):
    prog = partition(gemm, 2)
    stats = CoRunStats()
    co_interpret(prog, rand_inputs(gemm), tiles=[0], stats=stats)
    assert set(stats.puts.values()) == {8}
    assert stats.puts == stats.gets == stats.consumes


def test_distribute_is_deterministic(attention):
    t1, t2 = annotate(attention), annotate(attention)
    assert t1.tags == t2.tags
    p1 = distribute(attention, t1, plan_channels(attention, t1, 2))
    p2 = distribute(attention, t2, plan_channels(attention, t2, 2))
    assert print_program(p1) == print_program(p2)


def test_depth_must_be_positive():
    g = parse_kernel(THREE_LOADS)
    with pytest.raises(ValueError):
        plan_channels(g, annotate(g), 0)


def test_no_load_program_runs():
    g = parse_kernel(NO_LOAD)
    out = co_interpret(partition(g), {})
    assert out["c"].tolist() == [[3] * 4] * 4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3))
def test_random_kernels_preserve_semantics(seed, D):
    g = parse_kernel(random_kernel_text(seed))
    inputs = rand_inputs(g, seed)
    got = co_interpret(partition(g, D), inputs)
    want = interpret_sequential(g, inputs)
    assert all(np.array_equal(got[k], want[k]) for k in want)
