import pytest
from hypothesis import given, settings, strategies as st

from warpspec.errors import ConfigError, PipelineInfeasible, StagePlanAmbiguous
from warpspec.partitioner import partition
from warpspec.pipeliner import (
    MmaPipelineConfig, StagePlan, apply_coarse_grained, apply_fine_grained, channel_balance,
    coarse_outline, coarse_steps, compute_counts, identify_stages, inflight_profile, render_steps,
)
from warpspec.program import CONSUMER, Consumed, Get, MmaIssue, MmaWait, co_interpret, unroll
from warpspec.randgen import random_kernel_text
from warpspec.tile_ir import interpret_sequential, parse_kernel

from conftest import fixture_path, load, rand_inputs, same


def gemm_with_trip(n):
    with open(fixture_path("gemm.k")) as f:
        return parse_kernel(f.read().replace("0..8", f"0..{n}").replace("64", str(8 * n)))


ACT_IN_LOOP = """
kernel gemm_act(a: buf<4x8 int>, b: buf<8x4 int>, c: buf<4x4 int>) grid 1 {
  zero = const 0
  acc0 = const zeros : 4x4 int
  loop k in 0..2 iter (acc = acc0, o = zero) {
    x = tma_load a[zero, o] : 4x4 int
    y = tma_load b[o, zero] : 4x4 int
    t = dot x, y, acc=acc0
    r = ew relu t
    acc1 = ew add acc, r
    o1 = idx add o, 4
    yield acc1, o1
  }
  store c[zero, zero] = acc
}
"""

CYCLIC = """
kernel cyc(a: buf<4x4 int>, c: buf<4x4 int>) grid 1 {
  zero = const 0
  acc0 = const zeros : 4x4 int
  loop k in 0..2 iter (acc = acc0) {
    x = tma_load a[zero, zero] : 4x4 int
    t = dot x, x, acc=acc0
    r = ew relu t
    u = dot r, x, acc=acc0
    v = ew add u, t
    w = dot v, x, acc=acc
    yield w
  }
  store c[zero, zero] = acc
}
"""


def trace(region):
    """Compact event list for one tile of the consumer region."""
    out = []
    for tag, s, k in unroll(region.prologue, region.loop, region.epilogue):
        if tag != "stmt":
            continue
        if isinstance(s, MmaIssue):
            out.append(f"issue{k}")
        elif isinstance(s, MmaWait):
            out.append(f"wait{s.pendings}")
        elif isinstance(s, Get):
            out.append(f"get{s.it.eval(k)}")
        elif isinstance(s, Consumed):
            i = s.it.eval(k if k is not None else 0)
            if s.min_iter is None or k is None or k >= s.min_iter:
                out.append(f"consumed{i}")
    return out


def test_config_positive():
    with pytest.raises(ConfigError):
        MmaPipelineConfig(0)


def test_fine_n4_p2_schedule():
    prog = apply_fine_grained(partition(gemm_with_trip(4), 2), MmaPipelineConfig(2))
    assert trace(prog.region(CONSUMER)) == [
        "wait1", "get0", "issue0",
        "wait1", "get1", "issue1",
        "wait1", "consumed0", "get2", "issue2",
        "wait1", "consumed1", "get3", "issue3",
        "wait0", "consumed2", "consumed3",
    ]


def test_fine_p1_releases_each_iteration_after_one_wait():
    prog = apply_fine_grained(partition(gemm_with_trip(3), 1), MmaPipelineConfig(1))
    assert trace(prog.region(CONSUMER)) == [
        "wait0", "get0", "issue0",
        "wait0", "consumed0", "get1", "issue1",
        "wait0", "consumed1", "get2", "issue2",
        "wait0", "consumed2",
    ]


def test_fine_p_greater_than_d_infeasible(gemm):
    with pytest.raises(PipelineInfeasible):
        apply_fine_grained(partition(gemm, 2), MmaPipelineConfig(3))


def test_fine_rejects_cuda_work(attention):
    with pytest.raises(PipelineInfeasible):
        apply_fine_grained(partition(attention, 3), MmaPipelineConfig(1))


@pytest.mark.parametrize("N,P,D", [(1, 1, 1), (4, 2, 2), (5, 3, 4), (8, 2, 3), (2, 3, 3)])
def test_fine_inflight_bound_and_balance(N, P, D):
    prog = apply_fine_grained(partition(gemm_with_trip(N), D), MmaPipelineConfig(P))
    r = prog.region(CONSUMER)
    tr, left = inflight_profile((r.prologue, r.loop, r.epilogue), r.loop.trip)
    assert max(tr) <= P and left == 0
    assert all(v == [1, 1] for v in channel_balance(prog, r).values())


def test_identify_attention(attention):
    plan = identify_stages(attention)
    assert plan.T == ("s",) and plan.U == ("acc1",) and plan.use_u
    assert set(plan.C) == {"mx", "p", "m1"}


def test_identify_plain_gemm(gemm):
    plan = identify_stages(gemm)
    assert plan.T == ("acc1",) and plan.C == () and not plan.use_u


def test_identify_gemm_with_activation():
    plan = identify_stages(parse_kernel(ACT_IN_LOOP))
    assert plan.T == ("t",) and plan.C == ("r", "acc1") and not plan.use_u


def test_activation_fed_back_into_dot_is_ambiguous():
    src = ACT_IN_LOOP.replace("acc=acc0", "acc=acc").replace("acc1 = ew add acc, r", "acc1 = ew neg r")
    with pytest.raises(StagePlanAmbiguous):
        identify_stages(parse_kernel(src))


def test_identify_cyclic_is_ambiguous():
    with pytest.raises(StagePlanAmbiguous):
        identify_stages(parse_kernel(CYCLIC))


def test_identify_accepts_partitioned_program(attention):
    assert identify_stages(partition(attention, 2)) == identify_stages(attention)


DEFAULT_N3_U = [
    "-- prologue", "get T0", "issue T0",
    "-- j=1", "get T1", "issue T1", "wait T0", "consumed T0", "compute C0",
    "get U0", "issue U0", "wait U0", "consumed U0",
    "-- j=2", "get T2", "issue T2", "wait T1", "consumed T1", "compute C1",
    "get U1", "issue U1", "wait U1", "consumed U1",
    "-- epilogue", "wait T2", "consumed T2", "compute C2",
    "get U2", "issue U2", "wait U2", "consumed U2", "store",
]


def test_coarse_default_n3_with_u():
    assert render_steps(coarse_steps(3, True)) == DEFAULT_N3_U


def test_coarse_literal_n3_with_u():
    lines = render_steps(coarse_steps(3, True, literal=True))
    assert lines[:6] == ["-- prologue", "get T0", "issue T0", "wait T0", "consumed T0", "compute C0"]
    assert lines[6:16] == ["-- j=1", "get T1", "issue T1", "get U0", "issue U0",
                           "wait T0", "consumed T0", "compute C0", "wait U0", "consumed U0"]
    assert lines[-9:] == ["-- epilogue", "wait T2", "consumed T2", "compute C2",
                          "get U2", "issue U2", "wait U2", "consumed U2", "store"]
    # the reference order computes C0 twice; the default does not
    assert lines.count("compute C0") == 2


def test_coarse_n3_without_u():
    assert render_steps(coarse_steps(3, False, frozenset({"T"}))) == [
        "-- prologue", "get T0", "issue T0",
        "-- j=1", "get T1", "issue T1", "wait T0", "consumed T0", "compute C0",
        "-- j=2", "get T2", "issue T2", "wait T1", "consumed T1", "compute C1",
        "-- epilogue", "wait T2", "consumed T2", "compute C2", "store",
    ]


def test_coarse_n1_has_no_steady_state():
    lines = render_steps(coarse_steps(1, False))
    assert not any(l.startswith("-- j=") for l in lines)
    assert lines == ["-- prologue", "get T0", "issue T0", "-- epilogue",
                     "wait T0", "consumed T0", "compute C0", "store"]


def test_coarse_channel_free_c_has_no_wrappers():
    steps = coarse_steps(2, False, frozenset({"T"}))
    assert not [s for s in steps if s[1] == "C" and s[0] in ("get", "consumed")]


@given(st.integers(1, 8), st.booleans())
def test_compute_exactly_once_and_after_wait(N, use_u):
    lines = render_steps(coarse_steps(N, use_u))
    for j in range(N):
        assert lines.count(f"compute C{j}") == 1
        assert lines.index(f"wait T{j}") < lines.index(f"compute C{j}")
        if use_u:
            assert lines.index(f"compute C{j}") < lines.index(f"issue U{j}")


@given(st.integers(2, 8), st.booleans())
def test_overlap_witness(N, use_u):
    lines = render_steps(coarse_steps(N, use_u))
    for j in range(1, N):
        assert lines.index(f"issue T{j}") < lines.index(f"compute C{j - 1}")


def test_coarse_program_attention(attention):
    prog = apply_coarse_grained(partition(attention, 2))
    r = prog.region(CONSUMER)
    assert r.loop is None       # fully unrolled
    lines = coarse_outline(r)
    assert lines[:2] == ["-- prologue", "issue T0"]
    assert lines[2:6] == ["-- j=1", "issue T1", "wait T0", "issue U0"]
    assert compute_counts(r, identify_stages(attention)) == {j: 1 for j in range(8)}
    assert all(v == [1, 1] for v in channel_balance(prog, r).values())


def test_coarse_needs_two_slots(attention):
    with pytest.raises(PipelineInfeasible):
        apply_coarse_grained(partition(attention, 1))


def test_coarse_gemm_with_activation_runs():
    g = parse_kernel(ACT_IN_LOOP)
    prog = apply_coarse_grained(partition(g, 2))
    inputs = rand_inputs(g, 4)
    assert same(co_interpret(prog, inputs), interpret_sequential(g, inputs))


@pytest.mark.parametrize("D", [2, 3, 4])
def test_coarse_attention_semantics(attention, D):
    prog = apply_coarse_grained(partition(attention, D))
    inputs = rand_inputs(attention, D)
    assert same(co_interpret(prog, inputs), interpret_sequential(attention, inputs))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3), st.integers(0, 3))
def test_fine_semantics_random(seed, P, extra):
    g = parse_kernel(random_kernel_text(seed, "gemm"))
    D = P + extra
    prog = apply_fine_grained(partition(g, D), MmaPipelineConfig(P))
    inputs = rand_inputs(g, seed)
    assert same(co_interpret(prog, inputs), interpret_sequential(g, inputs))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 4))
def test_coarse_semantics_random(seed, D):
    g = parse_kernel(random_kernel_text(seed, "attention"))
    prog = apply_coarse_grained(partition(g, D))
    inputs = rand_inputs(g, seed)
    assert same(co_interpret(prog, inputs), interpret_sequential(g, inputs))


def test_stage_plan_lookup():
    plan = StagePlan(("a",), ("b",), ("c",))
    assert plan.stage_of("b") == "C" and plan.stage_of("zz") is None
