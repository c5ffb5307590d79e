import pytest
from hypothesis import given, strategies as st

from warpspec.driver import CompileOptions, compile_kernel, random_inputs, run_compiled, run_kernel
from warpspec.errors import IndivisibleTile, RegisterBudgetExceeded
from warpspec.gridopt import (
    CooperativeConfig, WorkQueue, apply_cooperative, apply_persistent, band_analysis,
    full_waits, launch_overhead, register_estimate,
)
from warpspec.lowering import EMPTY, FULL, lower
from warpspec.partitioner import partition
from warpspec.sim import MachineConfig, simulate
from warpspec.tile_ir import interpret_sequential, parse_kernel

from conftest import load, same

COL_REDUCE = """
kernel colsum(a: buf<8x8 int>, c: buf<1x8 int>) grid 1 {
  zero = const 0
  acc0 = const zeros : 1x8 int
  loop k in 0..2 iter (acc = acc0) {
    x = tma_load a[zero, zero] : 8x8 int
    r = reduce sum x axis=0
    acc1 = ew add acc, r
    yield acc1
  }
  store c[zero, zero] = acc
}
"""


def test_cooperative_bands_and_threshold():
    g = load("gemm_large.k")
    mod = apply_cooperative(lower(partition(g, 2)), CooperativeConfig(2))
    cons = [s for s in mod.streams if s.role == "consumer"]
    assert [s.band for s in cons] == [(0, 2), (1, 2)]
    assert all(b.arrival_threshold == 2 for b in mod.barriers if b.kind == EMPTY)
    assert all(b.arrival_threshold == 1 for b in mod.barriers if b.kind == FULL)
    assert all(len(full_waits(s)) == 1 for s in cons)
    assert "acc" in cons[0].banded and "acc1" in cons[0].banded


def test_band_rows():
    g = load("gemm_large.k")
    mod = apply_cooperative(lower(partition(g, 2)), CooperativeConfig(2))
    rows = mod.meta["types"]["acc"].rows
    assert rows == 16 and rows // 2 == 8


def test_one_consumer_is_identity(gemm):
    mod = lower(partition(gemm, 2))
    out = apply_cooperative(mod, CooperativeConfig(1))
    assert out.streams == mod.streams and out.barriers == mod.barriers
    assert out.meta["consumer_wgs"] == 1


def test_indivisible_rows(gemm):
    with pytest.raises(IndivisibleTile):
        apply_cooperative(lower(partition(gemm, 2)), CooperativeConfig(3))


def test_column_reduce_cannot_band():
    g = parse_kernel(COL_REDUCE)
    with pytest.raises(IndivisibleTile):
        apply_cooperative(lower(partition(g, 2)), CooperativeConfig(2))


def test_rhs_is_full_lhs_banded(gemm):
    cons = lower(partition(gemm, 2)).streams[1]
    banded = band_analysis(cons, lower(partition(gemm, 2)).meta["types"])
    assert "x" in banded and "y" not in banded


def test_bad_split_axis():
    with pytest.raises(IndivisibleTile):
        CooperativeConfig(2, split_axis="cols")


def test_register_gate_and_pooling():
    g = load("gemm_large.k")
    mc = MachineConfig()
    with pytest.raises(RegisterBudgetExceeded):
        compile_kernel(g, CompileOptions(coop_wgs=1), mc)
    c = compile_kernel(g, CompileOptions(coop_wgs=2), mc)
    assert c.registers <= mc.regs_per_wg
    single = register_estimate(lower(partition(g, 2)), mc)
    assert c.registers - mc.reg_overhead == (single - mc.reg_overhead) // 2
    out = run_compiled(c, CompileOptions(coop_wgs=2), mc)
    assert out.verdict == "Completed" and out.oracle_match


@pytest.mark.parametrize("name", ["gemm.k", "gemm_large.k", "attention.k", "gemm_batched.k"])
@pytest.mark.parametrize("n", [1, 2])
def test_cooperative_equivalence(name, n):
    g = load(name)
    mc = MachineConfig(regs_per_wg=10**6)
    out = run_kernel(g, CompileOptions(coop_wgs=n), mc, seed=n)
    assert out.verdict == "Completed" and out.oracle_match


def test_cooperative_race_free_grid():
    g = load("gemm_large.k")
    mc = MachineConfig(smem_bytes=1 << 16)
    for D in (1, 2, 3):
        for P in range(1, D + 1):
            out = run_kernel(g, CompileOptions(D=D, P=P, mode="fine", coop_wgs=2), mc)
            assert out.verdict == "Completed", (D, P)


def test_work_queue_each_tile_once():
    q = WorkQueue.of(10)
    share = q.assignment(4)
    flat = sorted(t for s in share for t in s)
    assert flat == list(range(10)) and q.take() is None
    assert share[0] == [0, 4, 8]


@given(st.integers(1, 40), st.integers(1, 8))
def test_work_queue_partition(n, sms):
    share = WorkQueue.of(n).assignment(sms)
    assert sorted(t for s in share for t in s) == list(range(n))
    assert len(share) == min(n, sms)


def test_persistent_launch_accounting(gemm):
    mc = MachineConfig()
    mod = lower(partition(gemm, 2))
    pers = apply_persistent(mod, mc, WorkQueue.of(16))
    assert launch_overhead(mod, mc) == 16 * 1000
    assert launch_overhead(pers, mc) == 4 * 1000
    res = simulate(pers, mc, random_inputs(gemm))
    assert len(res.trace.launches) == 4


def test_persistent_inserts_sync(gemm):
    pers = apply_persistent(lower(partition(gemm, 2)))
    for s in pers.streams:
        assert type(s.epilogue[0]).__name__ == "CtaSync"
        assert type(s.epilogue[-1]).__name__ == "WorkLoopNext"
    assert apply_persistent(pers) is pers


def test_persistent_single_tile_matches():
    g = load("gemm.k")
    mc = MachineConfig(num_sms=1)
    a = run_kernel(g, CompileOptions(tiles=1), mc)
    b = run_kernel(g, CompileOptions(tiles=1, persistent=True), mc)
    assert a.cycles == b.cycles and a.oracle_match and b.oracle_match


@pytest.mark.parametrize("name", ["gemm.k", "attention.k", "gemm_batched.k"])
def test_persistent_faster_and_correct(name):
    g = load(name)
    mc = MachineConfig()
    a = run_kernel(g, CompileOptions(), mc)
    b = run_kernel(g, CompileOptions(persistent=True), mc)
    assert b.oracle_match and a.oracle_match
    if g.grid > mc.num_sms:
        assert b.cycles < a.cycles


def test_tiles_option_limits_work(gemm):
    inputs = random_inputs(gemm)
    out = run_kernel(gemm, CompileOptions(tiles=3), MachineConfig(), inputs)
    want = interpret_sequential(gemm, inputs, [0, 1, 2])
    assert out.oracle_match and same(out.sim.outputs, want)
