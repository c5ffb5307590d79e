from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from warpspec.errors import SmemOverflow, UnloweredAref
from warpspec.lowering import (
    EMPTY, FULL, BarArrive, BarExpectTx, BarWaitPhase, MmaIssue, TmaAsyncLoad,
    format_module, lower, slot_parity, verify_lowering,
)
from warpspec.partitioner import partition
from warpspec.pipeliner import MmaPipelineConfig, apply_fine_grained
from warpspec.program import PRODUCER, Put
from warpspec.randgen import random_kernel_text
from warpspec.sim import MachineConfig, simulate
from warpspec.tile_ir import parse_kernel

from conftest import rand_inputs

ONE_STEP = """
kernel one(a: buf<4x4 int>, b: buf<4x4 int>, c: buf<4x4 int>) grid 1 {
  zero = const 0
  acc0 = const zeros : 4x4 int
  loop k in 0..1 iter (acc = acc0) {
    x = tma_load a[zero, zero] : 4x4 int
    y = tma_load b[zero, zero] : 4x4 int
    acc1 = dot x, y, acc=acc
    yield acc1
  }
  store c[zero, zero] = acc
}
"""


def test_gemm_d2_barriers(gemm):
    mod = lower(partition(gemm, 2))
    assert [b.name for b in mod.barriers] == ["e0.0", "f0.0", "e0.1", "f0.1"]
    for b in mod.barriers:
        assert b.init_completed == (1 if b.kind == EMPTY else 0)
        assert b.arrival_threshold == 1


def test_gemm_d2_put_parities(gemm):
    mod = lower(partition(gemm, 2))
    prod = mod.streams[0]
    wait = next(i for i in prod.loop.body if isinstance(i, BarWaitPhase))
    assert wait.bar == EMPTY
    decl = mod.channels[wait.chan]
    got = [slot_parity(decl, wait.it, k) for k in range(4)]
    assert got == [(0, 0), (1, 0), (0, 1), (1, 1)]


def test_put_expands_to_wait_expect_loads(gemm):
    mod = lower(partition(gemm, 2))
    body = mod.streams[0].loop.body
    kinds = [type(i) for i in body[:4]]
    assert kinds == [BarWaitPhase, BarExpectTx, TmaAsyncLoad, TmaAsyncLoad]
    assert body[1].tx_bytes == 2 * 8 * 8 * 4


def test_get_and_consumed(gemm):
    body = lower(partition(gemm, 2)).streams[1].loop.body
    assert isinstance(body[0], BarWaitPhase) and body[0].bar == FULL and body[0].binds == ("x", "y")
    assert isinstance(body[1], MmaIssue)
    assert isinstance(body[-1], BarArrive)


def test_listing_headers(gemm):
    text = format_module(lower(partition(gemm, 2)))
    assert "== WG0 == producer" in text and "== WG1 == consumer" in text
    assert text.count("\nbarrier ") == 4
    assert "parity (k/2)%2" in text


def test_single_handshake_does_not_block():
    g = parse_kernel(ONE_STEP)
    mod = lower(partition(g, 1))
    mc = MachineConfig()
    res = simulate(mod, mc, rand_inputs(g))
    assert res.ok
    # one tile: launch, two serial loads, one mma, the store and a few issue slots
    floor = mc.cta_launch_overhead + 2 * mc.tma_cycles(16) + mc.mma_cycles(4, 4, 4) + mc.store_cycles(16)
    assert floor <= res.cycles < floor + 20


@pytest.mark.parametrize("D", [1, 2, 3])
def test_verify_clean(gemm, attention, D):
    for g in (gemm, attention):
        prog = partition(g, D)
        assert verify_lowering(lower(prog), prog).clean


def test_verify_clean_after_pipelining(gemm):
    prog = apply_fine_grained(partition(gemm, 3), MmaPipelineConfig(2))
    assert verify_lowering(lower(prog), prog).clean


def test_verify_flags_deleted_arrive(gemm):
    prog = partition(gemm, 2)
    mod = lower(prog)
    cons = mod.streams[1]
    body = tuple(i for i in cons.loop.body if not isinstance(i, BarArrive))
    broken = mod.with_streams([mod.streams[0], replace(cons, loop=replace(cons.loop, body=body))])
    rep = verify_lowering(broken, prog)
    assert not rep.clean
    assert any("consumed-count mismatch" in v for v in rep.violations)


def test_drop_consumed_flag(gemm):
    prog = partition(gemm, 2)
    assert not verify_lowering(lower(prog, drop_consumed=True), prog).clean


def test_smem_overflow(gemm):
    prog = partition(gemm, 4)
    mod = lower(prog)
    assert mod.smem_bytes == 4 * 512
    with pytest.raises(SmemOverflow):
        lower(prog, smem_capacity=mod.smem_bytes - 1)


def test_smem_plan_offsets(attention):
    mod = lower(partition(attention, 2))
    offsets = sorted(mod.slot_base.values())
    assert offsets[0] == 0 and len(set(offsets)) == len(offsets)


def test_put_of_non_load_is_unlowered(gemm):
    prog = partition(gemm, 2)
    prod = prog.region(PRODUCER)
    body = tuple(replace(s, values=("o_k", "y")) if isinstance(s, Put) else s for s in prod.loop.body)
    bad = prog.replace_region(replace(prod, loop=replace(prod.loop, body=body)))
    with pytest.raises(UnloweredAref):
        lower(bad)


def test_stray_load_is_unlowered(gemm):
    prog = partition(gemm, 2)
    prod = prog.region(PRODUCER)
    body = tuple(s for s in prod.loop.body if not isinstance(s, Put))
    bad = prog.replace_region(replace(prod, loop=replace(prod.loop, body=body)))
    with pytest.raises(UnloweredAref):
        lower(bad)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3))
def test_random_programs_verify_clean(seed, D):
    prog = partition(parse_kernel(random_kernel_text(seed)), D)
    assert verify_lowering(lower(prog), prog).clean
