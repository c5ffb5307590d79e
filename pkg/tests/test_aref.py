import random
import warnings

import pytest
from hypothesis import given, strategies as st

from warpspec import aref
from warpspec.aref import (
    BLOCKING, ArefChannel, ArefLintWarning, ArefSlot, WouldBlock, channel_slot, consumed, get, put,
)
from warpspec.errors import ProtocolViolation

V = ("v",)
W = ("w",)


def test_initial_state():
    s = ArefSlot()
    assert (s.E, s.F, s.buf) == (1, 0, None)


def test_put_fills():
    s = put(ArefSlot(), V)
    assert (s.E, s.F, s.buf) == (0, 1, V)


def test_put_on_full_strict():
    with pytest.raises(ProtocolViolation):
        put(ArefSlot(0, 1, W), V)


def test_put_on_full_blocking_waits():
    with pytest.raises(WouldBlock):
        put(ArefSlot(0, 1, W), V, mode=BLOCKING)


def test_get_borrows():
    v, s = get(ArefSlot(0, 1, V))
    assert v == V and s.state == (0, 0)


def test_get_fresh_is_violation():
    with pytest.raises(ProtocolViolation):
        get(ArefSlot())


def test_double_get_is_violation():
    _, s = get(put(ArefSlot(), V))
    with pytest.raises(ProtocolViolation):
        get(s)


def test_consumed_restores_empty_credit():
    s = consumed(ArefSlot(0, 0, V))
    assert s.state == (1, 0)


def test_reuse_after_handshake():
    _, s = get(put(ArefSlot(), V))
    s = consumed(s)
    v, _ = get(put(s, W))
    assert v == W


def test_consumed_on_empty_warns_only():
    with pytest.warns(ArefLintWarning):
        s = consumed(ArefSlot())
    assert s.state == (1, 0)


def test_both_credits_unrepresentable():
    with pytest.raises(ProtocolViolation):
        ArefSlot(1, 1, V)


@pytest.mark.parametrize("k,D,want", [(5, 2, 1), (0, 1, 0), (0, 7, 0), (7, 3, 1)])
def test_channel_slot(k, D, want):
    assert channel_slot(D, k) == want


def test_channel_slot_negative():
    with pytest.raises(ValueError):
        channel_slot(2, -1)


def _step(s, op):
    try:
        if op == "put":
            return put(s, V)
        if op == "get":
            return get(s)[1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ArefLintWarning)
            return consumed(s)
    except ProtocolViolation:
        return s


def test_reachable_states_exhaustive():
    seen, frontier = set(), [ArefSlot()]
    while frontier:
        s = frontier.pop()
        if s.state in seen:
            continue
        seen.add(s.state)
        frontier += [_step(s, op) for op in ("put", "get", "consumed")]
    assert seen == {(1, 0), (0, 1), (0, 0)}


@given(st.lists(st.sampled_from(["put", "get", "consumed"]), max_size=1000))
def test_random_sequences_never_hold_both_credits(ops):
    s = ArefSlot()
    for op in ops:
        s = _step(s, op)
        assert s.E + s.F <= 1
        assert not s.F or s.buf is not None


@given(st.integers(1, 4), st.integers(0, 10**6))
def test_channel_fifo_and_bounded_lead(D, seed):
    rng = random.Random(seed)
    ch = ArefChannel(D, payload_type=("t",))
    n = 30
    nput = nget = ncons = 0
    got = []
    while ncons < n:
        choice = rng.randrange(3)
        try:
            if choice == 0 and nput < n:
                ch.put(nput, (nput,), mode=BLOCKING)
                nput += 1
            elif choice == 1 and nget < nput:
                got.append(ch.get(nget, mode=BLOCKING)[0])
                nget += 1
            elif choice == 2 and ncons < nget:
                ch.consumed(ncons)
                ncons += 1
        except WouldBlock:
            pass
        assert 0 <= ch.lead <= D
    assert got == list(range(n))


def test_channel_arity_checked():
    ch = ArefChannel(2, payload_type=("a", "b"))
    with pytest.raises(ProtocolViolation):
        ch.put(0, ("only-one",))


def test_channel_depth_positive():
    with pytest.raises(ValueError):
        ArefChannel(0)


def test_module_exports_modes():
    assert aref.STRICT == "strict" and aref.BLOCKING == "blocking"
