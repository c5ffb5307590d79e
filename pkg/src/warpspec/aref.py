"""Asynchronous references: one-slot channels with empty/full credits.

A slot moves through three states::

    (E=1, F=0) --put--> (E=0, F=1) --get--> (E=0, F=0) --consumed--> (E=1, F=0)

``put`` and ``get`` have preconditions.  In ``strict`` mode a violated
precondition raises ``ProtocolViolation``; in ``blocking`` mode it raises
``WouldBlock`` and the caller retries once the other side has moved.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

from .errors import ProtocolViolation

STRICT = "strict"
BLOCKING = "blocking"


class WouldBlock(Exception):
    """The operation's precondition is not met yet (blocking mode)."""


class ArefLintWarning(UserWarning):
    """``consumed`` fired on a slot that already holds the empty credit."""


@dataclass(frozen=True)
class ArefSlot:
    E: int = 1
    F: int = 0
    buf: Optional[tuple] = None

    def __post_init__(self):
        if self.E and self.F:
            raise ProtocolViolation("slot holds both credits")
        if self.F and self.buf is None:
            raise ProtocolViolation("full slot without payload")

    @property
    def state(self):
        return (self.E, self.F)


def _fail(mode, msg):
    if mode == BLOCKING:
        raise WouldBlock(msg)
    raise ProtocolViolation(msg)


def put(slot: ArefSlot, v: tuple, mode=STRICT) -> ArefSlot:
    if slot.E != 1:
        _fail(mode, "put on a slot without the empty credit")
    return ArefSlot(E=0, F=1, buf=tuple(v))


def get(slot: ArefSlot, mode=STRICT):
    if slot.F != 1:
        _fail(mode, "get on a slot without the full credit")
    return slot.buf, replace(slot, E=0, F=0)


def consumed(slot: ArefSlot) -> ArefSlot:
    # The rule has no premise; firing with E=1 is legal but almost surely a bug.
    if slot.E == 1:
        warnings.warn("consumed on a slot that is already empty", ArefLintWarning, stacklevel=2)
    return replace(slot, E=1, F=0)


def channel_slot(depth: int, k: int) -> int:
    if k < 0:
        raise ValueError("iteration index must be non-negative")
    return k % depth


class ArefChannel:
    """Depth-D ring of slots; iteration ``k`` uses slot ``k mod D``."""

    def __init__(self, depth: int, payload_type=(), name="ch"):
        if depth < 1:
            raise ValueError("channel depth must be positive")
        self.depth = depth
        self.payload_type = tuple(payload_type)
        self.name = name
        self.slots = [ArefSlot() for _ in range(depth)]
        self.puts = 0
        self.releases = 0

    def slot_index(self, k):
        return channel_slot(self.depth, k)

    def put(self, k, v, mode=STRICT):
        if self.payload_type and len(v) != len(self.payload_type):
            raise ProtocolViolation(f"{self.name}: payload arity {len(v)} != {len(self.payload_type)}")
        s = self.slot_index(k)
        self.slots[s] = put(self.slots[s], v, mode)
        self.puts += 1

    def get(self, k, mode=STRICT):
        s = self.slot_index(k)
        v, self.slots[s] = get(self.slots[s], mode)
        return v

    def consumed(self, k):
        s = self.slot_index(k)
        was_borrowed = self.slots[s].state == (0, 0)
        self.slots[s] = consumed(self.slots[s])
        if was_borrowed:
            self.releases += 1

    @property
    def lead(self):
        """Completed puts minus completed releases; never exceeds depth."""
        return self.puts - self.releases
