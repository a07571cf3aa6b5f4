"""Accounting probe for the online stage.

Online code paths report the flop counts and leading dimensions of every
array operation they perform. Tests use :func:`track` to assert that online
work never touches data whose leading dimension scales with the full order
``n``, and that measured counts are unchanged when ``n`` grows.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

__all__ = ["Tally", "track", "record"]

_state = threading.local()


@dataclass
class Tally:
    flops: int = 0
    events: int = 0
    max_dim: int = 0
    by_label: dict = field(default_factory=dict)

    def add(self, label, flops, dims):
        self.flops += int(flops)
        self.events += 1
        if dims:
            self.max_dim = max(self.max_dim, *dims)
        self.by_label[label] = self.by_label.get(label, 0) + int(flops)


@contextmanager
def track():
    """Collect online operation counts for the enclosed block."""
    tally = Tally()
    previous = getattr(_state, "tally", None)
    _state.tally = tally
    try:
        yield tally
    finally:
        _state.tally = previous


def record(label, flops, *dims):
    """Report one online operation (no-op unless a tally is active)."""
    tally = getattr(_state, "tally", None)
    if tally is not None:
        tally.add(label, flops, dims)
