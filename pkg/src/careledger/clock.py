"""Injectable time source.

Ledger timestamps, token lifetimes, and session expiry all read the clock
through this interface so that replay determinism and expiry behavior are
testable with a manually advanced clock.
"""
from __future__ import annotations

import time
from typing import Protocol


class Clock(Protocol):
    def now(self) -> int:
        """Current UTC time in whole seconds."""
        ...


class SystemClock:
    def now(self) -> int:
        return int(time.time())


class ManualClock:
    """Deterministic clock for tests; advances only when told to."""

    def __init__(self, start: int = 1_700_000_000):
        self._now = int(start)

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        self._now += int(seconds)
        return self._now
