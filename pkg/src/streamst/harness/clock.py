"""Deterministic discrete-event clock."""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class VirtualClock:
    """Single-threaded event scheduler with simulated time.

    Events at equal times run in scheduling order, so a run is a pure
    function of its inputs.
    """

    def __init__(self, start: float = 0.0) -> None:
        self._now = start
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self.events_run = 0

    def now(self) -> float:
        return self._now

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.call_at(self._now + delay, fn)

    def call_at(self, when: float, fn: Callable[[], None]) -> None:
        if when < self._now:
            raise ValueError(f"cannot schedule at {when} before now {self._now}")
        heapq.heappush(self._queue, (when, next(self._seq), fn))

    @property
    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        if not self._queue:
            return False
        when, _, fn = heapq.heappop(self._queue)
        self._now = when
        self.events_run += 1
        fn()
        return True

    def run(self, max_events: int | None = None) -> int:
        """Run until the queue is empty; returns the number of events run."""
        n = 0
        while self._queue:
            if max_events is not None and n >= max_events:
                raise RuntimeError(f"event budget of {max_events} exhausted at t={self._now:.3f}")
            self.step()
            n += 1
        return n

    def run_until(self, t: float) -> None:
        while self._queue and self._queue[0][0] <= t:
            self.step()
        self._now = max(self._now, t)


class AsyncioClock:
    """Wall-clock time on a running ``asyncio`` loop (real-time mode)."""

    def __init__(self, loop=None) -> None:
        import asyncio

        self.loop = loop or asyncio.get_event_loop()
        self._t0 = self.loop.time()

    def now(self) -> float:
        return self.loop.time() - self._t0

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self.loop.call_later(delay, fn)

    def call_at(self, when: float, fn: Callable[[], None]) -> None:
        self.loop.call_at(self._t0 + when, fn)
