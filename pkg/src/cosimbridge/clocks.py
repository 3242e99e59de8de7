"""Wall and virtual time sources.

Everything in the step path reads time through one of these, never through
the time module directly. WallClock is a thin veneer over the monotonic
clock. VirtualClock replaces waiting with bookkeeping: externally scheduled
events (replay publications) fire synchronously, in instant order, on the
thread that advances the clock, so a whole run is a pure function of its
scenario. Waiting for data in virtual mode means advancing to the next
scheduled event; the injected per-step delay means advancing by that amount,
firing whatever falls due.
"""

from __future__ import annotations

import time
from typing import Callable


class WallClock:
    """Real time; delays burn CPU deliberately to mimic computation load."""

    virtual = False

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def busy_wait(self, duration_ns: int) -> None:
        end = time.monotonic_ns() + max(0, duration_ns)
        while time.monotonic_ns() < end:
            pass

    def advance_to_next_event(self, limit_ns: int) -> bool:
        raise RuntimeError("the wall clock has no scheduled events to advance to")


class VirtualClock:
    """Logical clock driving scheduled publications deterministically."""

    virtual = True

    def __init__(self, start_ns: int = 0):
        self._now = start_ns
        self._events: list[tuple[int, int, Callable[[], None]]] = []
        self._next = 0
        self._sealed = False

    def now_ns(self) -> int:
        return self._now

    def schedule(self, instant_ns: int, fire: Callable[[], None]) -> None:
        """Register an event; allowed only before the clock starts moving."""
        if self._sealed:
            raise RuntimeError("cannot schedule events once the clock is running")
        self._events.append((instant_ns, len(self._events), fire))

    def _seal(self) -> None:
        if not self._sealed:
            self._events.sort(key=lambda e: (e[0], e[1]))
            self._sealed = True

    def advance_to(self, target_ns: int) -> None:
        """Move time forward to target_ns, firing every event due on the way."""
        self._seal()
        while self._next < len(self._events) and self._events[self._next][0] <= target_ns:
            instant, _, fire = self._events[self._next]
            self._now = max(self._now, instant)
            self._next += 1
            fire()
        self._now = max(self._now, target_ns)

    def busy_wait(self, duration_ns: int) -> None:
        self.advance_to(self._now + max(0, duration_ns))

    def advance_to_next_event(self, limit_ns: int) -> bool:
        """Jump to the next event instant if it is within limit_ns.

        Fires every event sharing that instant (simultaneous publications are
        delivered together) and returns True. With nothing due by limit_ns,
        time moves to the limit and False is returned.
        """
        self._seal()
        if self._next < len(self._events) and self._events[self._next][0] <= limit_ns:
            self.advance_to(self._events[self._next][0])
            return True
        self._now = max(self._now, limit_ns)
        return False

    @property
    def pending_events(self) -> int:
        return len(self._events) - self._next
