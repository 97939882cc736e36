"""Deterministic discrete-event engine.

Time is an integer count of nanoseconds since simulation start. Events with
the same firing time are dispatched in the order they were scheduled.
"""

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


def us(value) -> int:
    return round(value * US)


def ms(value) -> int:
    return round(value * MS)


def seconds(value) -> int:
    return round(value * S)


def fmt_time(t: int) -> str:
    """Render nanoseconds as fixed-point seconds, e.g. ``30.000050000``."""
    sign = "-" if t < 0 else ""
    t = abs(t)
    return f"{sign}{t // S}.{t % S:09d}"


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled in the past."""


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int
    kind: str = field(compare=False)
    action: Callable[..., Any] = field(compare=False, repr=False)
    args: tuple = field(compare=False, default=(), repr=False)
    cancelled: bool = field(compare=False, default=False)
    fired: bool = field(compare=False, default=False)


class EventHandle:
    __slots__ = ("_event", "_sim")

    def __init__(self, event: Event, sim: "Simulator"):
        self._event = event
        self._sim = sim

    @property
    def fire_at(self) -> int:
        return self._event.fire_at

    @property
    def seq(self) -> int:
        return self._event.seq

    @property
    def active(self) -> bool:
        return not (self._event.cancelled or self._event.fired)

    def cancel(self) -> bool:
        """Cancel the event. Returns False if it already fired or was cancelled."""
        ev = self._event
        if ev.cancelled or ev.fired:
            return False
        ev.cancelled = True
        self._sim.cancelled += 1
        return True


class Simulator:
    """Single-threaded event loop with an integer-nanosecond clock.

    If ``trace`` is true, every dispatched event is appended to ``trace_log``
    as ``(fire_at, seq, kind)``; two runs with identical inputs produce
    identical traces.
    """

    def __init__(self, trace: bool = False):
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._now = 0
        self.scheduled = 0
        self.cancelled = 0
        self.dispatched = 0
        self.trace = trace
        self.trace_log: list[tuple[int, int, str]] = []

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, action: Callable[..., Any], *args, kind: str = "event") -> EventHandle:
        if fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule {kind!r} at {fire_at} ns, clock is already at {self._now} ns"
            )
        ev = Event(int(fire_at), next(self._seq), kind, action, args)
        heapq.heappush(self._queue, ev)
        self.scheduled += 1
        return EventHandle(ev, self)

    def schedule_in(self, delay: int, action: Callable[..., Any], *args, kind: str = "event") -> EventHandle:
        return self.schedule(self._now + delay, action, *args, kind=kind)

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; leave the clock at ``t_end``."""
        if t_end < self._now:
            raise SchedulingError(f"run_until({t_end}) is before now ({self._now})")
        count = 0
        queue = self._queue
        while queue and queue[0].fire_at <= t_end:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self._now = ev.fire_at
            ev.fired = True
            if self.trace:
                self.trace_log.append((ev.fire_at, ev.seq, ev.kind))
            ev.action(*ev.args)
            count += 1
        self._now = t_end
        self.dispatched += count
        return count
