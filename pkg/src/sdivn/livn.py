"""Broadcast CAN bus baseline: shared segments, bridges, severance, storms.

Frame occupancy is ``44 + 8 * dlc`` bits (standard data frame, no bit
stuffing). Contention is resolved by lowest identifier, then by enqueue
order.
"""

import bisect
import heapq
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .adapter import CanMessage
from .engine import S, Simulator
from .metrics import DelayDecomposition


def frame_bits(dlc: int) -> int:
    return 44 + 8 * dlc


def frame_time(dlc: int, bitrate: int) -> int:
    """Bus occupancy of one frame, ns, rounded up."""
    return -(-frame_bits(dlc) * S // bitrate)


@dataclass
class BusFrame:
    msg: CanMessage
    decomp: DelayDecomposition = field(default_factory=DelayDecomposition)
    enqueued_at: int = 0


class BusSegment:
    """One broadcast medium. Every attached node except the sender hears each frame."""

    def __init__(self, sim: Simulator, seg_id: str, bitrate: int = 500_000,
                 sides: tuple = ()):
        self.sim = sim
        self.id = seg_id
        self.bitrate = bitrate
        self.sides = tuple(frozenset(s) for s in sides)
        self.attached: dict[str, Callable[[BusFrame, "BusSegment"], None]] = {}
        self.busy_until = 0
        self.busy: list[tuple[int, int]] = []
        self.severed_at: Optional[int] = None
        self.transmitted = 0
        self._pending: list = []
        self._seq = itertools.count()
        self._arbitration_scheduled = False

    def attach(self, node_id: str, on_receive: Callable[[BusFrame, "BusSegment"], None]):
        self.attached[node_id] = on_receive

    def transmit(self, sender: str, frame: BusFrame):
        if sender not in self.attached:
            raise ValueError(f"{sender} is not attached to segment {self.id}")
        frame.enqueued_at = self.sim.now()
        heapq.heappush(self._pending, (frame.msg.can_id, next(self._seq), sender, frame))
        self._kick()

    def queued(self) -> int:
        return len(self._pending)

    def _kick(self):
        # arbitrate after every same-instant enqueue has landed
        if not self._arbitration_scheduled and self.busy_until <= self.sim.now():
            self._arbitration_scheduled = True
            self.sim.schedule(self.sim.now(), self._arbitrate, kind="bus-arbitrate")

    def _arbitrate(self):
        self._arbitration_scheduled = False
        if not self._pending or self.busy_until > self.sim.now():
            return
        _, _, sender, frame = heapq.heappop(self._pending)
        start = self.sim.now()
        end = start + frame_time(frame.msg.dlc, self.bitrate)
        self.busy_until = end
        self.busy.append((start, end))
        self.sim.schedule(end, self._finish, sender, frame, kind="bus-deliver")

    def _finish(self, sender: str, frame: BusFrame):
        self.transmitted += 1
        now = self.sim.now()
        frame.decomp.bus_d += now - frame.enqueued_at
        for node, on_receive in self.attached.items():
            if node == sender or not self.reachable(sender, node, now):
                continue
            on_receive(BusFrame(frame.msg, frame.decomp.copy(), now), self)
        self._kick()

    def reachable(self, a: str, b: str, t: int) -> bool:
        if self.severed_at is None or t < self.severed_at:
            return True
        return any(a in side and b in side for side in self.sides)

    def sever(self, t: int):
        """Partition the segment into its configured sides from ``t`` on.

        A frame still on the medium at ``t`` is cut as well.
        """
        self.sim.schedule(t, self._sever, kind="bus-sever")

    def _sever(self):
        if self.severed_at is None:
            self.severed_at = self.sim.now()


class BusBridge:
    """Forwards every frame heard on one segment onto the other, no filtering."""

    def __init__(self, bridge_id: str, a: BusSegment, b: BusSegment):
        self.id = bridge_id
        self.a = a
        self.b = b
        self.forwarded = 0
        a.attach(bridge_id, self._on_frame)
        b.attach(bridge_id, self._on_frame)

    def _on_frame(self, frame: BusFrame, seg: BusSegment):
        out = self.b if seg is self.a else self.a
        self.forwarded += 1
        out.transmit(self.id, frame)


def rolling_utilization(busy: list[tuple[int, int]], t: int, window: int = S) -> Fraction:
    """Busy share of ``[t - window, t]``; before ``window`` has elapsed the
    denominator is still the full window."""
    lo = t - window
    total = 0
    # intervals are appended in time order and never overlap
    i = bisect.bisect_left(busy, (lo, lo))
    if i > 0:
        i -= 1
    for s, e in busy[i:]:
        if s >= t:
            break
        total += max(0, min(e, t) - max(s, lo))
    return Fraction(total, window)


def _busy_at_ends(busy: list[tuple[int, int]], window: int):
    """Yield (frame end, busy ns within the trailing window) for every frame.

    Rolling utilization only rises while the medium is busy, so its maxima
    and first threshold crossing fall on frame ends.
    """
    total = 0
    j = 0
    for k, (s, e) in enumerate(busy):
        total += e - s
        lo = e - window
        while j <= k and busy[j][1] <= lo:
            total -= busy[j][1] - busy[j][0]
            j += 1
        partial = max(0, lo - busy[j][0]) if j <= k else 0
        yield e, total - partial


def first_saturation(busy: list[tuple[int, int]], threshold: float = 0.99,
                     window: int = S) -> Optional[int]:
    """First frame-end instant where the rolling utilization reaches ``threshold``."""
    thr = Fraction(threshold).limit_denominator(10**6)
    for e, used in _busy_at_ends(busy, window):
        if used * thr.denominator >= thr.numerator * window:
            return e
    return None


def peak_utilization(busy: list[tuple[int, int]], window: int = S) -> Fraction:
    return Fraction(max((used for _, used in _busy_at_ends(busy, window)), default=0), window)


@dataclass
class StormReport:
    first_duplicate_at: Optional[int]
    outage_at: dict
    peak_utilization: dict

    @property
    def outage(self) -> Optional[int]:
        times = [t for t in self.outage_at.values() if t is not None]
        return min(times) if times else None


def storm_monitor(segments, arrivals=None, threshold: float = 0.99, window: int = S) -> StormReport:
    """Outage instants per segment plus the first duplicate delivery seen."""
    outage = {}
    peak = {}
    for seg in segments:
        outage[seg.id] = first_saturation(seg.busy, threshold, window)
        peak[seg.id] = peak_utilization(seg.busy, window)
    first_dup = arrivals.first_duplicate_at if arrivals is not None else None
    return StormReport(first_dup, outage, peak)
