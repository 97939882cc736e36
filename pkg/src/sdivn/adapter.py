"""Universal adapter: CAN messages in and out of backbone envelope frames.

Envelope field order, used for logging and corruption checks::

    [src_addr, dst_addr, kind, seq, can_id, dlc, payload, gen_time]
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

from .engine import US, Simulator
from .metrics import DelayDecomposition

log = logging.getLogger(__name__)

BROADCAST = "*"


class MalformedMessage(ValueError):
    pass


class FrameKind(Enum):
    DATA = "data"
    ACK = "ack"
    ANNOUNCE = "announce"  # host presence, used by the learning switch at boot


@dataclass(frozen=True)
class CanMessage:
    can_id: int
    dlc: int
    payload: bytes
    src_ecu: str
    gen_time: int

    def check(self):
        if not 0 <= self.can_id < 2048:
            raise MalformedMessage(f"can_id {self.can_id:#x} is not an 11-bit identifier")
        if not 0 <= self.dlc <= 8:
            raise MalformedMessage(f"dlc {self.dlc} outside 0..8")
        if len(self.payload) != self.dlc:
            raise MalformedMessage(f"payload has {len(self.payload)} bytes, dlc says {self.dlc}")


@dataclass(frozen=True)
class EthFrame:
    src_addr: str
    dst_addr: str
    kind: FrameKind
    seq: int
    inner: Optional[CanMessage] = None

    def envelope(self) -> tuple:
        m = self.inner
        if m is None:
            return (self.src_addr, self.dst_addr, self.kind.value, self.seq, None, None, None, None)
        return (self.src_addr, self.dst_addr, self.kind.value, self.seq, m.can_id, m.dlc, m.payload, m.gen_time)

    def describe(self) -> str:
        s = f"{self.kind.value} {self.src_addr}->{self.dst_addr} seq={self.seq}"
        if self.inner is not None:
            s += f" can_id={self.inner.can_id:#05x}"
        return s


class Transit:
    """One copy of a frame moving through the fabric, with the delays it accrued."""

    __slots__ = ("frame", "decomp", "links", "emitted_at")

    def __init__(self, frame: EthFrame, decomp: Optional[DelayDecomposition] = None):
        self.frame = frame
        self.decomp = decomp if decomp is not None else DelayDecomposition()
        self.links: list[str] = []
        self.emitted_at: Optional[int] = None

    def fork(self) -> "Transit":
        t = Transit(self.frame, self.decomp.copy())
        t.links = list(self.links)
        t.emitted_at = self.emitted_at
        return t


@dataclass(frozen=True)
class AdapterConfig:
    e_d: int = 5 * US
    d_d: int = 5 * US
    addr: str = ""

    def __post_init__(self):
        if self.e_d < 0 or self.d_d < 0:
            raise ValueError("adapter delays must be non-negative")


class Adapter:
    """Gateway between one ECU and its backbone port.

    ``on_data(msg, frame, transit)`` fires ``d_d`` after a Data frame reaches
    the adapter; ``on_frame(frame, transit)`` fires immediately on every
    arriving frame (the reliability layer uses it for acks).
    """

    def __init__(self, sim: Simulator, ecu_id: str, config: AdapterConfig, fabric=None, port: str = ""):
        self.sim = sim
        self.ecu_id = ecu_id
        self.config = config
        self.addr = config.addr or ecu_id
        self.fabric = fabric
        self.port = port
        self._next_seq: dict[tuple[str, FrameKind], int] = {}
        self.on_data: Optional[Callable] = None
        self.on_frame: Optional[Callable] = None
        self.decode_errors = 0
        self.emitted = 0

    def encapsulate(self, msg: CanMessage, dst: str, kind: FrameKind = FrameKind.DATA) -> EthFrame:
        msg.check()
        key = (dst, kind)
        seq = self._next_seq.get(key, 0)
        self._next_seq[key] = seq + 1
        return EthFrame(self.addr, dst, kind, seq, msg)

    def decapsulate(self, frame: EthFrame) -> CanMessage:
        if frame.kind is not FrameKind.DATA or frame.inner is None:
            raise MalformedMessage(f"{frame.kind.value} frame carries no CAN message")
        frame.inner.check()
        return frame.inner

    def send(self, msg: CanMessage, dst: str,
             on_emitted: Optional[Callable[[EthFrame, int], None]] = None) -> EthFrame:
        """Encapsulate ``msg`` and put it on the wire ``e_d`` from now."""
        frame = self.encapsulate(msg, dst)
        self._emit_later(Transit(frame), on_emitted)
        return frame

    def send_control(self, frame: EthFrame):
        """Emit an ack or announce frame after the encapsulation delay."""
        self._emit_later(Transit(frame), None)

    def _emit_later(self, transit: Transit, on_emitted):
        transit.decomp.e_d += self.config.e_d
        self.sim.schedule_in(self.config.e_d, self._emit, transit, on_emitted, kind="adapter-emit")

    def _emit(self, transit: Transit, on_emitted=None):
        transit.emitted_at = self.sim.now()
        self.transmit(transit)
        if on_emitted is not None:
            on_emitted(transit.frame, transit.emitted_at)

    def transmit(self, transit: Transit):
        """Put an already encapsulated frame copy on the wire now."""
        self.emitted += 1
        if transit.emitted_at is None:
            transit.emitted_at = self.sim.now()
        if self.fabric is not None:
            self.fabric.transmit(self.port, transit)

    # fabric callbacks

    def receive(self, port: str, transit: Transit):
        frame = transit.frame
        if frame.dst_addr not in (self.addr, BROADCAST):
            return
        if self.on_frame is not None:
            self.on_frame(frame, transit)
        if frame.kind is not FrameKind.DATA:
            return
        try:
            msg = self.decapsulate(frame)
        except MalformedMessage as exc:
            self.decode_errors += 1
            log.warning("%s dropped %s: %s", self.ecu_id, frame.describe(), exc)
            return
        transit.decomp.d_d += self.config.d_d
        self.sim.schedule_in(self.config.d_d, self._deliver, msg, frame, transit, kind="adapter-deliver")

    def _deliver(self, msg, frame, transit):
        if self.on_data is not None:
            self.on_data(msg, frame, transit)

    def port_down(self, port: str):
        log.info("%s lost its backbone link", self.ecu_id)
