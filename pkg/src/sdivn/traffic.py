"""ECU application layer: periodic generators, receivers, ack/retransmit."""

import logging
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .adapter import Adapter, CanMessage, EthFrame, FrameKind, Transit
from .engine import MS, Simulator
from .metrics import ArrivalRecord, DelayDecomposition

log = logging.getLogger(__name__)

SEQ_BYTES = 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FlowSpec:
    src: str
    dst: str
    period: int
    can_id: int
    start: int = 0
    id: str = ""
    dlc: int = 8

    def __post_init__(self):
        if self.period <= 0:
            raise ConfigError(f"flow {self.flow_id}: period must be positive")
        if not SEQ_BYTES <= self.dlc <= 8:
            raise ConfigError(f"flow {self.flow_id}: dlc must be in {SEQ_BYTES}..8 to carry the counter")

    @property
    def flow_id(self) -> str:
        return self.id or f"{self.src}-{self.dst}"

    def message_count(self, horizon: int) -> int:
        """Messages emitted in ``[start, horizon)``."""
        if horizon <= self.start:
            return 0
        return -((self.start - horizon) // self.period)


@dataclass(frozen=True)
class ReliabilityConfig:
    rto: int = 2 * MS
    max_retries: int = 5

    def __post_init__(self):
        if self.rto <= 0:
            raise ConfigError("rto must be positive")


def message_seq(msg: CanMessage) -> int:
    return int.from_bytes(msg.payload[:SEQ_BYTES], "big")


class Generator:
    """Emits one CAN message per period from ``spec.start`` until ``horizon``."""

    def __init__(self, sim: Simulator, spec: FlowSpec, emit: Callable[[CanMessage], None],
                 horizon: int, seed: int = 0, epoch: int = 0):
        self.sim = sim
        self.spec = spec
        self.emit = emit
        self.horizon = horizon
        self.epoch = epoch
        self.generated = 0
        self._rng = random.Random(f"{seed}:{spec.flow_id}")

    def start(self):
        first = self.epoch + self.spec.start
        if first < self.epoch + self.horizon:
            self.sim.schedule(first, self._tick, kind="generator-tick")

    def _tick(self):
        n = self.generated
        filler = bytes(self._rng.getrandbits(8) for _ in range(self.spec.dlc - SEQ_BYTES))
        payload = (n % (1 << (8 * SEQ_BYTES))).to_bytes(SEQ_BYTES, "big") + filler
        msg = CanMessage(self.spec.can_id, self.spec.dlc, payload, self.spec.src, self.sim.now())
        self.generated += 1
        self.emit(msg)
        nxt = self.sim.now() + self.spec.period
        if nxt < self.epoch + self.horizon:
            self.sim.schedule(nxt, self._tick, kind="generator-tick")


def start_flow(sim: Simulator, spec: FlowSpec, emit: Callable[[CanMessage], None], horizon: int,
               known_nodes: Optional[Iterable[str]] = None, seed: int = 0, epoch: int = 0) -> Generator:
    if known_nodes is not None:
        known = set(known_nodes)
        for end in (spec.src, spec.dst):
            if end not in known:
                raise ConfigError(f"flow {spec.flow_id}: unknown node {end!r}")
    gen = Generator(sim, spec, emit, horizon, seed=seed, epoch=epoch)
    gen.start()
    return gen


@dataclass
class FlowCounters:
    generated: int = 0
    retransmissions: int = 0
    lost: int = 0
    acked: int = 0


class _Pending:
    __slots__ = ("frame", "first_emit", "retries", "timer")

    def __init__(self, frame):
        self.frame = frame
        self.first_emit = None
        self.retries = 0
        self.timer = None


class ReliableSender:
    """Ack-clocked retransmission for one flow at its source adapter.

    A frame is re-sent ``rto`` after its last emission until acked or
    ``max_retries`` is exhausted. The retransmitted copy keeps the original
    encapsulation; the wait since first emission is charged as ``rp_d``.
    """

    def __init__(self, sim: Simulator, adapter: Adapter, spec: FlowSpec, dst_addr: str,
                 config: ReliabilityConfig, counters: FlowCounters):
        self.sim = sim
        self.adapter = adapter
        self.spec = spec
        self.dst_addr = dst_addr
        self.config = config
        self.counters = counters
        self.pending: dict[int, _Pending] = {}
        self.retransmitted_seqs: set[int] = set()

    def send(self, msg: CanMessage):
        self.counters.generated += 1
        frame = self.adapter.encapsulate(msg, self.dst_addr)
        p = _Pending(frame)
        self.pending[frame.seq] = p
        transit = Transit(frame)
        transit.decomp.e_d = self.adapter.config.e_d
        self.sim.schedule_in(self.adapter.config.e_d, self._first_emit, p, transit, kind="adapter-emit")

    def _first_emit(self, p: _Pending, transit: Transit):
        p.first_emit = self.sim.now()
        self.adapter.transmit(transit)
        self._arm(p)

    def _arm(self, p: _Pending):
        p.timer = self.sim.schedule_in(self.config.rto, self._timeout, p.frame.seq, kind="timer")

    def _timeout(self, seq: int):
        p = self.pending.get(seq)
        if p is None:
            return
        if p.retries >= self.config.max_retries:
            del self.pending[seq]
            self.counters.lost += 1
            log.warning("flow %s seq %d lost after %d retries", self.spec.flow_id, seq, p.retries)
            return
        p.retries += 1
        self.counters.retransmissions += 1
        self.retransmitted_seqs.add(seq)
        d = DelayDecomposition(e_d=self.adapter.config.e_d, rp_d=self.sim.now() - p.first_emit)
        self.adapter.transmit(Transit(p.frame, d))
        self._arm(p)

    def on_ack(self, frame: EthFrame):
        p = self.pending.pop(frame.seq, None)
        if p is None:
            return
        if p.timer is not None:
            p.timer.cancel()
        self.counters.acked += 1

    def unacked(self) -> int:
        return len(self.pending)


class ArrivalLog:
    """Receiver-side log; the first copy of each (flow, seq) counts, later ones are flagged."""

    def __init__(self, epoch: int = 0):
        self.epoch = epoch
        self.records: list[ArrivalRecord] = []
        self._seen: set[tuple[str, int]] = set()
        self.duplicates: dict[str, int] = {}
        self.first_duplicate_at: Optional[int] = None

    def on_receive(self, flow_id: str, msg: CanMessage, t_recv: int, decomp: DelayDecomposition,
                   path_id: str = "", retransmitted: bool = False) -> ArrivalRecord:
        seq = message_seq(msg)
        key = (flow_id, seq)
        dup = key in self._seen
        if dup:
            self.duplicates[flow_id] = self.duplicates.get(flow_id, 0) + 1
            if self.first_duplicate_at is None:
                self.first_duplicate_at = t_recv - self.epoch
        else:
            self._seen.add(key)
        rec = ArrivalRecord(flow_id, seq, msg.gen_time - self.epoch, t_recv - self.epoch, decomp,
                            path_id, retransmitted, dup)
        self.records.append(rec)
        return rec

    def delivered(self, flow_id: str) -> list[ArrivalRecord]:
        return [r for r in self.records if r.flow_id == flow_id and not r.duplicate]

    def duplicate_count(self, flow_id: Optional[str] = None) -> int:
        if flow_id is None:
            return sum(self.duplicates.values())
        return self.duplicates.get(flow_id, 0)


class ReliableReceiver:
    """Acks every Data frame of one flow back to its source."""

    def __init__(self, adapter: Adapter, spec: FlowSpec, src_addr: str):
        self.adapter = adapter
        self.spec = spec
        self.src_addr = src_addr
        self.acks_sent = 0

    def on_data_frame(self, frame: EthFrame):
        ack = EthFrame(self.adapter.addr, self.src_addr, FrameKind.ACK, frame.seq)
        self.acks_sent += 1
        self.adapter.send_control(ack)
