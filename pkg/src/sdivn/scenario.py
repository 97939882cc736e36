"""Assemble and run complete SDIVN or LIVN experiments from a topology."""

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .adapter import BROADCAST, Adapter, AdapterConfig, EthFrame, FrameKind
from .controller import Controller, ControllerConfig
from .engine import MS, US, Simulator, fmt_time
from .livn import BusBridge, BusFrame, BusSegment, StormReport, storm_monitor
from .metrics import (aggregate, afcp, afcp_pct, closure_violations, frequency_integrity, packets_csv,
                      summary_csv, UndefinedAverage)
from .netmodel import Failure, Fabric, NodeKind, Topology, TopologyError
from .switch import Switch, SwitchConfig, snapshot_block
from .traffic import (ArrivalLog, FlowCounters, ReliabilityConfig, ReliableReceiver, ReliableSender,
                      message_seq, start_flow)

log = logging.getLogger(__name__)

DEFAULT_WARMUP = 10 * MS
FREQ_TOLERANCE = 0.05


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class TimingConfig:
    e_d: int = 5 * US
    d_d: int = 5 * US
    f_d: int = 10 * US
    df_d: int = 50 * US
    c_d: int = 100 * US
    rn_d: int = 20 * US
    rto: int = 2 * MS
    max_retries: int = 5

    @classmethod
    def from_document(cls, timing: dict) -> "TimingConfig":
        base = cls()
        kw = {}
        for key, value in timing.items():
            if key.endswith("_us"):
                kw[key[:-3]] = round(value * US)
            elif key.endswith("_ms"):
                kw[key[:-3]] = round(value * MS)
            else:
                kw[key] = value
        return replace(base, **kw)


def _digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def config_keys(topology: Topology, mode: str, duration: int, failures: Sequence[Failure],
                timing: TimingConfig, seed: int, warmup: int) -> tuple[str, str]:
    """(full config hash, pairing key). The pairing key ignores the failure schedule."""
    doc = copy.deepcopy(topology.document)
    doc.get("scenario", {}).pop("failures", None)
    doc.get("scenario", {}).pop("duration_s", None)
    doc.pop("timing", None)
    doc.get("scenario", {}).pop("warmup_ms", None)
    base = {"doc": doc, "mode": mode, "duration": duration, "timing": asdict(timing),
            "seed": seed, "warmup": warmup}
    pair = _digest(base)
    full = _digest({**base, "failures": [(f.target, f.at) for f in failures]})
    return full, pair


@dataclass
class RunResult:
    mode: str
    topology: Topology
    timing: TimingConfig
    duration: int
    failures: list
    seed: int
    epoch: int
    arrivals: ArrivalLog
    counters: dict
    config_hash: str
    pair_key: str
    sim: Simulator = None
    control_log: Optional[object] = None
    snapshots: list = field(default_factory=list)
    controller: Optional[Controller] = None
    switches: dict = field(default_factory=dict)
    fabric: Optional[Fabric] = None
    segments: dict = field(default_factory=dict)
    storm: Optional[StormReport] = None
    wall_time: float = 0.0

    @property
    def records(self):
        return self.arrivals.records

    def flows(self):
        return self.topology.flows

    def delivered(self, flow_id: str) -> int:
        return len(self.arrivals.delivered(flow_id))

    def arrival_times(self, flow_id: str) -> list[int]:
        return [r.t_recv for r in self.arrivals.delivered(flow_id)]

    def integrity(self, flow, tolerance: float = FREQ_TOLERANCE):
        return frequency_integrity(self.arrival_times(flow.flow_id), flow.period, tolerance,
                                   horizon=self.duration)

    def summary_rows(self) -> list[dict]:
        rows = []
        leg = "failure" if self.failures else "normal"
        for f in self.flows():
            fid = f.flow_id
            c = self.counters[fid]
            row = {"flow_id": fid, "leg": leg, "generated": c.generated, "lost": c.lost,
                   "duplicates": self.arrivals.duplicate_count(fid),
                   "retransmissions": c.retransmissions, "config_hash": self.config_hash}
            try:
                agg = aggregate(self.records, fid)
                row.update(K=agg.k, TT_d_ns=agg.tt_d, ATT_ns=agg.att)
            except UndefinedAverage:
                row.update(K=0)
            rep = self.integrity(f)
            row["freq_integrity"] = f"{rep.fraction:.6f}"
            row["truncated"] = int(rep.truncated)
            rows.append(row)
        return rows

    def control_text(self) -> str:
        header = f"# config_hash={self.config_hash} mode={self.mode}\n"
        if self.control_log is None:
            return header
        return header + self.control_log.text()

    def snapshot_text(self) -> str:
        return f"# config_hash={self.config_hash}\n" + "".join(self.snapshots)

    def meta(self) -> dict:
        return {
            "mode": self.mode, "topology": self.topology.name, "duration_ns": self.duration,
            "failures": [{"target": f.target, "at_ns": f.at} for f in self.failures],
            "seed": self.seed, "timing": asdict(self.timing), "epoch_ns": self.epoch,
            "config_hash": self.config_hash, "pair_key": self.pair_key,
            "flows": [{"id": f.flow_id, "period_ns": f.period, "src": f.src, "dst": f.dst}
                      for f in self.flows()],
        }


def _check(result: RunResult):
    bad = closure_violations(result.records)
    if bad:
        r = bad[0]
        raise InvariantViolation(f"{len(bad)} records break the delay decomposition, e.g. flow "
                                 f"{r.flow_id} seq {r.seq}")
    for f in result.flows():
        c = result.counters[f.flow_id]
        inflight = c.generated - result.delivered(f.flow_id) - c.lost
        if inflight < 0:
            raise InvariantViolation(f"flow {f.flow_id}: more deliveries than generated messages")


def run(topology: Topology, mode: Optional[str] = None, duration: Optional[int] = None,
        failures: Optional[Sequence[Failure]] = None, timing: Optional[TimingConfig] = None,
        seed: int = 0, trace: bool = False) -> RunResult:
    """Run one leg. Arguments left as None fall back to the topology document."""
    # links carry failure state, so every run works on its own copy
    topology = copy.deepcopy(topology)
    mode = mode or topology.mode
    duration = topology.duration if duration is None else duration
    failures = list(topology.failures if failures is None else failures)
    timing = timing or TimingConfig.from_document(topology.timing)
    for f in failures:
        if not 0 <= f.at <= duration:
            raise TopologyError("scenario.failures", f"failure of {f.target} at {f.at} ns is outside the run")
    if mode == "sdivn":
        return _run_sdivn(topology, duration, failures, timing, seed, trace)
    if mode == "livn":
        return _run_livn(topology, duration, failures, timing, seed, trace)
    raise ValueError(f"unknown mode {mode!r}")


def _run_sdivn(topo, duration, failures, timing, seed, trace) -> RunResult:
    if not topo.links:
        raise TopologyError("links", "a switched run needs links")
    for f in failures:
        if f.target not in topo.links:
            raise TopologyError("scenario.failures", f"unknown link {f.target!r}")
    wall = time.perf_counter()
    epoch = DEFAULT_WARMUP if topo.warmup is None else topo.warmup
    sim = Simulator(trace=trace)
    fabric = Fabric(sim, topo)
    addr = {n.id: (n.addr or n.id) for n in topo.nodes_of(NodeKind.ECU)}
    ctrl = Controller(sim, topo, ControllerConfig(timing.c_d, timing.rn_d),
                      protected=[(addr[f.src], addr[f.dst]) for f in topo.flows], epoch=epoch)
    switches = {}
    for n in topo.nodes_of(NodeKind.SWITCH):
        sw = Switch(sim, n.id, n.ports, SwitchConfig(timing.f_d, timing.df_d), fabric)
        ctrl.register(sw)
        fabric.attach(n.id, sw)
        switches[n.id] = sw
    adapters = {}
    for n in topo.nodes_of(NodeKind.ECU):
        ad = Adapter(sim, n.id, AdapterConfig(timing.e_d, timing.d_d, addr[n.id]), fabric, topo.ecu_port(n.id))
        fabric.attach(n.id, ad)
        adapters[n.id] = ad

    full, pair = config_keys(topo, "sdivn", duration, failures, timing, seed, epoch)
    arrivals = ArrivalLog(epoch)
    counters = {f.flow_id: FlowCounters() for f in topo.flows}
    rel = ReliabilityConfig(timing.rto, timing.max_retries)
    senders = {}      # (src ecu, dst addr) -> sender
    receivers = {}    # (dst ecu, src addr) -> (flow, receiver)
    for f in topo.flows:
        senders[(f.src, addr[f.dst])] = ReliableSender(sim, adapters[f.src], f, addr[f.dst], rel,
                                                       counters[f.flow_id])
        receivers[(f.dst, addr[f.src])] = (f, ReliableReceiver(adapters[f.dst], f, addr[f.src]))

    def bind(ecu):
        ad = adapters[ecu]

        def on_frame(frame, transit):
            if frame.kind is FrameKind.ACK:
                s = senders.get((ecu, frame.src_addr))
                if s is not None:
                    s.on_ack(frame)
            elif frame.kind is FrameKind.DATA:
                entry = receivers.get((ecu, frame.src_addr))
                if entry is not None:
                    entry[1].on_data_frame(frame)

        def on_data(msg, frame, transit):
            entry = receivers.get((ecu, frame.src_addr))
            if entry is None:
                return
            arrivals.on_receive(entry[0].flow_id, msg, sim.now(), transit.decomp,
                                ctrl.path_id(transit.links), transit.decomp.rp_d > 0)

        ad.on_frame = on_frame
        ad.on_data = on_data

    for ecu in adapters:
        bind(ecu)

    result = RunResult("sdivn", topo, timing, duration, failures, seed, epoch, arrivals, counters, full, pair,
                       sim=sim, control_log=ctrl.log, controller=ctrl, switches=switches, fabric=fabric)
    ordered = [switches[k] for k in sorted(switches)]

    def snap(reason):
        result.snapshots.append(snapshot_block(sim.now() - epoch, reason, ordered))

    ctrl.on_reconfigure = snap
    snap("boot")
    for ecu, ad in sorted(adapters.items()):
        ad.send_control(EthFrame(ad.addr, BROADCAST, FrameKind.ANNOUNCE, 0))
    sim.schedule(epoch, snap, "traffic start", kind="snapshot")
    for f in topo.flows:
        start_flow(sim, f, senders[(f.src, addr[f.dst])].send, duration, known_nodes=topo.nodes,
                   seed=seed, epoch=epoch)
    for fl in failures:
        fabric.fail_link(fl.target, epoch + fl.at)

    sim.run_until(epoch)
    if topo.flows and (ctrl.installed_at is None or ctrl.installed_at > epoch):
        raise InvariantViolation("controller had not installed failover rules by the end of warm-up")
    warm_messages = ctrl.messages
    sim.run_until(epoch + duration)

    for f in topo.flows:
        retx = senders[(f.src, addr[f.dst])].retransmitted_seqs
        for r in arrivals.records:
            if r.flow_id == f.flow_id and r.seq in retx:
                r.retransmitted = True
    if not failures and ctrl.messages != warm_messages:
        raise InvariantViolation("controller traffic in steady state without any failure")
    result.wall_time = time.perf_counter() - wall
    _check(result)
    return result


def _run_livn(topo, duration, failures, timing, seed, trace) -> RunResult:
    if not topo.segments:
        raise TopologyError("segments", "a bus run needs at least one segment")
    for f in failures:
        if f.target not in topo.segments:
            raise TopologyError("scenario.failures", f"unknown segment {f.target!r}")
    wall = time.perf_counter()
    sim = Simulator(trace=trace)
    segments = {s.id: BusSegment(sim, s.id, s.bitrate, s.sides) for s in topo.segments.values()}
    arrivals = ArrivalLog(0)
    counters = {f.flow_id: FlowCounters() for f in topo.flows}
    by_dst: dict[str, list] = {}
    for f in topo.flows:
        by_dst.setdefault(f.dst, []).append(f)

    def receiver(ecu):
        def on_receive(frame: BusFrame, seg):
            for f in by_dst.get(ecu, ()):
                if f.src == frame.msg.src_ecu and f.can_id == frame.msg.can_id:
                    arrivals.on_receive(f.flow_id, frame.msg, sim.now(), frame.decomp, f"bus:{seg.id}")
        return on_receive

    ecu_segment = {}
    for n in topo.nodes_of(NodeKind.ECU):
        if not n.segment:
            raise TopologyError(f"nodes[{n.id}]", "ECU is not attached to a bus segment")
        segments[n.segment].attach(n.id, receiver(n.id))
        ecu_segment[n.id] = segments[n.segment]
    bridges = [BusBridge(b.id, segments[b.a], segments[b.b]) for b in topo.bridges.values()]

    full, pair = config_keys(topo, "livn", duration, failures, timing, seed, 0)

    def emitter(f):
        seg = ecu_segment[f.src]

        def emit(msg):
            counters[f.flow_id].generated += 1
            seg.transmit(f.src, BusFrame(msg))
        return emit

    for f in topo.flows:
        start_flow(sim, f, emitter(f), duration, known_nodes=topo.nodes, seed=seed)
    for fl in failures:
        segments[fl.target].sever(fl.at)
    sim.run_until(duration)

    # undelivered originals that are no longer queued anywhere are lost
    queued: dict[str, set] = {f.flow_id: set() for f in topo.flows}
    for seg in segments.values():
        for can_id, _, sender, frame in seg._pending:
            for f in topo.flows:
                if f.src == frame.msg.src_ecu and f.can_id == can_id:
                    queued[f.flow_id].add(message_seq(frame.msg))
    for f in topo.flows:
        got = {r.seq for r in arrivals.delivered(f.flow_id)}
        c = counters[f.flow_id]
        c.lost = c.generated - len(got) - len(queued[f.flow_id] - got)

    result = RunResult("livn", topo, timing, duration, failures, seed, 0, arrivals, counters, full, pair,
                       sim=sim, segments=segments)
    result.storm = storm_monitor(segments.values(), arrivals) if bridges else None
    result.wall_time = time.perf_counter() - wall
    _check(result)
    return result


# --- paired comparison ---------------------------------------------------------

@dataclass
class Comparison:
    normal: RunResult
    failure: RunResult
    rows: list

    def row(self, flow_id: str) -> dict:
        return next(r for r in self.rows if r["flow_id"] == flow_id)


def compare_runs(normal: RunResult, failure: RunResult) -> Comparison:
    rows = []
    for f in failure.flows():
        fid = f.flow_id
        n = aggregate(normal.records, fid)
        x = aggregate(failure.records, fid)
        cost = afcp(x.att, n.att, failure.pair_key, normal.pair_key)
        c = failure.counters[fid]
        rows.append({
            "flow_id": fid, "leg": "paired", "K": x.k, "TT_d_ns": x.tt_d, "ATT_ns": x.att,
            "ATTN_p_ns": n.att, "ATTF_p_ns": x.att, "AFCP_p_ns": cost,
            "AFCP_pct": afcp_pct(cost, n.att), "generated": c.generated, "lost": c.lost,
            "duplicates": failure.arrivals.duplicate_count(fid), "retransmissions": c.retransmissions,
            "freq_integrity": f"{failure.integrity(f).fraction:.6f}",
            "truncated": int(failure.integrity(f).truncated), "config_hash": failure.pair_key,
        })
    return Comparison(normal, failure, rows)


def compare(topology: Topology, mode: Optional[str] = None, duration: Optional[int] = None,
            failures: Optional[Sequence[Failure]] = None, timing: Optional[TimingConfig] = None,
            seed: int = 0) -> Comparison:
    """Normal leg (no failures) and failure leg under otherwise identical config."""
    failure = run(topology, mode, duration, failures, timing, seed)
    normal = run(topology, mode, duration, [], timing, seed)
    return compare_runs(normal, failure)


def write_artifacts(result: RunResult, out: Path):
    """packets.csv, summary.csv, control.log, tables.txt and run.json under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"config_hash={result.config_hash}"
    (out / "packets.csv").write_text(packets_csv(result.records, tag))
    (out / "summary.csv").write_text(summary_csv(result.summary_rows(), tag))
    (out / "control.log").write_text(result.control_text())
    (out / "tables.txt").write_text(result.snapshot_text())
    meta = result.meta()
    if result.storm is not None:
        meta["storm"] = {
            "first_duplicate_ns": result.storm.first_duplicate_at,
            "outage_ns": result.storm.outage_at,
            "peak_utilization": {k: float(v) for k, v in result.storm.peak_utilization.items()},
        }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def write_comparison(cmp: Comparison, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_artifacts(cmp.normal, out / "normal")
    write_artifacts(cmp.failure, out / "failure")
    (out / "summary.csv").write_text(summary_csv(cmp.rows, f"pair_key={cmp.failure.pair_key}"))
