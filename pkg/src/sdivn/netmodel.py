"""Topology documents, links with propagation delay, and failure injection."""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

import jsonschema

from .engine import MS, S, US, Simulator
from .traffic import FlowSpec

log = logging.getLogger(__name__)

DEFAULT_DELAY_US = 1
DEFAULT_BITRATE = 500_000


class TopologyError(ValueError):
    """Invalid topology document; ``path`` locates the offending element."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NodeKind(Enum):
    ECU = "ecu"
    SWITCH = "switch"
    CONTROLLER = "controller"


class LinkState(Enum):
    UP = "up"
    FAILED = "failed"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    ports: tuple[str, ...] = ()
    addr: str = ""
    segment: str = ""

    def port_ids(self) -> list[str]:
        return [f"{self.id}.{p}" for p in self.ports]


@dataclass
class Link:
    id: str
    a: str
    b: str
    prop_delay: int
    state: LinkState = LinkState.UP
    fail_at: Optional[int] = None

    def __post_init__(self):
        if self.prop_delay <= 0:
            raise TopologyError(f"links[{self.id}]", "prop_delay must be positive")
        if self.a == self.b:
            raise TopologyError(f"links[{self.id}]", "a link must join two distinct ports")

    def other(self, port: str) -> str:
        return self.b if port == self.a else self.a


@dataclass(frozen=True)
class Segment:
    id: str
    bitrate: int = DEFAULT_BITRATE
    sides: tuple[frozenset, frozenset] = ()


@dataclass(frozen=True)
class Bridge:
    id: str
    a: str
    b: str


@dataclass(frozen=True)
class Failure:
    target: str
    at: int


@dataclass
class Topology:
    nodes: dict[str, Node]
    links: dict[str, Link]
    flows: list[FlowSpec] = field(default_factory=list)
    duration: int = 60 * S
    failures: list[Failure] = field(default_factory=list)
    segments: dict[str, Segment] = field(default_factory=dict)
    bridges: dict[str, Bridge] = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    warmup: Optional[int] = None
    mode: str = "sdivn"
    name: str = ""
    document: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._port_link: dict[str, str] = {}
        for link in self.links.values():
            self._port_link[link.a] = link.id
            self._port_link[link.b] = link.id

    def link_at(self, port: str) -> Optional[Link]:
        lid = self._port_link.get(port)
        return self.links[lid] if lid else None

    def peer(self, port: str) -> Optional[str]:
        link = self.link_at(port)
        return link.other(port) if link else None

    def nodes_of(self, kind: NodeKind) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind is kind]

    def ecu_port(self, ecu: str) -> str:
        return self.nodes[ecu].port_ids()[0]

    def attachment(self) -> dict[str, str]:
        """ECU id -> the switch port its adapter plugs into."""
        out = {}
        for n in self.nodes_of(NodeKind.ECU):
            if not n.ports:
                continue
            peer = self.peer(self.ecu_port(n.id))
            if peer is not None:
                out[n.id] = peer
        return out

    def switch_links(self) -> list[tuple[str, str, str, int]]:
        """(link id, switch a, switch b, delay) for every Up switch-to-switch link."""
        out = []
        for link in self.links.values():
            na, nb = node_of(link.a), node_of(link.b)
            if link.state is LinkState.UP and \
                    self.nodes[na].kind is NodeKind.SWITCH and self.nodes[nb].kind is NodeKind.SWITCH:
                out.append((link.id, na, nb, link.prop_delay))
        return out


def node_of(port: str) -> str:
    return port.split(".", 1)[0]


def _schema() -> dict:
    text = resources.files("sdivn.scenarios").joinpath("topology.schema.json").read_text()
    return json.loads(text)


def _json_path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def load_topology(document: Union[dict, str, Path]) -> Topology:
    """Build a Topology from a parsed document or a path to a JSON file."""
    if isinstance(document, (str, Path)):
        try:
            document = json.loads(Path(document).read_text())
        except json.JSONDecodeError as exc:
            raise TopologyError("", f"not valid JSON: {exc}") from None
    try:
        jsonschema.validate(document, _schema())
    except jsonschema.ValidationError as exc:
        raise TopologyError(_json_path(exc.absolute_path) or "<document>", exc.message) from None

    nodes: dict[str, Node] = {}
    for i, nd in enumerate(document["nodes"]):
        where = f"nodes[{i}]"
        if nd["id"] in nodes:
            raise TopologyError(f"{where}.id", f"duplicate node id {nd['id']!r}")
        kind = NodeKind(nd["kind"])
        ports = nd.get("ports")
        if ports is None:
            ports = ["eth0"] if kind is NodeKind.ECU and "segment" not in nd else []
        if len(set(ports)) != len(ports):
            raise TopologyError(f"{where}.ports", "duplicate port name")
        nodes[nd["id"]] = Node(nd["id"], kind, tuple(ports), nd.get("addr", ""), nd.get("segment", ""))

    all_ports = {p for n in nodes.values() for p in n.port_ids()}
    links: dict[str, Link] = {}
    used: dict[str, str] = {}
    for i, ld in enumerate(document["links"]):
        where = f"links[{i}]"
        if ld["id"] in links:
            raise TopologyError(f"{where}.id", f"duplicate link id {ld['id']!r}")
        for end in ("a", "b"):
            port = ld[end]
            if port not in all_ports:
                raise TopologyError(f"{where}.{end}", f"dangling port reference {port!r}")
            if port in used:
                raise TopologyError(f"{where}.{end}", f"port {port!r} already used by link {used[port]!r}")
        if ld["a"] == ld["b"]:
            raise TopologyError(f"{where}", "a link must join two distinct ports")
        used[ld["a"]] = used[ld["b"]] = ld["id"]
        links[ld["id"]] = Link(ld["id"], ld["a"], ld["b"], round(ld.get("delay_us", DEFAULT_DELAY_US) * US))

    segments: dict[str, Segment] = {}
    for i, sd in enumerate(document.get("segments", [])):
        where = f"segments[{i}]"
        if sd["id"] in segments or sd["id"] in links:
            raise TopologyError(f"{where}.id", f"duplicate id {sd['id']!r}")
        sides = tuple(frozenset(s) for s in sd.get("sides", ()))
        segments[sd["id"]] = Segment(sd["id"], sd.get("bitrate", DEFAULT_BITRATE), sides)
    bridges: dict[str, Bridge] = {}
    for i, bd in enumerate(document.get("bridges", [])):
        where = f"bridges[{i}]"
        if bd["id"] in bridges or bd["id"] in nodes:
            raise TopologyError(f"{where}.id", f"duplicate id {bd['id']!r}")
        for end in ("a", "b"):
            if bd[end] not in segments:
                raise TopologyError(f"{where}.{end}", f"dangling segment reference {bd[end]!r}")
        if bd["a"] == bd["b"]:
            raise TopologyError(where, "a bridge must join two distinct segments")
        bridges[bd["id"]] = Bridge(bd["id"], bd["a"], bd["b"])
    for i, sd in enumerate(document.get("segments", [])):
        for j, side in enumerate(sd.get("sides", ())):
            for member in side:
                if member not in nodes and member not in bridges:
                    raise TopologyError(f"segments[{i}].sides[{j}]", f"unknown member {member!r}")
    for i, nd in enumerate(document["nodes"]):
        seg = nd.get("segment")
        if seg is not None and seg not in segments:
            raise TopologyError(f"nodes[{i}].segment", f"dangling segment reference {seg!r}")

    mode = document.get("mode") or ("livn" if segments else "sdivn")
    scen = document["scenario"]
    duration = round(scen["duration_s"] * S)
    failures = []
    for i, fd in enumerate(scen.get("failures", [])):
        where = f"scenario.failures[{i}]"
        if fd["link"] not in links and fd["link"] not in segments:
            raise TopologyError(f"{where}.link", f"unknown link or segment {fd['link']!r}")
        at = round(fd["at_s"] * S)
        if at > duration:
            raise TopologyError(f"{where}.at_s", "failure time lies beyond the scenario duration")
        failures.append(Failure(fd["link"], at))

    flows = []
    for i, fd in enumerate(document["flows"]):
        where = f"flows[{i}]"
        for end in ("src", "dst"):
            n = nodes.get(fd[end])
            if n is None or n.kind is not NodeKind.ECU:
                raise TopologyError(f"{where}.{end}", f"unknown ECU {fd[end]!r}")
        try:
            flows.append(FlowSpec(fd["src"], fd["dst"], round(fd["period_ms"] * MS), fd["can_id"],
                                  round(fd.get("start_s", 0) * S), fd.get("id", ""), fd.get("dlc", 8)))
        except ValueError as exc:
            raise TopologyError(where, str(exc)) from None
    ids = [f.flow_id for f in flows]
    if len(set(ids)) != len(ids):
        raise TopologyError("flows", "duplicate flow id")

    warmup = scen.get("warmup_ms")
    topo = Topology(nodes, links, flows, duration, failures, segments, bridges,
                    dict(document.get("timing", {})), None if warmup is None else round(warmup * MS),
                    mode, document.get("name", ""), document)
    if mode == "sdivn":
        _check_switched(topo)
    return topo


def _check_switched(topo: Topology):
    for n in topo.nodes_of(NodeKind.ECU):
        if len(n.ports) != 1:
            raise TopologyError(f"nodes[{n.id}]", "an ECU attaches through exactly one adapter port")
        peer = topo.peer(topo.ecu_port(n.id))
        if peer is None:
            raise TopologyError(f"nodes[{n.id}]", "ECU adapter port is not linked")
        if topo.nodes[node_of(peer)].kind is not NodeKind.SWITCH:
            raise TopologyError(f"nodes[{n.id}]", "ECU adapter must plug into a switch")
    # connectivity over links, ignoring the out-of-band controller
    members = [n.id for n in topo.nodes.values() if n.kind is not NodeKind.CONTROLLER]
    if not members:
        return
    adj: dict[str, set] = {m: set() for m in members}
    for link in topo.links.values():
        a, b = node_of(link.a), node_of(link.b)
        adj[a].add(b)
        adj[b].add(a)
    seen = {members[0]}
    stack = [members[0]]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    missing = sorted(set(members) - seen)
    if missing:
        raise TopologyError("links", f"topology is not connected; unreachable: {', '.join(missing)}")


def bundled_scenario(name: str) -> Path:
    """Path of a scenario document shipped with the package."""
    with resources.as_file(resources.files("sdivn.scenarios").joinpath(name)) as p:
        return Path(p)


class PathError(ValueError):
    pass


def path_nodes(topology: Topology, path: Iterable[str], start: Optional[str] = None) -> list[str]:
    """Node sequence visited by an ordered list of link ids."""
    path = list(path)
    if not path:
        return [start] if start else []
    for lid in path:
        if lid not in topology.links:
            raise PathError(f"unknown link {lid!r}")
    first = topology.links[path[0]]
    ends = [node_of(first.a), node_of(first.b)]
    starts = [start] if start else ends
    for s in starts:
        if s not in ends:
            continue
        seq = [s]
        ok = True
        for lid in path:
            link = topology.links[lid]
            a, b = node_of(link.a), node_of(link.b)
            if seq[-1] == a:
                seq.append(b)
            elif seq[-1] == b:
                seq.append(a)
            else:
                ok = False
                break
        if ok:
            return seq
    raise PathError(f"links {path} do not form a connected chain")


def path_propagation_delay(topology: Topology, path: Iterable[str]) -> int:
    """Sum of per-link propagation delays along a chain of links."""
    path = list(path)
    path_nodes(topology, path)
    return sum(topology.links[lid].prop_delay for lid in path)


class Fabric:
    """Moves frame copies across links and injects link failures.

    Attached handlers implement ``receive(local_port, transit)`` and
    ``port_down(local_port)``. A copy is lost if its link has failed by the
    time it would arrive.
    """

    def __init__(self, sim: Simulator, topology: Topology):
        self.sim = sim
        self.topology = topology
        self.handlers: dict[str, object] = {}
        self.dropped: dict[str, int] = {}
        self.failure_log: list[tuple[int, str]] = []
        self.port_down_log: list[tuple[int, str]] = []

    def attach(self, node_id: str, handler):
        self.handlers[node_id] = handler

    def transmit(self, port: str, transit) -> bool:
        link = self.topology.link_at(port)
        if link is None:
            return False
        arrive = self.sim.now() + link.prop_delay
        if link.fail_at is not None and link.fail_at <= arrive:
            self.dropped[link.id] = self.dropped.get(link.id, 0) + 1
            return False
        self.sim.schedule(arrive, self._arrive, link, link.other(port), transit, kind="frame-arrival")
        return True

    def _arrive(self, link: Link, port: str, transit):
        if link.fail_at is not None and link.fail_at <= self.sim.now():
            self.dropped[link.id] = self.dropped.get(link.id, 0) + 1
            return
        transit.decomp.t_pd += link.prop_delay
        transit.links.append(link.id)
        node, local = port.split(".", 1)
        handler = self.handlers.get(node)
        if handler is not None:
            handler.receive(local, transit)

    def fail_link(self, link_id: str, t: int):
        link = self.topology.links.get(link_id)
        if link is None:
            raise KeyError(f"unknown link {link_id!r}")
        if t < self.sim.now():
            raise ValueError(f"cannot fail {link_id} in the past")
        if link.state is LinkState.FAILED or (link.fail_at is not None and link.fail_at <= t):
            log.warning("link %s is already failed or scheduled to fail; ignoring", link_id)
            return
        link.fail_at = t
        self.sim.schedule(t, self._fail, link, kind="link-fail")

    def _fail(self, link: Link):
        if link.state is LinkState.FAILED:
            return
        link.state = LinkState.FAILED
        now = self.sim.now()
        self.failure_log.append((now, link.id))
        for port in (link.a, link.b):
            self.sim.schedule(now, self._port_down, port, kind="port-down")

    def _port_down(self, port: str):
        self.port_down_log.append((self.sim.now(), port))
        node, local = port.split(".", 1)
        handler = self.handlers.get(node)
        if handler is not None:
            handler.port_down(local)
