"""Controller applications: learning switch, disjoint path pairs, fast failover.

The fast-failover application installs, for every protected flow, a group
at the ingress switch whose first bucket watches the primary egress port and
whose second bucket points down the backup path. When a switch reports a
port going down, the controller shuts every port of the broken path and
marks the backup path as the active one, so the two paths are never both
enabled.
"""

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .adapter import BROADCAST, Transit
from .engine import US, Simulator, fmt_time
from .netmodel import NodeKind, Topology, node_of, path_nodes
from .switch import FLOOD, Bucket, FlowEntry, Group, GroupEntry, Match, Output, PortAdmin, Switch

log = logging.getLogger(__name__)

LEARN_PRIORITY = 10
FAILOVER_PRIORITY = 100


class NoDisjointPaths(Exception):
    pass


class InvalidPathPair(ValueError):
    pass


@dataclass(frozen=True)
class PathPair:
    path1: tuple
    path2: tuple

    def __post_init__(self):
        shared = set(self.path1) & set(self.path2)
        if shared:
            raise InvalidPathPair(f"paths share links {sorted(shared)}")

    def reversed(self) -> "PathPair":
        return PathPair(tuple(reversed(self.path1)), tuple(reversed(self.path2)))


@dataclass(frozen=True)
class ControllerConfig:
    c_d: int = 100 * US
    rn_d: int = 20 * US

    def __post_init__(self):
        if self.c_d < 0 or self.rn_d < 0:
            raise ValueError("controller delays must be non-negative")


# --- disjoint pair computation ----------------------------------------------

Edge = tuple  # (link_id, u, v, weight)


def _dijkstra(edges: Sequence[Edge], s, t):
    adj: dict = {}
    for lid, u, v, w in edges:
        adj.setdefault(u, []).append((lid, v, w))
        adj.setdefault(v, []).append((lid, u, w))
    best = {s: (0, 0)}
    pred: dict = {}
    heap = [(0, 0, str(s), s)]
    done = set()
    while heap:
        d, h, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            break
        for lid, v, w in sorted(adj.get(u, ()), key=lambda x: (str(x[1]), x[0])):
            cand = (d + w, h + 1)
            if v not in best or cand < best[v]:
                best[v] = cand
                pred[v] = (lid, u)
                heapq.heappush(heap, (cand[0], cand[1], str(v), v))
    if t not in best:
        return None
    path = []
    node = t
    while node != s:
        lid, u = pred[node]
        path.append((lid, u, node))
        node = u
    return path[::-1]


def _bellman_ford(arcs: Sequence[Edge], nodes, s, t):
    dist = {n: None for n in nodes}
    dist[s] = 0
    pred: dict = {}
    for _ in range(len(dist)):
        changed = False
        for lid, u, v, w in arcs:
            du = dist.get(u)
            if du is None:
                continue
            if dist.get(v) is None or du + w < dist[v]:
                dist[v] = du + w
                pred[v] = (lid, u)
                changed = True
        if not changed:
            break
    if dist.get(t) is None:
        return None
    path = []
    node = t
    seen = set()
    while node != s:
        if node in seen:
            raise RuntimeError("negative cycle in residual graph")
        seen.add(node)
        lid, u = pred[node]
        path.append((lid, u, node))
        node = u
    return path[::-1]


def disjoint_pair(edges: Sequence[Edge], s, t) -> tuple[list, list]:
    """Minimum total-weight pair of link-disjoint s-t paths in an undirected multigraph.

    Shortest path first, then a second shortest path in the residual graph
    where the first path's links are reversed with negated weight; links the
    two traverse in opposite directions cancel out. Returns two lists of
    link ids, lighter path first.
    """
    if s == t:
        return [], []
    weight = {lid: w for lid, _, _, w in edges}
    p1 = _dijkstra(edges, s, t)
    if p1 is None:
        raise NoDisjointPaths(f"{t} is unreachable from {s}")
    on_p1 = {lid: (u, v) for lid, u, v in p1}
    arcs = []
    for lid, u, v, w in edges:
        if lid in on_p1:
            pu, pv = on_p1[lid]
            arcs.append((lid, pv, pu, -w))
        else:
            arcs.append((lid, u, v, w))
            arcs.append((lid, v, u, w))
    nodes = {u for _, u, _, _ in edges} | {v for _, _, v, _ in edges}
    p2 = _bellman_ford(arcs, nodes, s, t)
    if p2 is None:
        raise NoDisjointPaths(f"no two link-disjoint paths between {s} and {t}")
    cancelled = {lid for lid, _, _ in p2 if lid in on_p1}
    out: dict = {}
    for lid, u, v in p1 + p2:
        if lid in cancelled:
            continue
        out.setdefault(u, []).append((lid, v))
    for u in out:
        out[u].sort(key=lambda x: x[0])
    paths = []
    for _ in range(2):
        node, path, visited = s, [], {s}
        while node != t:
            lid, nxt = out[node].pop(0)
            if nxt in visited:
                raise RuntimeError("path decomposition produced a cycle")
            visited.add(nxt)
            path.append(lid)
            node = nxt
        paths.append(path)
    paths.sort(key=lambda p: (sum(weight[l] for l in p), len(p), p))
    return paths[0], paths[1]


def compute_disjoint_paths(topology: Topology, src_switch: str, dst_switch: str) -> PathPair:
    for sw in (src_switch, dst_switch):
        node = topology.nodes.get(sw)
        if node is None or node.kind is not NodeKind.SWITCH:
            raise KeyError(f"unknown switch {sw!r}")
    p1, p2 = disjoint_pair(topology.switch_links(), src_switch, dst_switch)
    return PathPair(tuple(p1), tuple(p2))


# --- controller ---------------------------------------------------------------

@dataclass
class PairRecord:
    pair: PathPair
    ports: tuple  # (frozenset of (switch, port) on path1, same for path2)
    flows: list = field(default_factory=list)
    active: Optional[int] = 0
    pending: bool = False
    backup_lost: bool = False

    @property
    def name(self) -> str:
        return "+".join(self.pair.path1) + "|" + "+".join(self.pair.path2)


class ControlLog:
    def __init__(self):
        self.lines: list[str] = []

    def write(self, t: int, event: str, **fields):
        detail = " ".join(f"{k}={v}" for k, v in fields.items())
        self.lines.append(f"{fmt_time(t)} {event} {detail}".rstrip())

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


class Controller:
    """Out-of-band SDN controller; every handled message costs ``c_d``."""

    def __init__(self, sim: Simulator, topology: Topology, config: ControllerConfig = ControllerConfig(),
                 protected: Iterable[tuple[str, str]] = (), epoch: int = 0):
        self.sim = sim
        self.topology = topology
        self.config = config
        self.protected = list(protected)
        self.epoch = epoch
        self.log = ControlLog()
        self.switches: dict[str, Switch] = {}
        self.mac: dict[str, dict[str, str]] = {}
        self.hosts: dict[str, tuple[str, str]] = {}
        self._flooded: dict[str, set] = {}
        self.pairs: dict[tuple, PairRecord] = {}
        self.timeline: list[tuple[int, str, str, PortAdmin]] = []
        self.packet_in_log: list[int] = []
        self.messages = 0
        self.installed_at: Optional[int] = None
        self.on_reconfigure: Optional[Callable[[str], None]] = None
        self._next_group: dict[str, int] = {}
        self._groups_by_ports: dict[tuple, int] = {}

    def register(self, switch: Switch):
        self.switches[switch.id] = switch
        switch.controller = self
        self.mac.setdefault(switch.id, {})

    def _t(self) -> int:
        return self.sim.now() - self.epoch

    # learning switch

    def packet_in(self, switch: Switch, in_port: str, transit: Transit):
        self.messages += 1
        self.packet_in_log.append(self.sim.now())
        transit.decomp.c_d_total += self.config.c_d
        self.sim.schedule_in(self.config.c_d, self.handle_packet_in, switch, in_port, transit, kind="packet-in")

    def handle_packet_in(self, switch: Switch, in_port: str, transit: Transit):
        """Learn the sender's port, then forward (installing a rule) or flood."""
        frame = transit.frame
        table = self.mac.setdefault(switch.id, {})
        flood_key = (frame.src_addr, frame.dst_addr, frame.kind, frame.seq)
        flooded = self._flooded.setdefault(switch.id, set())
        if flood_key in flooded:
            # copy of a frame this switch already flooded: came around a loop
            self.log.write(self._t(), "packet_in", switch=switch.id, in_port=in_port,
                           frame=frame.describe().replace(" ", "_"), decision="drop_loop")
            switch.dropped += 1
            return None
        table[frame.src_addr] = in_port
        if self._host_facing(switch.id, in_port) and frame.src_addr != BROADCAST:
            self.hosts.setdefault(frame.src_addr, (switch.id, in_port))
        out = table.get(frame.dst_addr)
        if out is not None and out != in_port:
            action = Output(out)
            switch.table.add(FlowEntry(LEARN_PRIORITY, Match(dst_addr=frame.dst_addr), action, "learn"))
            self.log.write(self._t(), "packet_in", switch=switch.id, in_port=in_port,
                           frame=frame.describe().replace(" ", "_"), decision=str(action))
            self.log.write(self._t(), "install_flow", switch=switch.id, prio=LEARN_PRIORITY,
                           match=f"dst={frame.dst_addr}", action=str(action))
        else:
            action = FLOOD
            flooded.add(flood_key)
            self.log.write(self._t(), "packet_in", switch=switch.id, in_port=in_port,
                           frame=frame.describe().replace(" ", "_"), decision="flood")
        switch.apply([action], in_port, transit)
        self._maybe_run_failover()
        return action

    def _host_facing(self, switch_id: str, port: str) -> bool:
        peer = self.topology.peer(f"{switch_id}.{port}")
        return peer is not None and self.topology.nodes[node_of(peer)].kind is NodeKind.ECU

    # fast failover application

    def _maybe_run_failover(self):
        if self.installed_at is not None or not self.protected:
            return
        if not all(a in self.hosts and b in self.hosts for a, b in self.protected):
            return
        self.run_failover_app()

    def run_failover_app(self):
        for src, dst in self.protected:
            src_sw, _ = self.hosts[src]
            dst_sw, _ = self.hosts[dst]
            pair = compute_disjoint_paths(self.topology, src_sw, dst_sw)
            self.install_failover_rules((src, dst), pair)
            self.install_failover_rules((dst, src), pair.reversed())
        self.installed_at = self.sim.now()
        self._apply_initial_admin()
        if self.on_reconfigure is not None:
            self.on_reconfigure("failover rules installed")

    def _walk(self, start: str, path: Sequence[str]) -> list[tuple[str, str, str]]:
        """(switch, in_port, out_port) per hop; in_port is None at ``start``."""
        nodes = path_nodes(self.topology, path, start=start)
        hops = []
        in_port = None
        for i, lid in enumerate(path):
            link = self.topology.links[lid]
            here = nodes[i]
            out = link.a if node_of(link.a) == here else link.b
            hops.append((here, in_port, out.split(".", 1)[1]))
            in_port = link.other(out).split(".", 1)[1]
        return hops + [(nodes[-1], in_port, None)]

    def _path_ports(self, path: Sequence[str]) -> frozenset:
        ports = set()
        for lid in path:
            link = self.topology.links[lid]
            for p in (link.a, link.b):
                ports.add(tuple(p.split(".", 1)))
        return frozenset(ports)

    def install_failover_rules(self, flow: tuple[str, str], paths: PathPair):
        src_addr, dst_addr = flow
        if src_addr not in self.hosts or dst_addr not in self.hosts:
            raise KeyError(f"endpoints of {flow} have not been discovered")
        src_sw, _ = self.hosts[src_addr]
        dst_sw, dst_port = self.hosts[dst_addr]
        for path in (paths.path1, paths.path2):
            for lid in path:
                link = self.topology.links.get(lid)
                if link is None:
                    raise InvalidPathPair(f"unknown link {lid!r}")
                for p in (link.a, link.b):
                    if node_of(p) not in self.switches:
                        raise InvalidPathPair(f"link {lid} touches {node_of(p)!r}, which is not a managed switch")
        if bool(paths.path1) != bool(paths.path2):
            raise InvalidPathPair("exactly one path is empty")
        if not paths.path1:
            if src_sw != dst_sw:
                raise InvalidPathPair("empty paths but endpoints sit on different switches")
            self._install(src_sw, FlowEntry(FAILOVER_PRIORITY, Match(dst_addr=dst_addr), Output(dst_port), "ff"))
            return
        hops1 = self._walk(src_sw, paths.path1)
        hops2 = self._walk(src_sw, paths.path2)
        for hops in (hops1, hops2):
            if hops[-1][0] != dst_sw:
                raise InvalidPathPair(f"path ends at {hops[-1][0]}, expected {dst_sw}")
        primary, backup = hops1[0][2], hops2[0][2]
        gid = self._group(src_sw, primary, backup)
        self._install(src_sw, FlowEntry(FAILOVER_PRIORITY, Match(dst_addr=dst_addr), Group(gid), "ff"))
        for hops in (hops1, hops2):
            for sw, in_port, out_port in hops[1:-1]:
                self._install(sw, FlowEntry(FAILOVER_PRIORITY, Match(in_port=in_port, dst_addr=dst_addr),
                                            Output(out_port), "ff"))
        self._install(dst_sw, FlowEntry(FAILOVER_PRIORITY, Match(dst_addr=dst_addr), Output(dst_port), "ff"))
        key = (frozenset(paths.path1), frozenset(paths.path2))
        rec = self.pairs.get(key)
        if rec is None:
            rec = PairRecord(PathPair(tuple(paths.path1), tuple(paths.path2)),
                             (self._path_ports(paths.path1), self._path_ports(paths.path2)), active=1)
            self.pairs[key] = rec
        rec.flows.append(flow)

    def _group(self, sw: str, primary: str, backup: str) -> int:
        key = (sw, primary, backup)
        gid = self._groups_by_ports.get(key)
        if gid is not None:
            return gid
        gid = self._next_group.get(sw, 1)
        self._next_group[sw] = gid + 1
        group = GroupEntry(gid, (Bucket(primary, (Output(primary),)), Bucket(backup, (Output(backup),))))
        self.switches[sw].add_group(group)
        self._groups_by_ports[key] = gid
        self.log.write(self._t(), "install_group", switch=sw, group=gid, type="fast_failover",
                       buckets=f"{primary},{backup}")
        return gid

    def _install(self, sw: str, entry: FlowEntry):
        self.switches[sw].table.add(entry)
        self.log.write(self._t(), "install_flow", switch=sw, prio=entry.priority, match=str(entry.match),
                       action=str(entry.action))

    def _set_admin(self, ports: Iterable[tuple[str, str]], state: PortAdmin):
        now = self.sim.now()
        for sw, port in sorted(ports):
            switch = self.switches.get(sw)
            if switch is None:
                continue
            switch.set_admin(port, state)
            self.timeline.append((now, sw, port, state))

    def _apply_initial_admin(self):
        enabled, standby = set(), set()
        for rec in self.pairs.values():
            enabled |= rec.ports[0]
            standby |= rec.ports[1]
        self._set_admin(standby - enabled, PortAdmin.STANDBY)
        self._set_admin(enabled, PortAdmin.ENABLED)

    def port_status(self, switch: Switch, port: str, down: bool):
        self.messages += 1
        self.sim.schedule_in(self.config.c_d, self.handle_port_status, switch.id, port, down, kind="port-status")

    def handle_port_status(self, switch_id: str, port: str, down: bool):
        self.log.write(self._t(), "port_status", switch=switch_id, port=port, down=int(down))
        sw = self.switches.get(switch_id)
        if sw is None or port not in sw.ports:
            log.warning("port status for unknown port %s.%s ignored", switch_id, port)
            self.log.write(self._t(), "ignored", reason="unknown_port", switch=switch_id, port=port)
            return
        if not down:
            return
        key = (switch_id, port)
        for rec in self.pairs.values():
            if rec.active in (1, 2) and key in rec.ports[rec.active - 1]:
                if rec.pending:
                    continue
                rec.pending = True
                self.sim.schedule_in(self.config.rn_d, self._switch_over, rec, kind="reconfigure")
            elif rec.active == 1 and key in rec.ports[1] and not rec.backup_lost:
                rec.backup_lost = True
                self.sim.schedule_in(self.config.rn_d, self._retire_backup, rec, kind="reconfigure")

    def _switch_over(self, rec: PairRecord):
        failed = rec.active
        rec.pending = False
        dead = rec.ports[failed - 1]
        other = rec.ports[2 - failed]
        self._set_admin(dead, PortAdmin.DISABLED)
        if failed == 1 and not rec.backup_lost:
            self._set_admin(other, PortAdmin.ENABLED)
            rec.active = 2
        else:
            rec.active = None
        self.log.write(self._t(), "reconfigure", pair=rec.name, disabled=f"path{failed}",
                       active="none" if rec.active is None else f"path{rec.active}")
        if self.on_reconfigure is not None:
            self.on_reconfigure(f"path{failed} disabled")

    def _retire_backup(self, rec: PairRecord):
        if rec.active != 1:
            return
        self._set_admin(rec.ports[1], PortAdmin.DISABLED)
        self.log.write(self._t(), "reconfigure", pair=rec.name, disabled="path2", active="path1")
        if self.on_reconfigure is not None:
            self.on_reconfigure("path2 disabled")

    def path_id(self, links: Sequence[str]) -> str:
        used = set(links)
        for rec in self.pairs.values():
            if used & set(rec.pair.path1):
                return "path1"
            if used & set(rec.pair.path2):
                return "path2"
        return ""
