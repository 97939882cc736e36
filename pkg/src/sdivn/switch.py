"""OpenFlow-style switch: one flow table, fast-failover groups, port liveness."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence, Union

from .adapter import EthFrame, Transit
from .engine import US, Simulator, fmt_time

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Output:
    port: str

    def __str__(self):
        return f"output:{self.port}"


@dataclass(frozen=True)
class Group:
    group_id: int

    def __str__(self):
        return f"group:{self.group_id}"


@dataclass(frozen=True)
class Flood:
    def __str__(self):
        return "flood"


@dataclass(frozen=True)
class Drop:
    def __str__(self):
        return "drop"


FLOOD = Flood()
DROP = Drop()
Action = Union[Output, Group, Flood, Drop]


@dataclass(frozen=True)
class Match:
    in_port: Optional[str] = None
    dst_addr: Optional[str] = None

    def matches(self, in_port: str, frame: EthFrame) -> bool:
        return ((self.in_port is None or self.in_port == in_port)
                and (self.dst_addr is None or self.dst_addr == frame.dst_addr))

    def __str__(self):
        parts = []
        if self.in_port is not None:
            parts.append(f"in_port={self.in_port}")
        if self.dst_addr is not None:
            parts.append(f"dst={self.dst_addr}")
        return ",".join(parts) or "any"


@dataclass(frozen=True)
class FlowEntry:
    priority: int
    match: Match
    action: Action
    cookie: str = ""


class FlowTable:
    """Entries kept in descending priority; a later install with the same
    priority and match replaces the earlier one."""

    def __init__(self, entries: Sequence[FlowEntry] = ()):
        self.entries: list[FlowEntry] = []
        for e in entries:
            self.add(e)

    def add(self, entry: FlowEntry):
        self.entries = [e for e in self.entries if (e.priority, e.match) != (entry.priority, entry.match)]
        self.entries.append(entry)
        # stable: among equal priorities the earliest install wins
        self.entries.sort(key=lambda e: -e.priority)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def lookup(table: FlowTable, in_port: str, frame: EthFrame) -> Optional[Action]:
    """Action of the highest-priority matching entry, or None on table miss."""
    for entry in table.entries:
        if entry.match.matches(in_port, frame):
            return entry.action
    return None


@dataclass(frozen=True)
class Bucket:
    watch_port: str
    actions: tuple


@dataclass(frozen=True)
class GroupEntry:
    id: int
    buckets: tuple
    kind: str = "fast_failover"

    def __post_init__(self):
        if not self.buckets:
            raise ValueError(f"group {self.id} needs at least one bucket")


def select_bucket(group: GroupEntry, live: Union[Mapping[str, bool], Callable[[str], bool]]) -> Optional[int]:
    is_live = live if callable(live) else (lambda p: bool(live.get(p, False)))
    for i, b in enumerate(group.buckets):
        if is_live(b.watch_port):
            return i
    return None


def resolve_group(group: GroupEntry, live) -> tuple:
    """Actions of the first bucket whose watch port is live; ``(DROP,)`` if none."""
    i = select_bucket(group, live)
    return (DROP,) if i is None else tuple(group.buckets[i].actions)


class PortAdmin(Enum):
    ENABLED = "enabled"    # carries the active path
    STANDBY = "standby"    # physically usable backup, not the active path
    DISABLED = "disabled"  # administratively shut; treated as dead


@dataclass(frozen=True)
class SwitchConfig:
    f_d: int = 10 * US
    df_d: int = 50 * US

    def __post_init__(self):
        if self.f_d < 0 or self.df_d < 0:
            raise ValueError("switch delays must be non-negative")


class Switch:
    """Dataplane of one switch.

    Frames are looked up and forwarded ``f_d`` after arrival. A physical port
    failure becomes visible to the switch ``df_d`` later; until then frames
    can still be sent into the dead link.
    """

    def __init__(self, sim: Simulator, node_id: str, ports: Sequence[str],
                 config: SwitchConfig = SwitchConfig(), fabric=None, controller=None):
        self.sim = sim
        self.id = node_id
        self.ports = list(ports)
        self.config = config
        self.fabric = fabric
        self.controller = controller
        self.table = FlowTable()
        self.groups: dict[int, GroupEntry] = {}
        self.phys_up = {p: True for p in self.ports}
        self.admin = {p: PortAdmin.ENABLED for p in self.ports}
        self.dropped = 0
        self.group_exhausted = 0
        self.packet_ins = 0
        self.emitted: dict[str, int] = {p: 0 for p in self.ports}
        self.liveness_log: list[tuple[int, str, bool]] = []

    def is_live(self, port: str) -> bool:
        return self.phys_up.get(port, False) and self.admin.get(port) is not PortAdmin.DISABLED

    def add_group(self, group: GroupEntry):
        for b in group.buckets:
            if b.watch_port not in self.phys_up:
                raise ValueError(f"{self.id}: watch port {b.watch_port!r} is not a port of this switch")
        self.groups[group.id] = group

    def set_admin(self, port: str, state: PortAdmin):
        self.admin[port] = state

    # dataplane

    def receive(self, in_port: str, transit: Transit):
        self.sim.schedule_in(self.config.f_d, self.process, in_port, transit, kind="switch-forward")

    def process(self, in_port: str, transit: Transit):
        transit.decomp.f_d_total += self.config.f_d
        transit.decomp.hops += 1
        action = lookup(self.table, in_port, transit.frame)
        if action is None:
            self.packet_ins += 1
            if self.controller is None:
                self.dropped += 1
                return
            self.controller.packet_in(self, in_port, transit)
            return
        self.apply([action], in_port, transit)

    def apply(self, actions, in_port: str, transit: Transit):
        """Execute an action list now (also used for controller packet-out)."""
        for act in actions:
            if isinstance(act, Output):
                self._emit(act.port, transit)
            elif isinstance(act, Group):
                group = self.groups.get(act.group_id)
                if group is None or select_bucket(group, self.is_live) is None:
                    self.group_exhausted += 1
                    self.dropped += 1
                    continue
                self.apply(resolve_group(group, self.is_live), in_port, transit)
            elif isinstance(act, Flood):
                for p in self.ports:
                    if p != in_port and self.is_live(p):
                        self._emit(p, transit.fork())
            else:
                self.dropped += 1

    def _emit(self, port: str, transit: Transit):
        if not self.is_live(port):
            self.dropped += 1
            return
        self.emitted[port] = self.emitted.get(port, 0) + 1
        if self.fabric is not None:
            self.fabric.transmit(f"{self.id}.{port}", transit)

    def port_down(self, port: str):
        """Physical loss of ``port``; detected ``df_d`` later."""
        self.sim.schedule_in(self.config.df_d, self._detect_down, port, kind="port-detect")

    def _detect_down(self, port: str):
        if not self.phys_up.get(port, False):
            return
        self.phys_up[port] = False
        self.liveness_log.append((self.sim.now(), port, False))
        if self.controller is not None:
            self.controller.port_status(self, port, down=True)

    def snapshot(self) -> str:
        """Human-readable table dump with a stable field order."""
        lines = [f"switch {self.id}"]
        for p in self.ports:
            lines.append(f"  port {p} phys={'up' if self.phys_up[p] else 'down'} admin={self.admin[p].value}")
        for e in self.table:
            lines.append(f"  flow prio={e.priority} match={e.match} action={e.action}"
                         + (f" cookie={e.cookie}" if e.cookie else ""))
        for gid in sorted(self.groups):
            g = self.groups[gid]
            sel = select_bucket(g, self.is_live)
            lines.append(f"  group id={gid} type={g.kind} selected={'none' if sel is None else sel}")
            for i, b in enumerate(g.buckets):
                acts = ",".join(str(a) for a in b.actions)
                lines.append(f"    bucket {i} watch={b.watch_port} live={int(self.is_live(b.watch_port))} actions={acts}")
        return "\n".join(lines)


def snapshot_block(t: int, reason: str, switches) -> str:
    body = "\n".join(sw.snapshot() for sw in switches)
    return f"== t={fmt_time(t)} {reason}\n{body}\n"
