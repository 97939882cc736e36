import itertools

import pytest

from sdivn.adapter import EthFrame, FrameKind, Transit
from sdivn.engine import US, Simulator
from sdivn.switch import (DROP, FLOOD, Bucket, FlowEntry, FlowTable, Group, GroupEntry, Match, Output,
                          PortAdmin, Switch, SwitchConfig, lookup, resolve_group, select_bucket)


def frame(dst="CAN4"):
    return EthFrame("CAN3", dst, FrameKind.DATA, 0)


def test_lookup_priority_and_miss():
    t = FlowTable([
        FlowEntry(10, Match(dst_addr="CAN4"), Output("p2")),
        FlowEntry(100, Match(in_port="h3", dst_addr="CAN4"), Output("p1")),
    ])
    assert lookup(t, "h3", frame()) == Output("p1")
    assert lookup(t, "h1", frame()) == Output("p2")
    assert lookup(t, "h3", frame("CAN9")) is None


def test_same_priority_and_match_replaces():
    t = FlowTable()
    t.add(FlowEntry(10, Match(dst_addr="x"), Output("a")))
    t.add(FlowEntry(10, Match(dst_addr="x"), Output("b")))
    assert len(t) == 1 and lookup(t, "p", frame("x")) == Output("b")


def oracle_bucket(n, live_set):
    for i in range(n):
        if f"w{i}" in live_set:
            return i
    return None


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_group_resolution_exhaustive_truth_table(n):
    group = GroupEntry(1, tuple(Bucket(f"w{i}", (Output(f"o{i}"),)) for i in range(n)))
    ports = [f"w{i}" for i in range(n)]
    for r in range(n + 1):
        for live in itertools.combinations(ports, r):
            live_set = set(live)
            expected = oracle_bucket(n, live_set)
            assert select_bucket(group, {p: p in live_set for p in ports}) == expected
            actions = resolve_group(group, lambda p: p in live_set)
            assert actions == ((DROP,) if expected is None else (Output(f"o{expected}"),))


def test_group_needs_buckets():
    with pytest.raises(ValueError):
        GroupEntry(1, ())


class Recorder:
    def __init__(self):
        self.sent = []

    def transmit(self, port, transit):
        self.sent.append(port)


def make_switch():
    sim = Simulator()
    fab = Recorder()
    sw = Switch(sim, "sw_in", ["h3", "p1", "p2"], SwitchConfig(10 * US, 50 * US), fab)
    sw.add_group(GroupEntry(1, (Bucket("p1", (Output("p1"),)), Bucket("p2", (Output("p2"),)))))
    sw.table.add(FlowEntry(100, Match(dst_addr="CAN4"), Group(1)))
    return sim, sw, fab


@pytest.mark.parametrize("phys1,admin1,phys2,admin2", list(itertools.product(
    [True, False], list(PortAdmin), [True, False], list(PortAdmin))))
def test_switch_liveness_combines_phys_and_admin(phys1, admin1, phys2, admin2):
    sim, sw, fab = make_switch()
    sw.phys_up.update(p1=phys1, p2=phys2)
    sw.admin.update(p1=admin1, p2=admin2)
    live1 = phys1 and admin1 is not PortAdmin.DISABLED
    live2 = phys2 and admin2 is not PortAdmin.DISABLED
    sw.receive("h3", Transit(frame()))
    sim.run_until(100 * US)
    expected = ["sw_in.p1"] if live1 else (["sw_in.p2"] if live2 else [])
    assert fab.sent == expected
    assert sw.group_exhausted == (0 if expected else 1)


def test_forwarding_delay_and_hop_accounting():
    sim, sw, fab = make_switch()
    t = Transit(frame())
    sw.receive("h3", t)
    sim.run_until(10 * US - 1)
    assert fab.sent == []
    sim.run_until(10 * US)
    assert fab.sent == ["sw_in.p1"]
    assert (t.decomp.f_d_total, t.decomp.hops) == (10 * US, 1)


def test_port_failure_detected_after_df_d():
    sim, sw, fab = make_switch()
    sw.port_down("p1")
    sim.run_until(49 * US)
    sw.receive("h3", Transit(frame()))       # processed at 59 us, after detection
    sim.run_until(50 * US - 1)
    assert sw.is_live("p1")
    sim.run_until(100 * US)
    assert not sw.is_live("p1")
    assert sw.liveness_log == [(50 * US, "p1", False)]
    assert fab.sent == ["sw_in.p2"]


def test_table_miss_without_controller_drops():
    sim, sw, fab = make_switch()
    sw.receive("h3", Transit(frame("CAN9")))
    sim.run_until(100 * US)
    assert sw.packet_ins == 1 and sw.dropped == 1 and fab.sent == []


def test_flood_skips_ingress_and_dead_ports():
    sim, sw, fab = make_switch()
    sw.admin["p2"] = PortAdmin.DISABLED
    sw.apply([FLOOD], "h3", Transit(frame()))
    assert fab.sent == ["sw_in.p1"]


def test_snapshot_is_stable():
    _, sw, _ = make_switch()
    snap = sw.snapshot()
    assert snap == make_switch()[1].snapshot()
    assert "group id=1 type=fast_failover selected=0" in snap
    assert "bucket 1 watch=p2 live=1 actions=output:p2" in snap
