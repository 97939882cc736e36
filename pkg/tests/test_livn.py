from fractions import Fraction

import pytest

from sdivn.adapter import CanMessage
from sdivn.engine import MS, S, US, Simulator
from sdivn.livn import (BusBridge, BusFrame, BusSegment, first_saturation, frame_bits, frame_time,
                        peak_utilization, rolling_utilization, storm_monitor)
from sdivn.traffic import ArrivalLog


def msg(can_id, src="A", t=0, seq=0):
    return CanMessage(can_id, 8, seq.to_bytes(2, "big") + bytes(6), src, t)


def bus(sim, nodes=("A", "B", "C"), sides=()):
    seg = BusSegment(sim, "BUS", 500_000, sides)
    got = {n: [] for n in nodes}
    for n in nodes:
        seg.attach(n, lambda f, s, n=n: got[n].append((sim.now(), f)))
    return seg, got


def test_frame_occupancy():
    assert frame_bits(8) == 108
    assert frame_time(8, 500_000) == 216 * US
    assert frame_time(0, 500_000) == 88 * US
    assert frame_time(8, 1_000_000) == 108 * US


def test_broadcast_reaches_everyone_but_sender():
    sim = Simulator()
    seg, got = bus(sim)
    seg.transmit("A", BusFrame(msg(0x100)))
    sim.run_until(S)
    assert got["A"] == []
    assert [t for t, _ in got["B"]] == [216 * US]
    assert [t for t, _ in got["C"]] == [216 * US]
    assert got["B"][0][1].decomp.bus_d == 216 * US


def test_arbitration_lowest_id_wins():
    sim = Simulator()
    seg, got = bus(sim)
    seg.transmit("B", BusFrame(msg(0x200, "B")))
    seg.transmit("A", BusFrame(msg(0x100, "A")))
    sim.run_until(S)
    order = [(t, f.msg.can_id) for t, f in got["C"]]
    assert order == [(216 * US, 0x100), (432 * US, 0x200)]
    assert got["C"][1][1].decomp.bus_d == 432 * US


def test_busy_medium_defers_later_higher_priority():
    sim = Simulator()
    seg, got = bus(sim)
    seg.transmit("B", BusFrame(msg(0x200, "B")))
    sim.schedule(100 * US, seg.transmit, "A", BusFrame(msg(0x100, "A")))
    sim.run_until(S)
    assert [f.msg.can_id for _, f in got["C"]] == [0x200, 0x100]


def test_single_node_segment_delivers_nothing():
    sim = Simulator()
    seg, got = bus(sim, nodes=("A",))
    seg.transmit("A", BusFrame(msg(1)))
    sim.run_until(S)
    assert got["A"] == [] and seg.transmitted == 1


def test_severance_partitions_sides():
    sim = Simulator()
    seg, got = bus(sim, nodes=("A", "B", "C", "D"), sides=[["A", "C"], ["B", "D"]])
    seg.sever(MS)
    seg.transmit("A", BusFrame(msg(1)))
    sim.schedule(2 * MS, seg.transmit, "A", BusFrame(msg(1, seq=1)))
    sim.run_until(S)
    assert len(got["B"]) == 1 and len(got["D"]) == 1
    assert len(got["C"]) == 2                      # same side keeps working


def test_sever_at_zero_blocks_everything_across():
    sim = Simulator()
    seg, got = bus(sim, nodes=("A", "B"), sides=[["A"], ["B"]])
    seg.sever(0)
    seg.transmit("A", BusFrame(msg(1)))
    sim.run_until(S)
    assert got["B"] == []


def test_arbitration_is_deterministic():
    def schedule():
        sim = Simulator()
        seg, got = bus(sim, nodes=("A", "B", "C", "D"))
        for i, (who, cid) in enumerate([("A", 5), ("B", 3), ("C", 3), ("A", 1)]):
            sim.schedule((i % 2) * 50 * US, seg.transmit, who, BusFrame(msg(cid, who)))
        sim.run_until(S)
        return [(t, f.msg.can_id, f.msg.src_ecu) for t, f in got["D"]]

    assert schedule() == schedule()


def ring(sim, n):
    segs = [BusSegment(sim, f"S{i}") for i in range(n)]
    log = ArrivalLog()
    segs[0].attach("TX", lambda f, s: None)
    segs[-1].attach("RX", lambda f, s: log.on_receive("f", f.msg, sim.now(), f.decomp))
    bridges = [BusBridge(f"B{i}", segs[i], segs[(i + 1) % n]) for i in range(n)]
    return segs, log, bridges


def test_single_frame_recirculates_in_three_segment_ring():
    sim = Simulator()
    segs, log, _ = ring(sim, 3)
    segs[0].transmit("TX", BusFrame(msg(0x100)))
    sim.run_until(10 * MS)
    first, second = log.records[0], log.records[1]
    assert first.t_recv == 2 * 216 * US      # via the short way round
    assert second.duplicate
    assert second.t_recv == 3 * 216 * US     # the long way, first re-circulation
    assert log.first_duplicate_at == 3 * 216 * US
    counts = [sum(1 for r in log.records[:k] if r.duplicate) for k in range(len(log.records))]
    assert counts == sorted(counts)


def test_rolling_utilization_helpers():
    busy = [(0, 500_000_000), (600_000_000, 1_000_000_000)]
    assert rolling_utilization(busy, S) == Fraction(9, 10)
    assert rolling_utilization(busy, S // 2) == Fraction(1, 2)     # still the full window
    assert peak_utilization(busy) == Fraction(9, 10)
    assert first_saturation(busy, 0.9) == S
    assert first_saturation(busy, 0.95) is None
    full = [(i * 216 * US, (i + 1) * 216 * US) for i in range(5000)]
    assert first_saturation(full, 0.99) == 4584 * 216 * US


def test_acyclic_chain_never_exceeds_offered_load():
    sim = Simulator()
    a, b = BusSegment(sim, "A"), BusSegment(sim, "B")
    a.attach("TX", lambda f, s: None)
    log = ArrivalLog()
    b.attach("RX", lambda f, s: log.on_receive("f", f.msg, sim.now(), f.decomp))
    BusBridge("BR", a, b)
    for k in range(40):
        sim.schedule(k * 50 * MS, a.transmit, "TX", BusFrame(msg(1, "TX", seq=k)))
    sim.run_until(3 * S)
    rep = storm_monitor([a, b], log)
    offered = Fraction(21 * 216 * US, S)
    assert all(p <= offered for p in rep.peak_utilization.values())
    assert rep.outage is None and rep.first_duplicate_at is None
    assert len(log.records) == 40
