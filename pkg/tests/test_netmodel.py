
import pytest

from sdivn.adapter import EthFrame, FrameKind, Transit
from sdivn.engine import S, US, Simulator
from sdivn.netmodel import (Fabric, LinkState, NodeKind, PathError, TopologyError, bundled_scenario,
                            load_topology, path_nodes, path_propagation_delay)

from conftest import diamond_doc


def test_bundled_diamond_loads(diamond):
    assert len(diamond.nodes_of(NodeKind.SWITCH)) == 4
    assert len(diamond.nodes_of(NodeKind.ECU)) == 4
    assert diamond.duration == 60 * S
    assert [(f.target, f.at) for f in diamond.failures] == [("PATH1_MID", 30 * S)]
    assert diamond.attachment()["CAN3"] == "sw_in.h3"
    assert diamond.links["PATH1_MID"].prop_delay == US
    assert [f.flow_id for f in diamond.flows] == ["obstacle", "road"]


def test_livn_documents_load():
    bus = load_topology(bundled_scenario("livn_bus.json"))
    assert bus.mode == "livn"
    assert bus.segments["BUS"].sides == (frozenset({"CAN1", "CAN3"}), frozenset({"CAN2", "CAN4"}))
    ring = load_topology(bundled_scenario("livn_ring.json"))
    assert len(ring.bridges) == 3


def broken(mutator):
    doc = diamond_doc()
    mutator(doc)
    with pytest.raises(TopologyError) as err:
        load_topology(doc)
    return err.value


def test_duplicate_node_id_names_offender():
    err = broken(lambda d: d["nodes"].append({"id": "CAN1", "kind": "ecu"}))
    assert err.path == "nodes[9].id"
    assert "duplicate" in str(err)


def test_dangling_port_reference():
    def mut(d):
        d["links"][0]["b"] = "sw_in.zz"
    err = broken(mut)
    assert err.path == "links[0].b"
    assert "sw_in.zz" in str(err)


def test_schema_violation_reports_location():
    def mut(d):
        d["flows"][0]["period_ms"] = -1
    err = broken(mut)
    assert err.path == "flows[0].period_ms"


def test_unknown_top_level_key():
    err = broken(lambda d: d.update(extra=1))
    assert "extra" in str(err)


def test_failure_beyond_duration():
    def mut(d):
        d["scenario"]["failures"][0]["at_s"] = 61
    err = broken(mut)
    assert err.path == "scenario.failures[0].at_s"


def test_unknown_failure_target_and_flow_endpoint():
    def fail_target(d):
        d["scenario"]["failures"][0]["link"] = "NOPE"
    assert broken(fail_target).path == "scenario.failures[0].link"

    def flow_end(d):
        d["flows"][1]["dst"] = "sw_out"
    assert broken(flow_end).path == "flows[1].dst"


def test_disconnected_topology():
    def mut(d):
        d["nodes"].append({"id": "sw_x", "kind": "switch", "ports": ["a"]})
    err = broken(mut)
    assert "sw_x" in str(err)


def test_ecu_must_plug_into_switch():
    def mut(d):
        d["links"] = [l for l in d["links"] if l["id"] != "CAN1_ACC"]
    err = broken(mut)
    assert "CAN1" in err.path


def test_invalid_json(tmp_path):
    p = tmp_path / "t.json"
    p.write_text("{nope")
    with pytest.raises(TopologyError):
        load_topology(p)


def test_path_helpers(diamond):
    assert path_nodes(diamond, ["PATH1_MID", "PATH1_EGR"]) == ["sw_in", "sw_p1", "sw_out"]
    assert path_nodes(diamond, ["PATH1_EGR", "PATH1_MID"], start="sw_out") == ["sw_out", "sw_p1", "sw_in"]
    assert path_propagation_delay(diamond, ["PATH1_MID", "PATH1_EGR"]) == 2 * US
    with pytest.raises(PathError):
        path_nodes(diamond, ["PATH1_MID", "PATH2_EGR"])


class Sink:
    def __init__(self):
        self.got = []
        self.down = []

    def receive(self, port, transit):
        self.got.append((port, transit))

    def port_down(self, port):
        self.down.append(port)


def fabric_with_sinks():
    topo = load_topology(diamond_doc())
    sim = Simulator()
    fab = Fabric(sim, topo)
    sinks = {n: Sink() for n in topo.nodes}
    for n, s in sinks.items():
        fab.attach(n, s)
    return sim, fab, sinks


def frame():
    return Transit(EthFrame("a", "b", FrameKind.DATA, 0))


def test_fabric_delivers_after_propagation_delay():
    sim, fab, sinks = fabric_with_sinks()
    tr = frame()
    fab.transmit("sw_in.p1", tr)
    sim.run_until(US - 1)
    assert sinks["sw_p1"].got == []
    sim.run_until(US)
    port, got = sinks["sw_p1"].got[0]
    assert port == "a" and got.decomp.t_pd == US and got.links == ["PATH1_MID"]


def test_failure_drops_in_flight_and_later_frames_and_notifies_ends():
    sim, fab, sinks = fabric_with_sinks()
    fab.fail_link("PATH1_MID", 10 * US)
    sim.run_until(9 * US + 500)
    fab.transmit("sw_in.p1", frame())      # would arrive after the failure
    sim.run_until(20 * US)
    fab.transmit("sw_in.p1", frame())
    sim.run_until(30 * US)
    assert sinks["sw_p1"].got == []
    assert fab.dropped["PATH1_MID"] == 2
    assert sinks["sw_in"].down == ["p1"] and sinks["sw_p1"].down == ["a"]
    assert fab.topology.links["PATH1_MID"].state is LinkState.FAILED


def test_frame_arriving_before_failure_survives():
    sim, fab, sinks = fabric_with_sinks()
    fab.fail_link("PATH1_MID", 10 * US)
    sim.run_until(8 * US)
    fab.transmit("sw_in.p1", frame())       # arrives at 9 us
    sim.run_until(30 * US)
    assert len(sinks["sw_p1"].got) == 1


def test_repeated_failure_is_ignored(caplog):
    sim, fab, sinks = fabric_with_sinks()
    fab.fail_link("PATH1_MID", 10 * US)
    fab.fail_link("PATH1_MID", 20 * US)
    sim.run_until(30 * US)
    assert fab.failure_log == [(10 * US, "PATH1_MID")]
    assert "already" in caplog.text
