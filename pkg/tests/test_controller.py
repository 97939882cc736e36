import itertools
import random

import pytest

from sdivn import US, load_topology
from sdivn.controller import (InvalidPathPair, NoDisjointPaths, PathPair, compute_disjoint_paths,
                              disjoint_pair)
from sdivn.netmodel import path_nodes
from sdivn.switch import FlowEntry, Group, PortAdmin


def simple_paths(edges, s, t):
    """Every simple s-t path as a tuple of edge ids (edges are undirected)."""
    adj = {}
    for lid, u, v, w in edges:
        adj.setdefault(u, []).append((lid, v))
        adj.setdefault(v, []).append((lid, u))
    out = []

    def walk(node, seen, path):
        if node == t:
            out.append(tuple(path))
            return
        for lid, nxt in adj.get(node, ()):
            if nxt not in seen:
                walk(nxt, seen | {nxt}, path + [lid])

    walk(s, {s}, [])
    return out


def brute_force_pair_weight(edges, s, t):
    weight = {lid: w for lid, _, _, w in edges}
    paths = simple_paths(edges, s, t)
    best = None
    for a, b in itertools.combinations(paths, 2):
        if set(a) & set(b):
            continue
        total = sum(weight[l] for l in a) + sum(weight[l] for l in b)
        best = total if best is None else min(best, total)
    return best


def check_against_oracle(edges, s, t):
    weight = {lid: w for lid, _, _, w in edges}
    oracle = brute_force_pair_weight(edges, s, t)
    if oracle is None:
        with pytest.raises(NoDisjointPaths):
            disjoint_pair(edges, s, t)
        return
    p1, p2 = disjoint_pair(edges, s, t)
    assert not set(p1) & set(p2)
    ends = {lid: (u, v) for lid, u, v, _ in edges}
    for p in (p1, p2):
        node = s
        for lid in p:
            u, v = ends[lid]
            assert node in (u, v)
            node = v if node == u else u
        assert node == t
    w1, w2 = sum(weight[l] for l in p1), sum(weight[l] for l in p2)
    assert w1 + w2 == oracle
    assert w1 <= w2


def test_trap_topology_defeats_remove_and_retry():
    # the lone shortest path s-a-b-t blocks every second path, yet two disjoint paths exist
    edges = [("sa", "s", "a", 1), ("ab", "a", "b", 1), ("bt", "b", "t", 1),
             ("sb", "s", "b", 2), ("at", "a", "t", 2)]
    p1, p2 = disjoint_pair(edges, "s", "t")
    assert sorted([p1, p2]) == [["sa", "at"], ["sb", "bt"]]
    check_against_oracle(edges, "s", "t")


def test_exhaustive_small_graphs():
    nodes = ["n0", "n1", "n2", "n3"]
    pairs = list(itertools.combinations(nodes, 2))
    for mask in range(1 << len(pairs)):
        for weights in ((1,) * len(pairs), (1, 3, 2, 5, 1, 4)):
            edges = [(f"e{i}", u, v, weights[i]) for i, (u, v) in enumerate(pairs) if mask >> i & 1]
            if not edges:
                continue
            check_against_oracle(edges, "n0", "n3")


@pytest.mark.parametrize("seed", range(300))
def test_random_graphs_up_to_eight_switches(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 8)
    nodes = [f"s{i}" for i in range(n)]
    edges = []
    for i in range(rng.randint(1, min(14, n * (n - 1) // 2 + 2))):
        u, v = rng.sample(nodes, 2)
        edges.append((f"L{i}", u, v, rng.randint(1, 6)))
    s, t = rng.sample(nodes, 2)
    if not any(s in e[1:3] for e in edges):
        edges.append(("Ls", s, nodes[0] if nodes[0] != s else nodes[1], 1))
    check_against_oracle(edges, s, t)


def test_no_second_path():
    with pytest.raises(NoDisjointPaths):
        disjoint_pair([("a", "s", "m", 1), ("b", "m", "t", 1)], "s", "t")
    with pytest.raises(NoDisjointPaths):
        disjoint_pair([("a", "s", "m", 1)], "s", "t")


def test_same_switch_gives_empty_paths():
    assert disjoint_pair([("a", "s", "t", 1)], "s", "s") == ([], [])


def test_diamond_paths(diamond):
    pair = compute_disjoint_paths(diamond, "sw_in", "sw_out")
    assert pair.path1 == ("PATH1_MID", "PATH1_EGR")
    assert pair.path2 == ("PATH2_MID", "PATH2_EGR")
    assert path_nodes(diamond, pair.path1, "sw_in")[-1] == "sw_out"
    with pytest.raises(KeyError):
        compute_disjoint_paths(diamond, "sw_in", "CAN4")


def test_path_pair_must_be_disjoint():
    with pytest.raises(InvalidPathPair):
        PathPair(("a", "b"), ("b", "c"))


def test_rules_installed_before_traffic(diamond_normal):
    ctrl = diamond_normal.controller
    assert ctrl.installed_at is not None and ctrl.installed_at <= diamond_normal.epoch
    sw_in = diamond_normal.switches["sw_in"]
    entry = next(e for e in sw_in.table if e.match.dst_addr == "CAN4" and e.priority == 100)
    assert isinstance(entry.action, Group)
    group = sw_in.groups[entry.action.group_id]
    assert [b.watch_port for b in group.buckets] == ["p1", "p2"]


def test_steady_state_has_no_controller_traffic(diamond_normal):
    ctrl = diamond_normal.controller
    assert all(t < diamond_normal.epoch for t in ctrl.packet_in_log)
    assert "port_status" not in diamond_normal.control_text()


def test_switchover_timing(diamond_failure):
    ctrl = diamond_failure.controller
    epoch = diamond_failure.epoch
    t = diamond_failure.timing
    fail_at = epoch + diamond_failure.failures[0].at
    switch_time = fail_at + t.df_d + t.c_d + t.rn_d
    enabled_after = {(sw, p) for when, sw, p, st in ctrl.timeline if when == switch_time and st is PortAdmin.ENABLED}
    assert ("sw_in", "p2") in enabled_after and ("sw_out", "p2") in enabled_after
    disabled = {(sw, p) for when, sw, p, st in ctrl.timeline if st is PortAdmin.DISABLED}
    assert disabled == {("sw_in", "p1"), ("sw_p1", "a"), ("sw_p1", "b"), ("sw_out", "p1")}
    assert "reconfigure" in diamond_failure.control_text()


def test_both_paths_broken_retires_pair():
    from conftest import diamond_doc
    from sdivn import run, S
    from sdivn.netmodel import Failure
    topo = load_topology(diamond_doc())
    res = run(topo, duration=2 * S, failures=[Failure("PATH1_MID", S), Failure("PATH2_EGR", S + 500 * US)])
    rec = next(iter(res.controller.pairs.values()))
    assert rec.active is None
    # messages after the second failure cannot be delivered
    assert res.counters["obstacle"].lost > 0
