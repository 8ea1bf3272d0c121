import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpips.headerspace import Sink, TransferFunction, apply_transfer, expected_trajectories, trace_header
from dpips.netmodel import CONTROLLER, Action, ActionType, FlowRule, ForwardingDevice, build_snapshot
from dpips.patterns import HeaderPattern, HeaderSpace
from dpips.sim.topologies import line
from dpips.verify import check_snapshot, exhaustive_paths, random_network
from strategies import WIDTH, headers_of, pattern_text, spaces

P = HeaderPattern.parse


def _device(rules, ports=(1, 2, 3)):
    return ForwardingDevice("d", ports, tuple(rules))


def test_single_wildcard_rule_forwards_everything():
    tf = TransferFunction(_device([FlowRule(P("xxx"), Action.forward(2))]), 3)
    assert [(o, str(h)) for o, h in apply_transfer(tf, HeaderSpace.of("101"), 1)] == [(2, "101")]


def test_priority_partition_example():
    # brute force over all eight headers: 1xx hits the drop rule first, 0xx falls to forward
    rules = [FlowRule(P("1xx"), Action.drop(), 2), FlowRule(P("xxx"), Action.forward(2), 1)]
    out = apply_transfer(TransferFunction(_device(rules), 3), HeaderSpace.full(3), 1)
    assert [(o, str(h)) for o, h in out] == [(2, "0xx"), (Sink.DROP, "1xx")]


def test_empty_table_sends_all_to_default_drop():
    out = apply_transfer(TransferFunction(_device([]), 3), HeaderSpace.full(3), 1)
    assert [(o, str(h)) for o, h in out] == [(Sink.DROP, "xxx")]


def test_controller_action_maps_to_sink():
    rules = [FlowRule(P("11x"), Action.to_controller(), 1), FlowRule(P("xxx"), Action.forward(3))]
    out = dict(apply_transfer(TransferFunction(_device(rules), 3), HeaderSpace.full(3), 1))
    assert str(out[Sink.CONTROLLER]) == "11x"
    assert headers_of(out[3]) == set(range(8)) - {6, 7}


_actions = st.sampled_from(["fwd1", "fwd2", "fwd3", "drop", "ctl"])


def _action(name):
    return {"drop": Action.drop(), "ctl": Action.to_controller()}.get(name) or Action.forward(int(name[-1]))


@given(st.lists(st.tuples(pattern_text(), _actions, st.integers(0, 3), st.sampled_from([None, 1, 2])), max_size=7),
       spaces(), st.sampled_from([1, 2, 3]))
def test_apply_transfer_partitions_input(specs, hs, in_port):
    rules = [FlowRule(P(m), _action(a), prio, ip) for m, a, prio, ip in specs]
    dev = _device(rules)
    if hs.is_empty():
        return
    out = apply_transfer(TransferFunction(dev, WIDTH), hs, in_port)
    seen: set[int] = set()
    for o, space in out:
        got = headers_of(space)
        assert not got & seen
        seen |= got
        for h in got:
            rule = dev.lookup(h, in_port)
            if rule is None or rule.action.type is ActionType.DROP:
                assert o is Sink.DROP
            elif rule.action.type is ActionType.CONTROLLER:
                assert o is Sink.CONTROLLER
            else:
                assert o == rule.action.port
    assert seen == headers_of(hs)


def test_apply_transfer_width_mismatch():
    from dpips.patterns import WidthMismatch
    with pytest.raises(WidthMismatch):
        apply_transfer(TransferFunction(_device([]), 3), HeaderSpace.full(4), 1)


def test_figure1_branches_at_c(fig1):
    port = fig1.host_ports("a")[0]
    hs, E = expected_trajectories(fig1, "a", "c1", port)
    assert E == {("a", "b", "c", "d", "e", "c1"), ("a", "b", "c", "i", "e", "c1")}
    assert str(hs) == "10010x10 ∪ 10011x10"


def test_all_drop_source_reaches_nothing(fig1):
    from dpips.netmodel import NetworkState
    state = NetworkState.from_snapshot(fig1)
    state.set_rules("a", [FlowRule(HeaderPattern.wildcard(8), Action.drop())])
    snap = state.snapshot()
    r = expected_trajectories(snap, "a", "c1", snap.host_ports("a")[0])
    assert r.header_space.is_empty() and not r.trajectories


def _wildcard_line():
    fwd = lambda port: [{"match": "xxx", "action": "forward", "port": port}]
    return build_snapshot(line(3, header_bits=3), {"header_bits": 3, "rules": {"a": fwd(1), "b": fwd(2), "c": fwd(2)}})


def test_wildcard_line_has_single_trajectory():
    snap = _wildcard_line()
    hs, E = expected_trajectories(snap, "a", "c", 2)
    assert E == {("a", "b", "c")}
    assert hs.count() == 8
    # frozen from exhaustive simulation of all eight headers
    truth = exhaustive_paths(snap, "a", 2)
    assert {d: {p: sorted(v) for p, v in m.items()} for d, m in truth.items()} == {"c": {("a", "b", "c"): list(range(8))}}


def test_source_equals_destination_rejected(fig1):
    with pytest.raises(ValueError):
        expected_trajectories(fig1, "a", "a", 1)


def test_loops_are_reported_not_followed():
    # a and b bounce every header back and forth
    snap = build_snapshot(line(2, header_bits=3), {"header_bits": 3, "rules": {
        "a": [{"match": "xxx", "action": "forward", "port": 1}],
        "b": [{"match": "xxx", "action": "forward", "port": 1}],
    }})
    r = expected_trajectories(snap, "a", "b", 2)
    assert not r.trajectories
    assert r.loops == (("a", "b", "a"),)


def test_controller_is_a_destination(aarnet):
    snap = aarnet.snapshot
    dev = sorted(snap.devices)[0]
    r = expected_trajectories(snap, dev, CONTROLLER, snap.host_ports(dev)[0])
    assert r.trajectories == {(dev, CONTROLLER)}


@given(st.integers(0, 2**32 - 1))
def test_no_expected_trajectory_revisits_a_device(seed):
    snap = random_network(np.random.default_rng(seed), max_devices=6, max_bits=8)
    for src in snap.devices:
        for port in snap.devices[src].ports:
            for dst in list(snap.devices) + [CONTROLLER]:
                if dst == src:
                    continue
                for path in expected_trajectories(snap, src, dst, port).trajectories:
                    assert len(set(path)) == len(path)
                    assert len(path) <= len(snap.devices) + 1


@given(st.integers(0, 2**32 - 1))
def test_oracle_equivalence_on_random_networks(seed):
    snap = random_network(np.random.default_rng(seed))
    report = check_snapshot(snap)
    assert report.ok, report.mismatches[:2]


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**12 - 1))
def test_trace_header_agrees_with_header_space(seed, raw):
    snap = random_network(np.random.default_rng(seed))
    header = raw & ((1 << snap.header_bits) - 1)
    src = sorted(snap.devices)[0]
    port = snap.devices[src].ports[0]
    traced = {path for path, exit_ in trace_header(snap, header, src, port).delivered if exit_ != src}
    from_hsa = set()
    for dst in list(snap.devices) + [CONTROLLER]:
        if dst == src:
            continue
        for p in expected_trajectories(snap, src, dst, port).paths:
            if header in p.space:
                from_hsa.add(p.devices)
    assert traced == from_hsa
