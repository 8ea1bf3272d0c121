import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dpips.detection import Verdict, VerdictKind
from dpips.netmodel import NetworkState
from dpips.response import (
    ActionKind,
    ActionRequest,
    AlarmLog,
    ExpiredRequest,
    PolicyError,
    ResponseEngine,
    apply_to_network,
    match_and_execute,
    parse_policies,
)
from dpips.trajectory import PacketHeader

K = VerdictKind

POLICIES = """
<policies>
  <policy id="P1">
    <subject type="device" id="g"/>
    <object type="switch" id="f"/>
    <action type="Update_forwarding_table" device="g"/>
    <validity ms="5000"/>
  </policy>
  <policy id="P2">
    <subject type="controller"/>
    <object type="switch" id="f"/>
    <action type="Block_Messages" device="f"/>
    <validity ms="5000"/>
  </policy>
  <policy id="P3">
    <subject type="controller"/>
    <object type="switch" id="b"/>
    <action type="Isolate" device="b"/>
    <exception policy="P1"/>
    <validity ms="5000"/>
  </policy>
</policies>
"""


def bad(device, kind=K.REPLAY, port=None):
    return Verdict(kind, frozenset({device}), target="a", peer="e", port=port, probe=PacketHeader(1, 2))


def policy_actions(reqs):
    return {(r.policy_id, r.kind, r.device) for r in reqs if r.policy_id is not None}


def test_parse_reroute_policy():
    ps = parse_policies(POLICIES)
    assert [p.id for p in ps] == ["P1", "P2", "P3"]
    p1 = ps[0]
    assert p1.subject_id == "g" and p1.object_id == "f"
    assert [(a.kind, a.device) for a in p1.actions] == [(ActionKind.UPDATE_FORWARDING_TABLE, "g")]
    assert p1.matches(bad("f")) and not p1.matches(bad("b"))


def test_only_f_malicious():
    reqs = match_and_execute(parse_policies(POLICIES), [bad("f")], now=0)
    assert policy_actions(reqs) == {("P1", ActionKind.UPDATE_FORWARDING_TABLE, "g"),
                                    ("P2", ActionKind.BLOCK_MESSAGES, "f")}
    assert all(r.expiry_ms == r.issued_ms + 5000 for r in reqs)


def test_b_policy_suppressed_while_f_policy_active():
    engine = ResponseEngine(parse_policies(POLICIES))
    engine.match_and_execute([bad("f")], now=0)
    later = engine.match_and_execute([bad("b")], now=1000)
    assert policy_actions(later) == set()
    # the suppressed verdict still raises the default alarm
    assert [(r.kind, r.device, r.policy_id) for r in later] == [(ActionKind.ALARM, "b", None)]


def test_b_policy_runs_once_f_policy_expired():
    engine = ResponseEngine(parse_policies(POLICIES))
    engine.match_and_execute([bad("f")], now=0)
    reqs = engine.match_and_execute([bad("b")], now=6000)
    assert policy_actions(reqs) == {("P3", ActionKind.ISOLATE, "b")}


def test_same_sweep_exception_honored():
    reqs = match_and_execute(parse_policies(POLICIES), [bad("b"), bad("f")], now=0)
    assert policy_actions(reqs) == {("P1", ActionKind.UPDATE_FORWARDING_TABLE, "g"),
                                    ("P2", ActionKind.BLOCK_MESSAGES, "f")}


@pytest.mark.parametrize("doc,fragment", [
    ('<policy id="x"><subject id="a"/><subject id="b"/><object/><action type="Alarm"/></policy>', "subject"),
    ('<policy id="x"><subject id="a"/><object/><action type="Explode"/></policy>', "unknown action"),
    ('<policy id="x"><subject id="a"/><object/></policy>', "action"),
    ('<policies><policy id="x"><subject id="a"/><object/><action type="Alarm"/></policy>'
     '<policy id="x"><subject id="a"/><object/><action type="Alarm"/></policy></policies>', "duplicate"),
    ('<policy id="x"><subject id="a"/><object/><action type="Alarm"/><exception policy="nope"/></policy>', "unknown policy"),
    ('<policies><policy id="x"><subject id="a"/><object/><action type="Alarm"/><exception policy="y"/></policy>'
     '<policy id="y"><subject id="a"/><object/><action type="Alarm"/><exception policy="x"/></policy></policies>', "cycle"),
    ('<policy id="x"><subject id="a"/><object/><action type="Alarm"/><validity ms="0"/></policy>', "validity"),
    ('<policy id="x"><subject', "malformed"),
])
def test_schema_violations(doc, fragment):
    with pytest.raises(PolicyError, match=fragment):
        parse_policies(doc)


def test_empty_policy_set_alarms_by_default():
    assert parse_policies("") == []
    reqs = match_and_execute([], [bad("f"), Verdict(K.BENIGN)], now=0)
    assert [(r.kind, r.device) for r in reqs] == [(ActionKind.ALARM, "f")]


def test_condition_grammar():
    doc = """<policy id="c"><subject id="s"/><object type="flow"/><action type="Alarm"/>
             <condition kind="drop" device="d" port="3"/></policy>"""
    (p,) = parse_policies(doc)
    assert p.matches(bad("d", K.DROP, port=3))
    assert not p.matches(bad("d", K.DELAY, port=3))
    assert not p.matches(bad("d", K.DROP, port=4))
    assert not p.matches(bad("e", K.DROP, port=3))


def test_conflicts_are_noted_in_policy_order():
    doc = """<policies>
      <policy id="p2"><subject id="x"/><object type="switch" id="x"/><action type="Isolate"/></policy>
      <policy id="p10"><subject id="x"/><object type="switch" id="x"/><action type="Update_forwarding_table"/></policy>
    </policies>"""
    engine = ResponseEngine(parse_policies(doc))
    reqs = engine.match_and_execute([bad("x")], now=0)
    assert [r.policy_id for r in reqs] == ["p2", "p10"]
    assert engine.conflicts and "p2:Isolate, p10:Update_forwarding_table" in engine.conflicts[0]


_kinds = st.sampled_from([k for k in K if k is not K.BENIGN])
_devs = st.sampled_from(list("abfg"))


@given(st.lists(st.tuples(_kinds, _devs), max_size=8), st.integers(0, 10_000))
def test_every_bad_verdict_gets_an_action_and_output_is_deterministic(items, now):
    verdicts = [bad(d, k) for k, d in items]
    ps = parse_policies(POLICIES)
    a = match_and_execute(ps, verdicts, now)
    b = match_and_execute(ps, verdicts, now)
    assert a == b
    issuing = {r.policy_id for r in a if r.policy_id}
    for v in verdicts:
        # either alarmed directly or covered by a policy that issued requests this sweep
        assert any(r.verdict is v for r in a) or any(p.id in issuing and p.matches(v) for p in ps)
    assert all(r.expiry_ms > now for r in a)


def test_isolate_and_block(fig1):
    state = NetworkState.from_snapshot(fig1)
    req = ActionRequest(ActionKind.ISOLATE, "b", "p", 0, 10)
    nxt = apply_to_network(req, state, 5)
    assert not any(l.touches("b") for l in nxt.links)
    assert any(l.touches("b") for l in state.links)
    nxt = apply_to_network(ActionRequest(ActionKind.BLOCK_MESSAGES, "f", "p", 0, 10), nxt, 5)
    assert "f" in nxt.blocked_controller


def test_alarm_leaves_state_and_grows_log(fig1, tmp_path):
    state = NetworkState.from_snapshot(fig1)
    log = AlarmLog(tmp_path / "alarms.jsonl")
    out = apply_to_network(ActionRequest(ActionKind.ALARM, "f", None, 0, 10, verdict=bad("f")), state, 1, alarms=log)
    assert out is state and len(log) == 1
    assert (tmp_path / "alarms.jsonl").read_text().count("\n") == 1


def test_test_again_schedules_reprobe(fig1):
    state = NetworkState.from_snapshot(fig1)
    v = bad("b")
    out = apply_to_network(ActionRequest(ActionKind.TEST_AGAIN, "b", "p", 0, 10, verdict=v, packets=(v.probe,)),
                           state, 1, reprobe_interval_ms=250, reprobe_count=4)
    (rp,) = out.reprobes
    assert rp.packets == (v.probe,) and rp.interval_ms == 250 and rp.count == 4
    assert not state.reprobes


def test_update_forwarding_table_uses_reroute(fig1):
    state = NetworkState.from_snapshot(fig1)
    seen = {}

    def reroute(st_, subject, avoid):
        seen["args"] = (subject, avoid)
        return {subject: []}

    req = ActionRequest(ActionKind.UPDATE_FORWARDING_TABLE, "g", "P1", 0, 10, subject="g", verdict=bad("f"))
    out = apply_to_network(req, state, 1, reroute=reroute)
    assert seen["args"] == ("g", {"f"}) and out.devices["g"].flow_table == ()


def test_expired_and_unknown_requests(fig1):
    state = NetworkState.from_snapshot(fig1)
    with pytest.raises(ExpiredRequest):
        apply_to_network(ActionRequest(ActionKind.ISOLATE, "b", "p", 0, 10), state, 11)
    with pytest.raises(KeyError):
        apply_to_network(ActionRequest(ActionKind.ISOLATE, "zz", "p", 0, 10), state, 1)


def _many_policies(n):
    parts = []
    for i in range(n):
        dev = f"s{i % 50}"
        exc = f'<exception policy="q{i - 1}"/>' if i % 7 == 3 else ""
        parts.append(f'<policy id="q{i}"><subject id="{dev}"/><object type="switch" id="{dev}"/>'
                     f'<action type="Alarm"/><action type="Test_Again"/><condition kind="drop"/>{exc}'
                     f'<validity ms="1000"/></policy>')
    return "<policies>" + "".join(parts) + "</policies>"


def test_thousand_policies_match_quickly():
    ps = parse_policies(_many_policies(1000))
    verdicts = [bad(f"s{i}", K.DROP) for i in range(50)] + [bad("x", K.DELAY)] * 20
    engine = ResponseEngine(ps)
    t0 = time.perf_counter()
    reqs = engine.match_and_execute(verdicts, now=0)
    assert time.perf_counter() - t0 < 1.0
    assert reqs
