"""Administrator response policies: XML parsing, matching and enforcement."""

from __future__ import annotations

import json
import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .detection import Verdict, VerdictKind
from .netmodel import DeviceId, FlowRule, NetworkState


DEFAULT_ALARM_VALIDITY_MS = 60_000


class PolicyError(ValueError):
    """Policy document violates the schema; ``path`` locates the element."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ExpiredRequest(RuntimeError):
    pass


class ActionKind(str, Enum):
    ISOLATE = "Isolate"
    UPDATE_FORWARDING_TABLE = "Update_forwarding_table"
    ALARM = "Alarm"
    BLOCK_MESSAGES = "Block_Messages"
    TEST_AGAIN = "Test_Again"


class SubjectKind(str, Enum):
    DEVICE = "device"
    CONTROLLER = "controller"


class ObjectKind(str, Enum):
    SWITCH = "switch"
    FLOW = "flow"
    PACKET = "packet"


@dataclass(frozen=True)
class PolicyAction:
    kind: ActionKind
    device: Optional[DeviceId] = None


@dataclass(frozen=True)
class Condition:
    """Conjunction of equality tests; ``None`` fields match anything."""

    kind: Optional[VerdictKind] = None
    device: Optional[DeviceId] = None
    port: Optional[int] = None

    def matches(self, v: Verdict) -> bool:
        if v.benign:
            return False
        if self.kind is not None and v.kind is not self.kind:
            return False
        if self.device is not None and self.device not in v.malicious_devices:
            return False
        if self.port is not None and v.port != self.port:
            return False
        return True


@dataclass(frozen=True)
class ResponsePolicy:
    id: str
    subject: SubjectKind
    subject_id: Optional[DeviceId]
    object: ObjectKind
    object_id: Optional[str]
    actions: tuple[PolicyAction, ...]
    condition: Condition = Condition()
    exceptions: tuple[str, ...] = ()
    validity_ms: int = 60_000

    def matches(self, v: Verdict) -> bool:
        if not self.condition.matches(v):
            return False
        if self.object is ObjectKind.SWITCH and self.object_id and self.condition.device is None:
            return self.object_id in v.malicious_devices
        return True


@dataclass(frozen=True)
class ActionRequest:
    kind: ActionKind
    device: Optional[DeviceId]
    policy_id: Optional[str]
    issued_ms: float
    expiry_ms: float
    subject: Optional[DeviceId] = None
    verdict: Optional[Verdict] = field(default=None, compare=False, repr=False)
    packets: tuple = field(default=(), compare=False, repr=False)
    note: str = ""


def natural_key(text: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", text)]


# ---------------------------------------------------------------------- parse


def _one(elem: ET.Element, tag: str, path: str, required: bool = True) -> Optional[ET.Element]:
    found = elem.findall(tag)
    if len(found) > 1:
        raise PolicyError(f"{path}/{tag}", f"expected one <{tag}>, found {len(found)}")
    if not found:
        if required:
            raise PolicyError(path, f"missing <{tag}>")
        return None
    return found[0]


def _parse_policy(elem: ET.Element, path: str) -> ResponsePolicy:
    pid = elem.get("id")
    if not pid:
        raise PolicyError(path, "policy needs an id attribute")
    path = f"{path}[@id='{pid}']"

    subj = _one(elem, "subject", path)
    try:
        skind = SubjectKind(subj.get("type", "device").lower())
    except ValueError:
        raise PolicyError(f"{path}/subject", f"unknown subject type {subj.get('type')!r}") from None
    sid = subj.get("id") or (subj.text or "").strip() or None
    if skind is SubjectKind.DEVICE and not sid:
        raise PolicyError(f"{path}/subject", "device subject needs an id")

    obj = _one(elem, "object", path)
    try:
        okind = ObjectKind(obj.get("type", "switch").lower())
    except ValueError:
        raise PolicyError(f"{path}/object", f"unknown object type {obj.get('type')!r}") from None
    oid = obj.get("id") or (obj.text or "").strip() or None

    actions = []
    for i, a in enumerate(elem.findall("action")):
        name = a.get("type") or (a.text or "").strip()
        try:
            kind = ActionKind(name)
        except ValueError:
            raise PolicyError(f"{path}/action[{i}]", f"unknown action {name!r}") from None
        dev = a.get("device")
        if dev is None and kind is not ActionKind.ALARM:
            dev = sid if okind is not ObjectKind.SWITCH else (oid or sid)
        actions.append(PolicyAction(kind, dev))
    if not actions:
        raise PolicyError(path, "policy needs at least one <action>")

    cond = Condition()
    c = _one(elem, "condition", path, required=False)
    if c is not None:
        kind = c.get("kind")
        try:
            vk = VerdictKind(kind) if kind else None
        except ValueError:
            raise PolicyError(f"{path}/condition", f"unknown verdict kind {kind!r}") from None
        port = c.get("port")
        cond = Condition(vk, c.get("device"), int(port) if port is not None else None)

    exceptions = tuple(e.get("policy") or (e.text or "").strip() for e in elem.findall("exception"))
    validity = 60_000
    v = _one(elem, "validity", path, required=False)
    if v is not None:
        raw = v.get("ms") or (v.text or "").strip()
        try:
            validity = int(raw)
        except ValueError:
            raise PolicyError(f"{path}/validity", f"not an integer: {raw!r}") from None
        if validity <= 0:
            raise PolicyError(f"{path}/validity", "validity must be positive")
    return ResponsePolicy(pid, skind, sid, okind, oid, tuple(actions), cond, exceptions, validity)


def parse_policies(doc: str) -> list[ResponsePolicy]:
    """Parse and validate a ``<policies>`` document."""
    doc = doc.strip()
    if not doc:
        return []
    try:
        root = ET.fromstring(doc)
    except ET.ParseError as exc:
        raise PolicyError("/", f"malformed XML: {exc}") from None
    elems = [root] if root.tag == "policy" else root.findall("policy")
    policies = []
    seen = set()
    for i, elem in enumerate(elems):
        p = _parse_policy(elem, f"/{root.tag}/policy[{i}]")
        if p.id in seen:
            raise PolicyError(f"/{root.tag}/policy[{i}]", f"duplicate policy id {p.id!r}")
        seen.add(p.id)
        policies.append(p)
    for p in policies:
        for e in p.exceptions:
            if e not in seen:
                raise PolicyError(f"/policy[@id='{p.id}']/exception", f"unknown policy {e!r}")
    _evaluation_order(policies)
    return policies


def load_policies(path) -> list[ResponsePolicy]:
    return parse_policies(Path(path).read_text())


def _evaluation_order(policies: Sequence[ResponsePolicy]) -> list[ResponsePolicy]:
    """Policies ordered so every excepted policy comes before the ones excepting it."""
    by_id = {p.id: p for p in policies}
    ts = TopologicalSorter({p.id: set(p.exceptions) for p in policies})
    try:
        ts.prepare()
    except CycleError as exc:
        raise PolicyError("/", f"exception cycle: {' -> '.join(exc.args[1])}") from None
    order = []
    while ts.is_active():
        ready = sorted(ts.get_ready(), key=natural_key)
        order.extend(by_id[i] for i in ready)
        ts.done(*ready)
    return order


# ---------------------------------------------------------------------- match


class ResponseEngine:
    """Stateful matcher: remembers which policies are active until they expire."""

    def __init__(self, policies: Sequence[ResponsePolicy] = ()):
        self.policies = list(policies)
        self._order = _evaluation_order(self.policies)
        self.active: dict[str, float] = {}
        self.conflicts: list[str] = []

    def _prune(self, now: float) -> None:
        self.active = {pid: exp for pid, exp in self.active.items() if exp > now}

    def match_and_execute(self, verdicts: Iterable[Verdict], now: float) -> list[ActionRequest]:
        """Action requests for one completed sweep, in deterministic order."""
        self._prune(now)
        bad = [v for v in verdicts if not v.benign]
        handled: set[int] = set()
        issued: dict[str, list[ActionRequest]] = {}
        for p in self._order:
            hits = [i for i, v in enumerate(bad) if p.matches(v)]
            if not hits:
                continue
            if any(e in self.active for e in p.exceptions):
                # suppressed; its verdicts still get the default alarm below
                continue
            handled.update(hits)
            self.active[p.id] = now + p.validity_ms
            reqs = []
            seen = set()
            for i in hits:
                v = bad[i]
                for a in p.actions:
                    key = (a.kind, a.device)
                    if key in seen:
                        continue
                    seen.add(key)
                    reqs.append(ActionRequest(a.kind, a.device, p.id, now, now + p.validity_ms,
                                              p.subject_id, v, (v.probe,) if v.probe else ()))
            issued[p.id] = reqs
        out: list[ActionRequest] = []
        for pid in sorted(issued, key=natural_key):
            out.extend(issued[pid])
        self._note_conflicts(out)
        for i, v in enumerate(bad):
            if i not in handled:
                dev = min(v.malicious_devices) if v.malicious_devices else None
                out.append(ActionRequest(ActionKind.ALARM, dev, None, now, now + DEFAULT_ALARM_VALIDITY_MS, None, v,
                                         (v.probe,) if v.probe else (), "default alarm"))
        return out

    def _note_conflicts(self, reqs: Sequence[ActionRequest]) -> None:
        kinds: dict[DeviceId, list[ActionRequest]] = {}
        for r in reqs:
            if r.device is not None and r.kind is not ActionKind.ALARM:
                kinds.setdefault(r.device, []).append(r)
        for dev, rs in sorted(kinds.items()):
            if len({r.kind for r in rs}) > 1:
                order = ", ".join(f"{r.policy_id}:{r.kind.value}" for r in rs)
                self.conflicts.append(f"conflicting actions on {dev}; applied in policy order: {order}")


def match_and_execute(policies: Sequence[ResponsePolicy], verdicts: Iterable[Verdict], now: float,
                      engine: Optional[ResponseEngine] = None) -> list[ActionRequest]:
    """Stateless convenience wrapper; pass ``engine`` to carry activity across sweeps."""
    engine = engine or ResponseEngine(policies)
    return engine.match_and_execute(verdicts, now)


# ---------------------------------------------------------------------- apply


class AlarmLog:
    """Append-only alarm records, optionally mirrored to a JSON-lines file."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class ReprobeRequest:
    device: Optional[DeviceId]
    packets: tuple
    interval_ms: float
    count: int
    verdict: Optional[Verdict] = None


RerouteFn = Callable[[NetworkState, DeviceId, set], Mapping[DeviceId, Sequence[FlowRule]]]


def apply_to_network(req: ActionRequest, state: NetworkState, now: float,
                     alarms: Optional[AlarmLog] = None,
                     reroute: Optional[RerouteFn] = None,
                     reprobe_interval_ms: float = 1_000.0, reprobe_count: int = 3) -> NetworkState:
    """Return the successor state after executing one request.

    ``reroute`` supplies replacement flow tables for Update_forwarding_table
    (it receives the state, the subject device and the devices to avoid).
    """
    if now > req.expiry_ms:
        raise ExpiredRequest(f"{req.kind.value} from {req.policy_id} expired at {req.expiry_ms}")
    if req.device is not None and req.device not in state.devices:
        raise KeyError(f"unknown device {req.device!r}")
    nxt = state.copy()
    if req.kind is ActionKind.ISOLATE:
        nxt.isolate(req.device)
    elif req.kind is ActionKind.BLOCK_MESSAGES:
        nxt.blocked_controller.add(req.device)
    elif req.kind is ActionKind.UPDATE_FORWARDING_TABLE:
        if reroute is not None:
            avoid = set(req.verdict.malicious_devices) if req.verdict else set()
            subject = req.subject or req.device
            for dev, rules in reroute(nxt, subject, avoid).items():
                nxt.set_rules(dev, rules)
    elif req.kind is ActionKind.TEST_AGAIN:
        nxt.reprobes.append(ReprobeRequest(req.device, req.packets, reprobe_interval_ms, reprobe_count, req.verdict))
    elif req.kind is ActionKind.ALARM:
        if alarms is not None:
            v = req.verdict
            alarms.append({
                "time_ms": now,
                "policy": req.policy_id,
                "device": req.device,
                "kind": v.kind.value if v else None,
                "target": v.target if v else None,
                "peer": v.peer if v else None,
                "note": req.note,
            })
        return state
    return nxt
