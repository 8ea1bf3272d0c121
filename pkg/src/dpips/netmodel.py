"""Topology, flow tables, immutable snapshots and the mutable live state."""

from __future__ import annotations

import copy
import itertools
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from os import PathLike
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional, Union

import numpy as np

from .patterns import HeaderPattern, Rewrite

log = logging.getLogger(__name__)

DeviceId = str
PortId = int

CONTROLLER: DeviceId = "@controller"
# Pseudo-port used in observations for controller-bound output.
CONTROLLER_PORT: PortId = -1
DEFAULT_HEADER_BITS = 32


class TopologyError(ValueError):
    """Base class for malformed topology or rule input."""


class ParseError(TopologyError):
    pass


class DanglingReference(TopologyError):
    pass


class ActionType(str, Enum):
    FORWARD = "forward"
    DROP = "drop"
    FLOOD = "flood"
    CONTROLLER = "controller"


@dataclass(frozen=True)
class Action:
    type: ActionType
    port: Optional[PortId] = None

    def __post_init__(self):
        if (self.type is ActionType.FORWARD) != (self.port is not None):
            raise ValueError("forward actions need exactly one out port; other actions take none")

    @classmethod
    def forward(cls, port: PortId) -> "Action":
        return cls(ActionType.FORWARD, port)

    @classmethod
    def drop(cls) -> "Action":
        return cls(ActionType.DROP)

    @classmethod
    def flood(cls) -> "Action":
        return cls(ActionType.FLOOD)

    @classmethod
    def to_controller(cls) -> "Action":
        return cls(ActionType.CONTROLLER)

    def __str__(self) -> str:
        return f"forward({self.port})" if self.type is ActionType.FORWARD else self.type.value


@dataclass(frozen=True)
class FlowRule:
    match: HeaderPattern
    action: Action
    priority: int = 0
    in_port: Optional[PortId] = None
    rewrite: Optional[Rewrite] = None

    def __post_init__(self):
        if self.priority < 0:
            raise ValueError("rule priority must be >= 0")
        if self.rewrite is not None and self.rewrite.width != self.match.width:
            raise ValueError("rewrite width differs from match width")

    def applies(self, header: int, in_port: PortId) -> bool:
        return (self.in_port is None or self.in_port == in_port) and self.match.matches(header)


def _sorted_rules(rules: Iterable[FlowRule]) -> tuple[FlowRule, ...]:
    # sorted() is stable, so equal priorities keep insertion order
    return tuple(sorted(rules, key=lambda r: -r.priority))


@dataclass(frozen=True)
class ForwardingDevice:
    id: DeviceId
    ports: tuple[PortId, ...]
    flow_table: tuple[FlowRule, ...] = ()

    def __post_init__(self):
        if not self.ports:
            raise ValueError(f"device {self.id!r} has no ports")
        object.__setattr__(self, "flow_table", _sorted_rules(self.flow_table))

    def lookup(self, header: int, in_port: PortId) -> Optional[FlowRule]:
        """Highest-priority matching rule, earlier insertion winning ties."""
        for rule in self.flow_table:
            if rule.applies(header, in_port):
                return rule
        return None

    def with_rules(self, rules: Iterable[FlowRule]) -> "ForwardingDevice":
        return ForwardingDevice(self.id, self.ports, tuple(rules))

    def rule_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(values, masks, in_ports) of the flow table, in evaluation order."""
        vals = np.array([r.match.value for r in self.flow_table], dtype=np.uint64)
        masks = np.array([r.match.mask for r in self.flow_table], dtype=np.uint64)
        ports = np.array([-1 if r.in_port is None else r.in_port for r in self.flow_table], dtype=np.int64)
        return vals, masks, ports


Endpoint = tuple[DeviceId, PortId]


@dataclass(frozen=True)
class Link:
    a: Endpoint
    b: Endpoint

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError(f"link joins port {self.a} to itself")
        # canonical orientation so {a, b} and {b, a} compare equal
        if self.b < self.a:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)

    def other(self, end: Endpoint) -> Endpoint:
        return self.b if end == self.a else self.a

    def touches(self, device: DeviceId) -> bool:
        return self.a[0] == device or self.b[0] == device


_epoch = itertools.count(1)


@dataclass(frozen=True)
class NetworkSnapshot:
    devices: Mapping[DeviceId, ForwardingDevice]
    links: frozenset[Link]
    hosts: Mapping[str, Endpoint]
    header_bits: int = DEFAULT_HEADER_BITS
    name: str = ""
    epoch: int = field(default=0, compare=False)
    _peer: Mapping[Endpoint, Endpoint] = field(default=None, compare=False, repr=False)
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "devices", MappingProxyType(dict(self.devices)))
        object.__setattr__(self, "hosts", MappingProxyType(dict(self.hosts)))
        object.__setattr__(self, "links", frozenset(self.links))
        peer = {}
        for link in self.links:
            peer[link.a] = link.b
            peer[link.b] = link.a
        object.__setattr__(self, "_peer", MappingProxyType(peer))

    controller: DeviceId = CONTROLLER

    def __hash__(self) -> int:
        return id(self)

    def peer(self, device: DeviceId, port: PortId) -> Optional[Endpoint]:
        return self._peer.get((device, port))

    def link_ports(self, device: DeviceId) -> tuple[PortId, ...]:
        return tuple(p for p in self.devices[device].ports if (device, p) in self._peer)

    def host_ports(self, device: DeviceId) -> tuple[PortId, ...]:
        return tuple(sorted(p for d, p in self.hosts.values() if d == device))

    def neighbors(self, device: DeviceId) -> dict[DeviceId, PortId]:
        """Neighbor id -> local port (lowest port when parallel links exist)."""
        out: dict[DeviceId, PortId] = {}
        for p in self.devices[device].ports:
            end = self._peer.get((device, p))
            if end is not None and end[0] not in out:
                out[end[0]] = p
        return out

    def port_towards(self, device: DeviceId, neighbor: DeviceId) -> Optional[PortId]:
        return self.neighbors(device).get(neighbor)

    def rule_count(self) -> int:
        return sum(len(d.flow_table) for d in self.devices.values())

    def graph(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(sorted(self.devices))
        for link in self.links:
            g.add_edge(link.a[0], link.b[0])
        return g


def _load(source: Union[str, PathLike, Mapping[str, Any]]) -> Mapping[str, Any]:
    if isinstance(source, Mapping):
        return source
    path = Path(source)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _require(doc: Mapping, key: str, where: str):
    if key not in doc:
        raise ParseError(f"{where}: missing field {key!r}")
    return doc[key]


def parse_topology(doc: Mapping[str, Any]) -> tuple[dict, set, dict, int, str]:
    """Validate a topology document; returns (ports, links, hosts, header_bits, name)."""
    if not isinstance(doc, Mapping):
        raise ParseError("topology must be a JSON object")
    bits = int(doc.get("header_bits", DEFAULT_HEADER_BITS))
    ports: dict[DeviceId, tuple[PortId, ...]] = {}
    for i, d in enumerate(doc.get("devices", [])):
        where = f"devices[{i}]"
        did = str(_require(d, "id", where))
        if did in ports:
            raise ParseError(f"{where}: duplicate device id {did!r}")
        if did == CONTROLLER:
            raise ParseError(f"{where}: {CONTROLLER!r} is reserved")
        n = _require(d, "ports", where)
        plist = tuple(range(1, int(n) + 1)) if isinstance(n, int) else tuple(int(p) for p in n)
        if not plist:
            raise ParseError(f"{where}: device needs at least one port")
        ports[did] = plist

    def endpoint(raw, where) -> Endpoint:
        try:
            dev, port = str(raw[0]), int(raw[1])
        except (TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"{where}: endpoint must be [device, port]") from exc
        if dev not in ports:
            raise DanglingReference(f"{where}: unknown device {dev!r}")
        if port not in ports[dev]:
            raise DanglingReference(f"{where}: device {dev!r} has no port {port}")
        return dev, port

    used: dict[Endpoint, str] = {}
    links: set[Link] = set()
    for i, raw in enumerate(doc.get("links", [])):
        where = f"links[{i}]"
        a = endpoint(_require(raw, "a", where), where)
        b = endpoint(_require(raw, "b", where), where)
        for end in (a, b):
            if end in used:
                raise ParseError(f"{where}: port {end} already used by {used[end]}")
            used[end] = where
        links.add(Link(a, b))
    hosts: dict[str, Endpoint] = {}
    for i, h in enumerate(doc.get("hosts", [])):
        where = f"hosts[{i}]"
        hid = str(_require(h, "id", where))
        end = endpoint((_require(h, "device", where), _require(h, "port", where)), where)
        if end in used:
            raise ParseError(f"{where}: port {end} already used by {used[end]}")
        used[end] = where
        hosts[hid] = end
    return ports, links, hosts, bits, str(doc.get("name", ""))


def parse_rule(raw: Mapping[str, Any], bits: int, where: str) -> FlowRule:
    try:
        match = HeaderPattern.parse(str(_require(raw, "match", where)))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    if match.width != bits:
        raise ParseError(f"{where}: match width {match.width} != header_bits {bits}")
    kind = str(_require(raw, "action", where))
    try:
        atype = ActionType(kind)
    except ValueError as exc:
        raise ParseError(f"{where}: unknown action {kind!r}") from exc
    port = raw.get("port")
    try:
        action = Action(atype, None if port is None else int(port))
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    rewrite = None
    if raw.get("rewrite"):
        rewrite = Rewrite.parse(str(raw["rewrite"]))
        if rewrite.width != bits:
            raise ParseError(f"{where}: rewrite width {rewrite.width} != header_bits {bits}")
    in_port = raw.get("in_port")
    priority = int(raw.get("priority", 0))
    if priority < 0:
        raise ParseError(f"{where}: negative priority")
    return FlowRule(match, action, priority, None if in_port is None else int(in_port), rewrite)


def rule_to_dict(rule: FlowRule) -> dict[str, Any]:
    out: dict[str, Any] = {"priority": rule.priority, "match": str(rule.match), "action": rule.action.type.value}
    if rule.action.port is not None:
        out["port"] = rule.action.port
    if rule.in_port is not None:
        out["in_port"] = rule.in_port
    if rule.rewrite is not None:
        out["rewrite"] = str(rule.rewrite)
    return out


def build_snapshot(topology_spec, rules_spec=None) -> NetworkSnapshot:
    """Parse topology and rule documents (paths or decoded JSON) into a snapshot."""
    topo = _load(topology_spec)
    ports, links, hosts, bits, name = parse_topology(topo)
    tables: dict[DeviceId, list[FlowRule]] = {d: [] for d in ports}
    if rules_spec is not None:
        rdoc = _load(rules_spec)
        bits = int(rdoc.get("header_bits", bits))
        per_dev = rdoc.get("rules", {})
        if not isinstance(per_dev, Mapping):
            raise ParseError("rules: expected an object keyed by device id")
        for dev, rules in per_dev.items():
            if dev not in ports:
                raise DanglingReference(f"rules[{dev!r}]: unknown device")
            for i, raw in enumerate(rules):
                where = f"rules[{dev!r}][{i}]"
                rule = parse_rule(raw, bits, where)
                for p in (rule.in_port, rule.action.port):
                    if p is not None and p not in ports[dev]:
                        raise DanglingReference(f"{where}: device {dev!r} has no port {p}")
                tables[dev].append(rule)
    devices = {d: ForwardingDevice(d, ports[d], tuple(tables[d])) for d in ports}
    return NetworkSnapshot(devices, frozenset(links), hosts, bits, name, epoch=next(_epoch))


def snapshot_to_docs(snap: NetworkSnapshot) -> tuple[dict, dict]:
    """Inverse of build_snapshot: (topology document, rules document)."""
    topo = {
        "name": snap.name,
        "header_bits": snap.header_bits,
        "devices": [{"id": d, "ports": list(dev.ports)} for d, dev in sorted(snap.devices.items())],
        "links": [{"a": list(l.a), "b": list(l.b)} for l in sorted(snap.links, key=lambda l: (l.a, l.b))],
        "hosts": [{"id": h, "device": e[0], "port": e[1]} for h, e in sorted(snap.hosts.items())],
    }
    rules = {
        "header_bits": snap.header_bits,
        "rules": {d: [rule_to_dict(r) for r in dev.flow_table] for d, dev in sorted(snap.devices.items())},
    }
    return topo, rules


@dataclass
class NetworkState:
    """Mutable view of the running network, as the controller believes it to be."""

    devices: dict[DeviceId, ForwardingDevice]
    links: set[Link]
    hosts: dict[str, Endpoint]
    header_bits: int = DEFAULT_HEADER_BITS
    name: str = ""
    blocked_controller: set[DeviceId] = field(default_factory=set)
    reprobes: list = field(default_factory=list)

    @classmethod
    def from_snapshot(cls, snap: NetworkSnapshot) -> "NetworkState":
        return cls(dict(snap.devices), set(snap.links), dict(snap.hosts), snap.header_bits, snap.name)

    def snapshot(self) -> NetworkSnapshot:
        return NetworkSnapshot(
            dict(self.devices), frozenset(self.links), dict(self.hosts), self.header_bits, self.name,
            epoch=next(_epoch),
        )

    def copy(self) -> "NetworkState":
        return NetworkState(
            dict(self.devices), set(self.links), dict(self.hosts), self.header_bits, self.name,
            set(self.blocked_controller), copy.copy(self.reprobes),
        )

    def peer(self, device: DeviceId, port: PortId) -> Optional[Endpoint]:
        for link in self.links:
            if link.a == (device, port):
                return link.b
            if link.b == (device, port):
                return link.a
        return None

    def peer_map(self) -> dict[Endpoint, Endpoint]:
        out = {}
        for link in self.links:
            out[link.a] = link.b
            out[link.b] = link.a
        return out

    def require(self, device: DeviceId) -> ForwardingDevice:
        try:
            return self.devices[device]
        except KeyError:
            raise KeyError(f"unknown device {device!r}") from None

    def add_rule(self, device: DeviceId, rule: FlowRule) -> None:
        dev = self.require(device)
        self.devices[device] = dev.with_rules(dev.flow_table + (rule,))

    def set_rules(self, device: DeviceId, rules: Iterable[FlowRule]) -> None:
        self.devices[device] = self.require(device).with_rules(rules)

    def remove_link(self, link: Link) -> None:
        self.links.discard(link)

    def isolate(self, device: DeviceId) -> None:
        self.require(device)
        self.links = {l for l in self.links if not l.touches(device)}


def state_changed(snapshot: NetworkSnapshot, live_state: NetworkState) -> bool:
    """True iff any flow table or link differs from what the snapshot captured."""
    if set(snapshot.devices) != set(live_state.devices):
        return True
    if snapshot.links != frozenset(live_state.links):
        return True
    for d, dev in snapshot.devices.items():
        live = live_state.devices[d]
        if live is not dev and live.flow_table != dev.flow_table:
            return True
    return False
