"""Transfer functions over header spaces and expected-trajectory enumeration."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

import numpy as np

from . import _kernels
from .netmodel import (
    CONTROLLER,
    ActionType,
    DeviceId,
    FlowRule,
    ForwardingDevice,
    NetworkSnapshot,
    PortId,
)
from .patterns import (
    HeaderPattern,
    HeaderSpace,
    Rewrite,
    WidthMismatch,
    intersect,
    overlap_matrix,
)

__all__ = [
    "HeaderPattern",
    "HeaderSpace",
    "Rewrite",
    "WidthMismatch",
    "intersect",
    "Sink",
    "TransferFunction",
    "apply_transfer",
    "ExpectedPath",
    "Reachability",
    "expected_trajectories",
    "reachability",
    "trace_header",
]

log = logging.getLogger(__name__)


class Sink(str, Enum):
    DROP = "drop"
    CONTROLLER = "controller"


Output = Union[PortId, Sink]


@dataclass(frozen=True)
class _Piece:
    """A header subspace in flight, remembering which injected headers it came from.

    ``cur`` is the header as it looks now; ``orig`` is the set of headers at
    injection that produce it; ``rw`` marks bits overwritten along the way.
    """

    orig: HeaderPattern
    cur: HeaderPattern
    rw: int = 0

    def narrow(self, cur: HeaderPattern) -> "_Piece":
        keep = ~self.rw
        orig = self.orig.intersect(HeaderPattern(cur.value & keep, cur.mask & keep, cur.width))
        return _Piece(orig, cur, self.rw)

    def rewritten(self, rw: Rewrite) -> "_Piece":
        return _Piece(self.orig, rw.apply_pattern(self.cur), self.rw | rw.mask)


@dataclass
class _PortView:
    """Flow-table rules that can fire for one in_port, in evaluation order."""

    rules: list[FlowRule]
    values: np.ndarray
    masks: np.ndarray
    shadows: list[list[int]]


class TransferFunction:
    """Per-device transfer function compiled from its flow table.

    Each case is the rule's (in_port, match) mapped to its action and optional
    rewrite. Lower-priority cases only see headers not claimed by an earlier
    overlapping case.
    """

    def __init__(self, device: ForwardingDevice, width: int):
        self.device = device
        self.width = width
        self._views: dict[PortId, _PortView] = {}

    @property
    def cases(self) -> list[tuple[Optional[PortId], HeaderPattern, FlowRule]]:
        return [(r.in_port, r.match, r) for r in self.device.flow_table]

    def _view(self, in_port: PortId) -> _PortView:
        view = self._views.get(in_port)
        if view is None:
            rules = [r for r in self.device.flow_table if r.in_port is None or r.in_port == in_port]
            pats = [r.match for r in rules]
            ov = overlap_matrix(pats, pats)
            shadows = [list(np.flatnonzero(ov[i, :i])) for i in range(len(rules))]
            view = _PortView(
                rules,
                np.array([p.value for p in pats], dtype=np.uint64),
                np.array([p.mask for p in pats], dtype=np.uint64),
                shadows,
            )
            self._views[in_port] = view
        return view

    def outputs_of(self, rule: FlowRule, in_port: PortId) -> list[Output]:
        a = rule.action
        if a.type is ActionType.FORWARD:
            return [a.port]
        if a.type is ActionType.FLOOD:
            return [p for p in self.device.ports if p != in_port]
        if a.type is ActionType.CONTROLLER:
            return [Sink.CONTROLLER]
        return [Sink.DROP]

    def propagate(self, pieces: list[_Piece], in_port: PortId, with_miss: bool = False):
        """Split in-flight pieces by first-match rule.

        Returns a dict output -> list of pieces (after rewrite). With
        ``with_miss`` the table-miss remainder is reported under Sink.DROP.
        """
        view = self._view(in_port)
        out: dict[Output, list[_Piece]] = defaultdict(list)
        if not pieces:
            return out
        if not view.rules:
            if with_miss:
                out[Sink.DROP].extend(pieces)
            return out
        cur = [p.cur for p in pieces]
        ov = _kernels.overlap(
            np.array([c.value for c in cur], dtype=np.uint64),
            np.array([c.mask for c in cur], dtype=np.uint64),
            view.values,
            view.masks,
        )
        for i, piece in enumerate(pieces):
            hits = np.flatnonzero(ov[i])
            hitset = set(hits.tolist())
            for j in hits:
                rule = view.rules[j]
                base = piece.cur.intersect(rule.match)
                parts = [base]
                for s in view.shadows[j]:
                    if s not in hitset:
                        continue
                    shadow = view.rules[s].match
                    nxt = []
                    for p in parts:
                        nxt.extend(p.subtract(shadow) if p.overlaps(shadow) else (p,))
                    parts = nxt
                    if not parts:
                        break
                if not parts:
                    continue
                targets = self.outputs_of(rule, in_port)
                for p in parts:
                    np_ = piece.narrow(p)
                    if rule.rewrite is not None:
                        np_ = np_.rewritten(rule.rewrite)
                    for t in targets:
                        out[t].append(np_)
            if with_miss:
                rest = [piece.cur]
                for j in hits:
                    m = view.rules[j].match
                    nxt = []
                    for p in rest:
                        nxt.extend(p.subtract(m) if p.overlaps(m) else (p,))
                    rest = nxt
                    if not rest:
                        break
                out[Sink.DROP].extend(piece.narrow(p) for p in rest)
        return out


def apply_transfer(tf: TransferFunction, hs: HeaderSpace, in_port: PortId) -> list[tuple[Output, HeaderSpace]]:
    """Partition ``hs`` by first-match case; returns (output, headers leaving) pairs.

    Table misses go to the drop sink. Outputs are sorted with ports first.
    """
    if hs.width != tf.width:
        raise WidthMismatch(f"header space width {hs.width} vs device width {tf.width}")
    pieces = [_Piece(p, p) for p in hs.disjoint()]
    grouped = tf.propagate(pieces, in_port, with_miss=True)
    result = []
    for out, ps in grouped.items():
        if ps:
            result.append((out, HeaderSpace(hs.width, tuple(p.cur for p in ps))))
    return sorted(result, key=lambda t: (isinstance(t[0], Sink), str(t[0])))


@dataclass(frozen=True)
class ExpectedPath:
    devices: tuple[DeviceId, ...]
    space: HeaderSpace

    def __len__(self) -> int:
        return len(self.devices)


@dataclass(frozen=True)
class Reachability:
    src: DeviceId
    dst: DeviceId
    port: PortId
    header_space: HeaderSpace
    paths: tuple[ExpectedPath, ...]
    loops: tuple[tuple[DeviceId, ...], ...] = ()

    @property
    def trajectories(self) -> frozenset[tuple[DeviceId, ...]]:
        return frozenset(p.devices for p in self.paths)

    def __iter__(self):
        # allows ``hs, E = expected_trajectories(...)``
        yield self.header_space
        yield self.trajectories


@dataclass
class _Fanout:
    paths: dict[DeviceId, dict[tuple[DeviceId, ...], list[HeaderPattern]]] = field(
        default_factory=lambda: defaultdict(lambda: defaultdict(list))
    )
    loops: list[tuple[DeviceId, ...]] = field(default_factory=list)


def _transfer(snap: NetworkSnapshot, device: DeviceId) -> TransferFunction:
    tfs = snap._cache.setdefault("tf", {})
    tf = tfs.get(device)
    if tf is None:
        tf = tfs[device] = TransferFunction(snap.devices[device], snap.header_bits)
    return tf


def reachability(snap: NetworkSnapshot, src: DeviceId, port: PortId) -> _Fanout:
    """Propagate the full header space injected at (src, port) through the snapshot.

    Cached on the snapshot. A branch stops when it would revisit a device; the
    repeated walk is kept as a loop diagnostic.
    """
    key = ("reach", src, port)
    cached = snap._cache.get(key)
    if cached is not None:
        return cached
    if src not in snap.devices:
        raise KeyError(f"unknown device {src!r}")
    width = snap.header_bits
    fan = _Fanout()
    full = HeaderPattern.wildcard(width)
    stack = [(src, port, (src,), [_Piece(full, full)])]
    hop_limit = len(snap.devices)
    while stack:
        dev, in_port, path, pieces = stack.pop()
        grouped = _transfer(snap, dev).propagate(pieces, in_port)
        for out in sorted(grouped, key=str):
            ps = grouped[out]
            if not ps:
                continue
            if out is Sink.DROP:
                continue
            if out is Sink.CONTROLLER:
                fan.paths[CONTROLLER][path + (CONTROLLER,)].extend(p.orig for p in ps)
                continue
            peer = snap.peer(dev, out)
            if peer is None:
                # host port or unconnected port: the packet leaves the network here
                if dev != src or out != port:
                    fan.paths[dev][path].extend(p.orig for p in ps)
                continue
            nxt, nxt_port = peer
            if nxt in path:
                log.debug("forwarding loop: %s -> %s", "->".join(path), nxt)
                fan.loops.append(path + (nxt,))
                continue
            if len(path) >= hop_limit:
                continue
            stack.append((nxt, nxt_port, path + (nxt,), ps))
    snap._cache[key] = fan
    return fan


def expected_trajectories(snap: NetworkSnapshot, src: DeviceId, dst: DeviceId, port: PortId) -> Reachability:
    """Header space deliverable from ``src`` (injected on ``port``) to ``dst``, and its paths.

    ``dst`` may be the controller sentinel. An empty result is a valid answer.
    """
    if src == dst:
        raise ValueError("source and destination must differ")
    if dst != CONTROLLER and dst not in snap.devices:
        raise KeyError(f"unknown device {dst!r}")
    fan = reachability(snap, src, port)
    width = snap.header_bits
    paths = []
    for devs, pats in sorted(fan.paths.get(dst, {}).items()):
        paths.append(ExpectedPath(devs, HeaderSpace(width, tuple(pats))))
    space = HeaderSpace(width, tuple(p for ep in paths for p in ep.space.patterns))
    loops = tuple(sorted(set(fan.loops)))
    return Reachability(src, dst, port, space, tuple(paths), loops)


@dataclass(frozen=True)
class TraceResult:
    """Concrete forwarding of one header: every (path, exit) the packet reaches."""

    delivered: tuple[tuple[tuple[DeviceId, ...], DeviceId], ...]
    loops: tuple[tuple[DeviceId, ...], ...]


def trace_header(snap: NetworkSnapshot, header: int, src: DeviceId, port: PortId) -> TraceResult:
    """Forward one concrete header using plain per-rule lookup.

    Same terminal conventions as :func:`reachability`, but no header-space
    algebra: this is the independent reference the oracle compares against.
    """
    delivered = []
    loops = []
    hop_limit = len(snap.devices)
    stack = [(src, port, header, (src,))]
    while stack:
        dev, in_port, h, path = stack.pop()
        device = snap.devices[dev]
        rule = device.lookup(h, in_port)
        if rule is None:
            continue
        if rule.rewrite is not None:
            h = rule.rewrite.apply(h)
        a = rule.action
        if a.type is ActionType.DROP:
            continue
        if a.type is ActionType.CONTROLLER:
            delivered.append((path + (CONTROLLER,), CONTROLLER))
            continue
        outs = [a.port] if a.type is ActionType.FORWARD else [p for p in device.ports if p != in_port]
        for out in outs:
            peer = snap.peer(dev, out)
            if peer is None:
                if dev != src or out != port:
                    delivered.append((path, dev))
                continue
            if peer[0] in path:
                loops.append(path + (peer[0],))
                continue
            if len(path) >= hop_limit:
                continue
            stack.append((peer[0], peer[1], h, path + (peer[0],)))
    return TraceResult(tuple(delivered), tuple(loops))
