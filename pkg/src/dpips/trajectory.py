"""Packet labels, per-hop observations and actual-trajectory reconstruction."""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import _kernels
from .netmodel import CONTROLLER, CONTROLLER_PORT, DeviceId, NetworkSnapshot, PortId

LABEL_WIDTH = 20
LABEL_FIELDS = ("src_ip", "dst_ip", "proto", "ip_id", "src_port", "dst_port")
_TRANSPORT_PROTOS = (6, 17)


@dataclass(frozen=True)
class PacketHeader:
    src_ip: int
    dst_ip: int
    proto: int = 6
    ip_id: int = 0
    src_port: int = 0
    dst_port: int = 0
    ttl: int = 64

    def label_fields(self) -> tuple[int, ...]:
        if self.proto in _TRANSPORT_PROTOS:
            return (self.src_ip, self.dst_ip, self.proto, self.ip_id, self.src_port, self.dst_port)
        return (self.src_ip, self.dst_ip, self.proto, self.ip_id, 0, 0)

    def header_bits(self, width: int) -> int:
        """The ``width`` forwarding bits: destination address first, then source."""
        return ((self.dst_ip << 32) | self.src_ip) >> (64 - width)

    def with_header_bits(self, bits: int, width: int) -> "PacketHeader":
        """Overwrite the forwarding bits, leaving everything else untouched."""
        shift = 64 - width
        low = ((self.dst_ip << 32) | self.src_ip) & ((1 << shift) - 1)
        combined = (bits << shift) | low
        return replace(self, dst_ip=combined >> 32, src_ip=combined & 0xFFFFFFFF)

    @classmethod
    def random(cls, rng: np.random.Generator, bits: Optional[int] = None, width: int = 32) -> "PacketHeader":
        ints = rng.integers(0, 1 << 32, size=2, dtype=np.uint64)
        pkt = cls(
            src_ip=int(ints[0]),
            dst_ip=int(ints[1]),
            proto=int(rng.choice(_TRANSPORT_PROTOS)),
            ip_id=int(rng.integers(0, 1 << 16)),
            src_port=int(rng.integers(1024, 1 << 16)),
            dst_port=int(rng.integers(1, 1 << 16)),
        )
        return pkt if bits is None else pkt.with_header_bits(bits, width)


def label_packet(pkt: PacketHeader, width: int = LABEL_WIDTH) -> int:
    """Deterministic ``width``-bit label over the labeling fields (TTL and payload excluded)."""
    if not 1 <= width <= 63:
        raise ValueError("label width must be in 1..63")
    return _kernels.label_hash_scalar(pkt.label_fields(), width)


def label_batch(fields: np.ndarray, width: int = LABEL_WIDTH) -> np.ndarray:
    """Labels for an (n, 6) matrix of labeling fields."""
    return _kernels.label_hash(fields, width)


@dataclass(frozen=True)
class Observation:
    label: int
    device: DeviceId
    in_port: PortId
    out_port: Optional[PortId]
    timestamp: int

    def to_dict(self) -> dict:
        return asdict(self)


class ObservationLog:
    """Append-only list of observations, indexed by label on demand."""

    def __init__(self, observations: Iterable[Observation] = ()):
        self._obs: list[Observation] = list(observations)
        self._lock = threading.Lock()

    def append(self, obs: Observation) -> None:
        with self._lock:
            self._obs.append(obs)

    def extend(self, obs: Iterable[Observation]) -> None:
        with self._lock:
            self._obs.extend(obs)

    def __iter__(self) -> Iterator[Observation]:
        return iter(list(self._obs))

    def __len__(self) -> int:
        return len(self._obs)

    def by_label(self) -> dict[int, list[Observation]]:
        out: dict[int, list[Observation]] = defaultdict(list)
        for o in self._obs:
            out[o.label].append(o)
        return out

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for o in self._obs:
                fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "ObservationLog":
        obs = []
        for line in Path(path).read_text().splitlines():
            if line.strip():
                d = json.loads(line)
                obs.append(Observation(int(d["label"]), d["device"], int(d["in_port"]),
                                       None if d["out_port"] is None else int(d["out_port"]), int(d["timestamp"])))
        return cls(obs)


@dataclass(frozen=True)
class Hop:
    device: DeviceId
    timestamp: int
    in_port: Optional[PortId] = None
    out_ports: tuple[PortId, ...] = ()
    parent: int = -1


class InvalidTrajectory(ValueError):
    """Observations for one label do not form a single walk (label collision)."""


@dataclass(frozen=True)
class Trajectory:
    label: int
    hops: tuple[Hop, ...]
    port: Optional[PortId] = None

    def __post_init__(self):
        if not self.hops:
            raise ValueError("a trajectory has at least one hop")

    @classmethod
    def from_devices(cls, devices: Sequence[DeviceId], label: int = 0, times: Optional[Sequence[int]] = None,
                     port: Optional[PortId] = None) -> "Trajectory":
        """Linear trajectory without port information."""
        times = list(times) if times is not None else list(range(len(devices)))
        hops = tuple(Hop(d, int(t), parent=i - 1) for i, (d, t) in enumerate(zip(devices, times)))
        return cls(label, hops, port)

    @property
    def devices(self) -> tuple[DeviceId, ...]:
        return tuple(h.device for h in self.hops)

    @property
    def distinct_devices(self) -> tuple[DeviceId, ...]:
        return tuple(dict.fromkeys(self.devices))

    @property
    def has_ports(self) -> bool:
        return any(h.out_ports or h.in_port is not None for h in self.hops)

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.hops]
        for i, h in enumerate(self.hops):
            if h.parent >= 0:
                kids[h.parent].append(i)
        return kids

    @property
    def is_linear(self) -> bool:
        return all(len(k) <= 1 for k in self.children())

    def fork_index(self) -> Optional[int]:
        """First hop (in time order) that emitted more than one copy."""
        kids = self.children()
        for i, h in enumerate(self.hops):
            if len(kids[i]) > 1 or len(h.out_ports) > 1:
                return i
        return None

    def chains(self) -> list[tuple[int, ...]]:
        """Root-to-leaf hop index sequences."""
        kids = self.children()
        out = []
        stack = [(0, (0,))]
        while stack:
            i, path = stack.pop()
            if not kids[i]:
                out.append(path)
            for k in reversed(kids[i]):
                stack.append((k, path + (k,)))
        return sorted(out)

    def device_chains(self) -> list[tuple[DeviceId, ...]]:
        return [tuple(self.hops[i].device for i in c) for c in self.chains()]

    def delivered(self) -> bool:
        """Whether the walk ended somewhere other than a drop (for the linear case)."""
        last = self.hops[-1]
        return last.device == CONTROLLER or bool(last.out_ports)

    def signature(self) -> tuple:
        return tuple((h.device, h.parent) for h in self.hops)


def reconstruct_actual(observations: Iterable[Observation], label: int,
                       snapshot: Optional[NetworkSnapshot] = None) -> Optional[Trajectory]:
    """Rebuild the walk of one labeled packet from its per-hop observations.

    Observations are grouped into hops by (device, timestamp, in_port). With a
    snapshot, every hop after the first must be explained by an earlier hop at
    the upstream end of its in_port link (or, at the controller, by an earlier
    controller-bound output); a second unexplained start means two packets
    shared the label and the result is rejected. Without a snapshot, hops are
    simply chained in timestamp order.

    Returns ``None`` when there are no observations.
    """
    obs = [o for o in observations if o.label == label]
    if not obs:
        return None
    grouped: dict[tuple, list[PortId]] = {}
    for o in obs:
        key = (o.timestamp, o.device, o.in_port)
        outs = grouped.setdefault(key, [])
        if o.out_port is not None:
            outs.append(o.out_port)
    keys = sorted(grouped, key=lambda k: (k[0], str(k[1]), k[2]))
    if snapshot is None:
        hops = tuple(Hop(d, t, p, tuple(sorted(grouped[(t, d, p)])), i - 1) for i, (t, d, p) in enumerate(keys))
        return Trajectory(label, hops)
    hops: list[Hop] = []
    # each copy a hop emits explains exactly one later arrival; copies are matched oldest first
    free: list[tuple[int, PortId]] = []
    for i, (t, d, p) in enumerate(keys):
        outs = tuple(sorted(grouped[(t, d, p)]))
        parent = -1
        if i > 0:
            if d == CONTROLLER:
                want_dev, want_port = None, CONTROLLER_PORT
            else:
                up = snapshot.peer(d, p)
                if up is None:
                    raise InvalidTrajectory(f"label {label}: second injection at {d} port {p} (t={t})")
                want_dev, want_port = up
            for k, (j, port) in enumerate(free):
                h = hops[j]
                if port == want_port and h.timestamp < t and (want_dev is None or h.device == want_dev):
                    parent = j
                    del free[k]
                    break
            if parent < 0:
                raise InvalidTrajectory(f"label {label}: hop at {d} (t={t}) has no upstream hop")
        hops.append(Hop(d, t, p, outs, parent))
        free.extend((i, port) for port in outs)
    return Trajectory(label, tuple(hops))


class TrajectoryStore:
    """Trajectories keyed by (label, walk); repeats of the same walk are stored once."""

    def __init__(self):
        self._items: dict[tuple, Trajectory] = {}
        self._lock = threading.RLock()

    def add(self, tr: Trajectory) -> bool:
        key = (tr.label, tr.devices)
        with self._lock:
            if key in self._items:
                return False
            self._items[key] = tr
            return True

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Trajectory]:
        with self._lock:
            return iter(list(self._items.values()))

    def __contains__(self, tr: Trajectory) -> bool:
        return (tr.label, tr.devices) in self._items

    def by_label(self, label: int) -> list[Trajectory]:
        return [t for (lab, _), t in self._items.items() if lab == label]


def store_and_dedupe(store: TrajectoryStore, tr: Trajectory) -> bool:
    """Insert ``tr`` unless an identical (label, device sequence) is already stored."""
    return store.add(tr)


def collision_bound(n: int, width: int = LABEL_WIDTH) -> float:
    """Expected number of colliding pairs among ``n`` uniform ``width``-bit labels."""
    return n * (n - 1) / 2 / float(1 << width)
