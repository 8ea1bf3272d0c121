"""Discrete-event packet forwarding over the live network state."""

from __future__ import annotations

import heapq
import itertools
import zlib
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ..detection import DEFAULT_CONTROL_LATENCY_NS, DEFAULT_LINK_LATENCY_NS
from ..netmodel import CONTROLLER, CONTROLLER_PORT, ActionType, DeviceId, NetworkSnapshot, NetworkState, PortId
from ..trajectory import LABEL_WIDTH, Observation, ObservationLog, PacketHeader, label_packet
from .implants import AttackImplant, Delay, Drop, FireRecord, Generate, Misroute, Replay, check_conflicts, validate


@lru_cache(maxsize=1 << 16)
def _label(pkt: PacketHeader, width: int) -> int:
    return label_packet(pkt, width)


def _mix(label: int, salt: int) -> float:
    """Deterministic value in [0, 1) per (label, salt); drives selective drops."""
    z = (label * 0x9E3779B97F4A7C15 + salt * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 31
    z = (z * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    z ^= z >> 29
    return (z >> 11) / float(1 << 53)


@dataclass
class CongestionModel:
    """Benign loss and queuing on links; ``links=None`` means every link."""

    drop_rate: float = 0.0
    queue_mean_ns: float = 0.0
    links: Optional[frozenset] = None

    def affects(self, u: DeviceId, v: DeviceId) -> bool:
        if self.drop_rate <= 0 and self.queue_mean_ns <= 0:
            return False
        return self.links is None or frozenset((u, v)) in self.links


@dataclass
class Delivery:
    label: int
    device: DeviceId
    port: PortId
    time: int


class Simulator:
    """Forwards packets hop by hop, applying implants at compromised devices.

    The simulator reads flow tables from ``live_state`` (what the controller
    installed); implants are invisible there. Every device records an
    observation per packet it handles: (label on arrival, in_port, out_port or
    None for drop, arrival time).
    """

    def __init__(self, state: Union[NetworkState, NetworkSnapshot], implants: Sequence[AttackImplant] = (),
                 seed: int = 0, link_latency_ns: int = DEFAULT_LINK_LATENCY_NS,
                 control_latency_ns: int = DEFAULT_CONTROL_LATENCY_NS, jitter_ns: int = 5_000,
                 congestion: Optional[CongestionModel] = None, label_width: int = LABEL_WIDTH,
                 slot_gap_ns: int = 100_000_000):
        if isinstance(state, NetworkSnapshot):
            state = NetworkState.from_snapshot(state)
        self.live_state = state
        self.implants: list[AttackImplant] = []
        self.fired: dict[int, FireRecord] = {}
        self.seed = seed
        self.link_latency_ns = link_latency_ns
        self.control_latency_ns = control_latency_ns
        self.jitter_ns = jitter_ns
        self.congestion = congestion or CongestionModel()
        self.label_width = label_width
        self.slot_gap_ns = slot_gap_ns
        self.now = 0
        self.deliveries: list[Delivery] = []
        self.probe_mode = False
        self.record: Optional[ObservationLog] = None
        for imp in implants:
            self.add_implant(imp)

    # -------------------------------------------------------------- implants

    def add_implant(self, imp: AttackImplant) -> int:
        check_conflicts(self.implants + [imp])
        snap = self.live_state.snapshot()
        validate(snap, imp)
        self.implants.append(imp)
        self.fired[len(self.implants) - 1] = FireRecord()
        return len(self.implants) - 1

    def remove_implants(self, device: Optional[DeviceId] = None) -> None:
        keep = [(i, imp) for i, imp in enumerate(self.implants) if device is not None and imp.device != device]
        self.implants = [imp for _, imp in keep]
        self.fired = {j: self.fired[i] for j, (i, _) in enumerate(keep)}

    def _fire(self, idx: int, t: int, observable: bool = True) -> None:
        rec = self.fired[idx]
        rec.count += 1
        if rec.first_ns is None:
            rec.first_ns = t
        if self.probe_mode and observable:
            rec.probes += 1

    # -------------------------------------------------------------- running

    def _rng(self, key: tuple) -> np.random.Generator:
        words = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF for k in key]
        return np.random.default_rng([self.seed & 0xFFFFFFFF, *words])

    def inject(self, pkt: PacketHeader, device: DeviceId, port: PortId, key: tuple = ()) -> list[Observation]:
        """Run one packet alone to completion and return every observation it caused."""
        start = self.now + self.slot_gap_ns
        self.probe_mode = True
        try:
            obs = self._run([(start, device, port, pkt)], self._rng(("probe",) + tuple(key)) if key else self._rng((start,)))
        finally:
            self.probe_mode = False
        return obs

    def run_flows(self, packets: Iterable[tuple[int, PacketHeader, DeviceId, PortId]], key: tuple = ()) -> list[Observation]:
        """Run concurrent traffic; times are offsets from the current clock."""
        base = self.now + self.slot_gap_ns
        starts = [(base + int(t), dev, port, pkt) for t, pkt, dev, port in packets]
        return self._run(starts, self._rng(("flows",) + tuple(key)))

    def _run(self, starts, rng: np.random.Generator) -> list[Observation]:
        state = self.live_state
        links = frozenset(state.links)
        if getattr(self, "_links_seen", None) != links:
            peer = state.peer_map()
            nbr = {}
            for (d, p), (n, _) in sorted(peer.items()):
                nbr.setdefault((d, n), p)
            self._links_seen, self._peer, self._nbr_ports = links, peer, nbr
        peer = self._peer
        width = state.header_bits
        cong = self.congestion
        seq = itertools.count()
        heap = [(t, next(seq), dev, port, pkt) for t, dev, port, pkt in starts]
        heapq.heapify(heap)
        obs: list[Observation] = []
        by_dev: dict[DeviceId, list[tuple[int, AttackImplant]]] = {}
        for i, imp in enumerate(self.implants):
            by_dev.setdefault(imp.device, []).append((i, imp))
        last = self.now
        while heap:
            t, _, dev, in_port, pkt = heapq.heappop(heap)
            last = max(last, t)
            label = _label(pkt, self.label_width)
            if dev == CONTROLLER:
                obs.append(Observation(label, CONTROLLER, in_port, None, t))
                continue
            device = state.devices.get(dev)
            if device is None:
                continue
            bits = pkt.header_bits(width)
            rule = device.lookup(bits, in_port)
            out_pkt = pkt
            outs: list[PortId] = []
            if rule is not None and pkt.ttl > 1:
                a = rule.action
                if a.type is ActionType.FORWARD:
                    outs = [a.port]
                elif a.type is ActionType.FLOOD:
                    outs = [p for p in device.ports if p != in_port]
                elif a.type is ActionType.CONTROLLER:
                    outs = [CONTROLLER_PORT]
                if rule.rewrite is not None:
                    out_pkt = pkt.with_header_bits(rule.rewrite.apply(bits), width)
            # (port, packet, extra delay)
            emit = [(p, out_pkt, 0) for p in outs]
            for idx, imp in by_dev.get(dev, ()):
                if not imp.in_scope(bits, in_port, outs):
                    continue
                if imp.probability < 1.0 and rng.random() >= imp.probability:
                    continue
                emit, fired = self._apply(imp, emit, label, bits, in_port, outs, width)
                if fired:
                    self._fire(idx, t, self._observable(imp, emit, dev, peer, state))
            if not emit:
                obs.append(Observation(label, dev, in_port, None, t))
                continue
            for port, p2, extra in emit:
                obs.append(Observation(label, dev, in_port, port, t))
                if port == CONTROLLER_PORT:
                    if dev in state.blocked_controller:
                        continue
                    heapq.heappush(heap, (t + self.control_latency_ns + extra, next(seq), CONTROLLER, 0, p2))
                    continue
                nxt = peer.get((dev, port))
                if nxt is None:
                    self.deliveries.append(Delivery(_label(p2, self.label_width), dev, port, t + extra))
                    continue
                delay = self.link_latency_ns + extra
                if self.jitter_ns:
                    delay += int(rng.integers(0, self.jitter_ns + 1))
                if cong.affects(dev, nxt[0]):
                    if cong.drop_rate > 0 and rng.random() < cong.drop_rate:
                        continue
                    if cong.queue_mean_ns > 0:
                        delay += int(rng.exponential(cong.queue_mean_ns))
                heapq.heappush(heap, (t + delay, next(seq), nxt[0], nxt[1], replace(p2, ttl=p2.ttl - 1)))
        self.now = last
        if self.record is not None:
            self.record.extend(obs)
        return obs

    @staticmethod
    def _observable(imp: AttackImplant, emit, dev: DeviceId, peer, state: NetworkState) -> bool:
        """Whether a later observation point can see the effect.

        Delays and header changes on a packet leaving toward a host happen
        after the last observation of that packet, so no device can see them.
        """
        if not isinstance(imp.action, (Delay, Generate)):
            return True
        for port, _, _ in emit:
            if port == CONTROLLER_PORT and dev not in state.blocked_controller:
                return True
            if port != CONTROLLER_PORT and (dev, port) in peer:
                return True
        return False

    def _apply(self, imp: AttackImplant, emit, label: int, bits: int, in_port: PortId, outs, width: int):
        a = imp.action
        if isinstance(a, Drop):
            if not emit:
                return emit, False
            if a.selectivity < 1.0 and _mix(label, zlib.crc32(imp.device.encode())) >= a.selectivity:
                return emit, False
            return [], True
        if isinstance(a, Replay):
            port = self._nbr_ports.get((imp.device, a.to))
            if port is None or port == in_port or not emit:
                return emit, False
            return emit + [(port, emit[0][1], 0)], True
        if isinstance(a, Misroute):
            if not emit or [p for p, _, _ in emit] == [a.port]:
                return emit, False
            return [(a.port, emit[0][1], 0)], True
        if isinstance(a, Delay):
            if not emit:
                return emit, False
            return [(p, q, extra + a.amount_ns) for p, q, extra in emit], True
        if isinstance(a, Generate):
            if not emit:
                return emit, False
            src = emit[0][1]
            forged = src.with_header_bits(a.rewrite.apply(src.header_bits(width)), width)
            if _label(forged, self.label_width) == label:
                forged = replace(forged, ip_id=(forged.ip_id + 1) & 0xFFFF)
            if a.fabricate:
                return emit + [(p, forged, 0) for p, _, _ in emit], True
            return [(p, forged, extra) for p, _, extra in emit], True
        raise TypeError(f"unsupported implant action {a!r}")

    def reachable_implants(self) -> list[int]:
        """Indices of implants that altered at least one probe."""
        return [i for i, rec in self.fired.items() if rec.probes > 0]


def implant(network: Union[Simulator, NetworkSnapshot], a: AttackImplant, **sim_kw) -> Simulator:
    """Attach an implant; the snapshot itself is left untouched."""
    sim = network if isinstance(network, Simulator) else Simulator(network, **sim_kw)
    sim.add_implant(a)
    return sim
