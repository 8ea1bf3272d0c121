"""Compare actual against expected trajectories, classify the deviation, and localize it."""

from __future__ import annotations

import json
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np

from .headerspace import expected_trajectories
from .netmodel import CONTROLLER, CONTROLLER_PORT, ActionType, DeviceId, NetworkSnapshot, NetworkState, PortId, state_changed
from .trajectory import (
    LABEL_WIDTH,
    InvalidTrajectory,
    Observation,
    ObservationLog,
    PacketHeader,
    Trajectory,
    label_packet,
    reconstruct_actual,
)

log = logging.getLogger(__name__)

DEFAULT_LINK_LATENCY_NS = 1_000_000
DEFAULT_CONTROL_LATENCY_NS = 2_000_000
DEFAULT_DELAY_FLOOR_NS = 1_000_000

Path = tuple[DeviceId, ...]


class VerdictKind(str, Enum):
    BENIGN = "benign"
    REPLAY = "replay"
    MISROUTE = "misroute"
    DROP = "drop"
    GENERATION = "generation"
    DELAY = "delay"


MALICIOUS_KINDS = tuple(k for k in VerdictKind if k is not VerdictKind.BENIGN)


def _lcp(a: Sequence, b: Sequence) -> int:
    n = 0
    for x, y in zip(a, b):
        if x != y:
            break
        n += 1
    return n


@dataclass(frozen=True)
class TrajectoryPair:
    """One probe's expected walks against its observed walk, with timing.

    ``expected`` holds every expected device sequence for the (source,
    destination) pair; classification uses the best-matching one. Times are
    simulated nanoseconds.
    """

    expected: tuple[Path, ...]
    actual: Trajectory
    t_expected: float = 0.0
    t_actual: float = 0.0
    t_delay: float = 0.0
    expected_hops: tuple[float, ...] = ()
    entry: Optional[DeviceId] = None

    @classmethod
    def of(cls, expected, actual, **kw) -> "TrajectoryPair":
        """Convenience constructor accepting a single path or a collection of paths."""
        if isinstance(actual, Trajectory):
            tr = actual
        else:
            tr = Trajectory.from_devices(tuple(actual))
        exp = tuple(expected)
        if exp and not isinstance(exp[0], (tuple, list)):
            exp = (exp,)
        return cls(tuple(tuple(e) for e in exp), tr, **kw)

    @property
    def delta(self) -> float:
        return self.t_actual - self.t_expected

    @property
    def main_chain(self) -> Path:
        """The root-to-leaf walk of A that agrees longest with some expected path."""
        chains = self.actual.device_chains()
        if not self.expected:
            return chains[0]
        return max(chains, key=lambda c: (max(_lcp(c, e) for e in self.expected), len(c), tuple(reversed(c))))

    @property
    def best(self) -> Path:
        """Expected path with the longest common prefix with A; ties go to the smallest."""
        if not self.expected:
            return ()
        chains = self.actual.device_chains()
        scored = [(max(_lcp(c, e) for c in chains), e) for e in self.expected]
        top = max(s for s, _ in scored)
        return min(e for s, e in scored if s == top)


def _replayed(pair: TrajectoryPair, off: list[DeviceId]) -> bool:
    A = pair.actual
    if A.has_ports:
        if A.fork_index() is None:
            return False
        return any(c[: len(e)] == e for c in A.device_chains() for e in pair.expected)
    remainder = tuple(d for d in A.devices if d not in off)
    return bool(off) and remainder in pair.expected


def classify(pair: TrajectoryPair, strict_drop: bool = False) -> VerdictKind:
    """Kind of deviation, checked in a fixed order.

    benign, replay, misroute, drop, generation, delay; combinations matching
    none of them are reported as misroute (see :func:`anomalous`).
    """
    A = pair.actual
    if not pair.expected:
        return VerdictKind.GENERATION
    devs = A.devices
    delivered = A.delivered() if A.has_ports else True
    if A.is_linear and devs in pair.expected and delivered:
        return VerdictKind.DELAY if pair.delta > pair.t_delay else VerdictKind.BENIGN
    best = pair.best
    E = set(best)
    distinct = A.distinct_devices
    off = [d for d in distinct if d not in E]
    shared = [d for d in distinct if d in E]
    if _replayed(pair, off):
        return VerdictKind.REPLAY
    if off and shared:
        return VerdictKind.MISROUTE
    if strict_drop:
        if (set(distinct) - E) and len(set(distinct)) < len(E):
            return VerdictKind.DROP
    elif A.is_linear and not off:
        proper = len(devs) < len(best) and best[: len(devs)] == devs
        if proper or (devs == best and not delivered):
            return VerdictKind.DROP
    if not shared:
        return VerdictKind.GENERATION
    if pair.delta > pair.t_delay:
        return VerdictKind.DELAY
    return VerdictKind.MISROUTE


def anomalous(pair: TrajectoryPair, kind: VerdictKind) -> bool:
    """True when ``kind`` is the misroute fallback rather than a direct rule match."""
    if kind is not VerdictKind.MISROUTE:
        return False
    E = set(pair.best)
    distinct = pair.actual.distinct_devices
    return not ([d for d in distinct if d not in E] and [d for d in distinct if d in E])


def _divergence(pair: TrajectoryPair) -> DeviceId:
    chain = pair.main_chain
    n = _lcp(chain, pair.best)
    return chain[n - 1] if n else chain[0]


def _delay_culprit(pair: TrajectoryPair) -> DeviceId:
    A = pair.actual
    chain_idx = next((c for c in A.chains() if tuple(A.hops[i].device for i in c) == pair.best), A.chains()[0])
    devices = [A.hops[i].device for i in chain_idx]
    times = np.array([A.hops[i].timestamp for i in chain_idx], dtype=float)
    if len(times) < 2:
        return devices[0]
    actual = np.diff(times)
    n = len(actual)
    if len(pair.expected_hops) == n:
        expect = np.asarray(pair.expected_hops, dtype=float)
    else:
        expect = np.full(n, pair.t_expected / n)
    excess = np.cumsum(actual - expect)
    share = pair.t_delay * np.arange(1, n + 1) / n
    over = np.flatnonzero(excess > share)
    i = int(over[0]) if over.size else int(np.argmax(actual - expect))
    # interval i is the time spent leaving device i
    return devices[i]


def localize(pair: TrajectoryPair, kind: VerdictKind) -> frozenset[DeviceId]:
    """Device(s) responsible for the deviation."""
    if kind is VerdictKind.BENIGN:
        raise ValueError("benign pairs have nothing to localize")
    A = pair.actual
    E = set(pair.best)
    if kind is VerdictKind.GENERATION or not any(d in E for d in A.devices):
        return frozenset({pair.entry or A.hops[0].device})
    if kind is VerdictKind.DELAY:
        return frozenset({_delay_culprit(pair)})
    if kind is VerdictKind.REPLAY and A.has_ports:
        i = A.fork_index()
        if i is not None:
            return frozenset({A.hops[i].device})
    if kind in (VerdictKind.REPLAY, VerdictKind.MISROUTE):
        for j, hop in enumerate(A.hops):
            if hop.device not in E:
                parent = hop.parent if hop.parent >= 0 else j - 1
                if parent >= 0:
                    return frozenset({A.hops[parent].device})
                break
    return frozenset({_divergence(pair)})


def continuation(pair: TrajectoryPair, flagged: Iterable[DeviceId] = ()) -> frozenset[DeviceId]:
    """Devices from both set differences of A and E still left to examine."""
    A = set(pair.actual.devices)
    E = set(pair.best)
    return frozenset((A - E) | (E - A)) - set(flagged) - {CONTROLLER}


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    malicious_devices: frozenset[DeviceId] = frozenset()
    evidence: Optional[TrajectoryPair] = None
    target: DeviceId = ""
    peer: DeviceId = ""
    port: Optional[PortId] = None
    notes: tuple[str, ...] = ()
    continuation: frozenset[DeviceId] = frozenset()
    probe: Optional[PacketHeader] = None
    sweep: int = 0
    unlocalizable: bool = False

    def __post_init__(self):
        if self.kind is VerdictKind.BENIGN and self.malicious_devices:
            raise ValueError("benign verdicts name no devices")
        if self.kind is not VerdictKind.BENIGN and not self.malicious_devices and not self.unlocalizable:
            raise ValueError("non-benign verdicts must name a device or be marked unlocalizable")

    @property
    def benign(self) -> bool:
        return self.kind is VerdictKind.BENIGN

    def to_record(self) -> dict:
        ev = self.evidence
        return {
            "target": self.target,
            "peer": self.peer,
            "port": self.port,
            "kind": self.kind.value,
            "malicious_devices": sorted(self.malicious_devices),
            "E": list(ev.best) if ev else [],
            "A": list(ev.actual.devices) if ev else [],
            "T_e": ev.t_expected if ev else None,
            "T_a": ev.t_actual if ev else None,
            "T_d": ev.t_delay if ev else None,
            "sweep": self.sweep,
            "notes": list(self.notes),
        }


def verdict_from_pair(pair: TrajectoryPair, strict_drop: bool = False, **kw) -> Verdict:
    kind = classify(pair, strict_drop=strict_drop)
    if kind is VerdictKind.BENIGN:
        return Verdict(kind, frozenset(), pair, **kw)
    flagged = localize(pair, kind)
    notes = tuple(kw.pop("notes", ()))
    if anomalous(pair, kind):
        notes += ("anomaly: no rule matched directly; reported as misroute",)
    return Verdict(kind, flagged, pair, notes=notes, continuation=continuation(pair, flagged), **kw)


def write_verdicts(verdicts: Iterable[Verdict], path) -> None:
    with open(path, "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_record(), sort_keys=True) + "\n")


# ------------------------------------------------------------------ congestion


@dataclass
class _Samples:
    traversals: int = 0
    drops: int = 0
    excess: list = field(default_factory=list)

    @property
    def loss(self) -> float:
        return self.drops / self.traversals if self.traversals else 0.0


@dataclass
class CongestionEstimator:
    """Benign loss and delay statistics per directed link and per path.

    An estimator that was never calibrated assumes a clean network: nominal
    latencies, T_d at the floor, no demotion of drops.
    """

    link_latency_ns: float = DEFAULT_LINK_LATENCY_NS
    control_latency_ns: float = DEFAULT_CONTROL_LATENCY_NS
    floor_ns: float = DEFAULT_DELAY_FLOOR_NS
    fallback_delay_ns: float = 5 * DEFAULT_DELAY_FLOOR_NS
    drop_threshold: float = 0.0
    min_samples: int = 30
    quantile: float = 0.99
    links: dict[tuple[DeviceId, DeviceId], _Samples] = field(default_factory=dict)
    paths: dict[Path, _Samples] = field(default_factory=dict)
    calibrated: bool = False

    def _nominal(self, u: DeviceId, v: DeviceId) -> float:
        return self.control_latency_ns if v == CONTROLLER else self.link_latency_ns

    def _link(self, u: DeviceId, v: DeviceId) -> Optional[_Samples]:
        s = self.links.get((u, v))
        if s is None or len(s.excess) < self.min_samples:
            return None
        return s

    def expected_hops(self, path: Sequence[DeviceId]) -> tuple[float, ...]:
        out = []
        for u, v in zip(path, path[1:]):
            s = self._link(u, v) if self.calibrated else None
            out.append(self._nominal(u, v) + (float(np.mean(s.excess)) if s else 0.0))
        return tuple(out)

    def t_expected(self, path: Sequence[DeviceId]) -> float:
        return float(sum(self.expected_hops(path)))

    def t_delay(self, path: Sequence[DeviceId]) -> float:
        path = tuple(path)
        if not self.calibrated or len(path) < 2:
            return float(self.floor_ns)
        ps = self.paths.get(path)
        if ps is not None and len(ps.excess) >= self.min_samples:
            ex = np.asarray(ps.excess, dtype=float)
            return float(max(self.floor_ns, np.quantile(ex - ex.mean(), self.quantile)))
        total = 0.0
        for u, v in zip(path, path[1:]):
            if v == CONTROLLER:
                continue
            s = self._link(u, v)
            if s is None:
                return float(max(self.floor_ns, self.fallback_delay_ns))
            ex = np.asarray(s.excess, dtype=float)
            total += float(np.quantile(ex - ex.mean(), self.quantile))
        return float(max(self.floor_ns, total))

    def drop_rate(self, path: Sequence[DeviceId]) -> float:
        keep = 1.0
        for u, v in zip(path, path[1:]):
            s = self.links.get((u, v))
            if s is not None and s.traversals:
                keep *= 1.0 - s.loss
        return 1.0 - keep

    def demoted(self, path: Sequence[DeviceId]) -> bool:
        """Whether a single missing packet on ``path`` may be benign loss."""
        if not self.calibrated:
            return False
        for u, v in zip(path, path[1:]):
            if v == CONTROLLER:
                continue
            s = self.links.get((u, v))
            if s is None or s.traversals < self.min_samples:
                return True
        return self.drop_rate(path) > self.drop_threshold


def estimate_congestion(benign_runs: ObservationLog, expected: Mapping[int, Path],
                        min_labels: int = 50, **params) -> CongestionEstimator:
    """Fit an estimator from benign traffic whose intended paths are known.

    ``expected`` maps each packet label to the path it should have taken.
    Labels whose observations do not line up with their path (collisions,
    reroutes) are ignored. With fewer than ``min_labels`` usable packets the
    estimator falls back to conservative defaults and logs a warning.
    """
    est = CongestionEstimator(**params)
    grouped = benign_runs.by_label()
    usable = 0
    for label, path in expected.items():
        obs = grouped.get(label)
        if not obs:
            continue
        hops = sorted({(o.timestamp, o.device) for o in obs})
        devs = tuple(d for _, d in hops)
        if len(devs) > len(path) or tuple(path[: len(devs)]) != devs:
            continue
        usable += 1
        times = [t for t, _ in hops]
        for i in range(len(devs) - 1):
            u, v = devs[i], devs[i + 1]
            s = est.links.setdefault((u, v), _Samples())
            s.traversals += 1
            s.excess.append(times[i + 1] - times[i] - est._nominal(u, v))
        if len(devs) < len(path):
            s = est.links.setdefault((devs[-1], path[len(devs)]), _Samples())
            s.traversals += 1
            s.drops += 1
        else:
            ps = est.paths.setdefault(tuple(path), _Samples())
            ps.traversals += 1
            ps.excess.append(times[-1] - times[0] - sum(est._nominal(u, v) for u, v in zip(path, path[1:])))
    est.calibrated = True
    if usable < min_labels:
        log.warning("only %d usable calibration packets; using conservative congestion defaults", usable)
        est.links.clear()
        est.paths.clear()
    return est


@dataclass
class ControllerLoadMonitor:
    """Flags devices sending unusually many distinct trajectories to the controller."""

    sigma: float = 3.0
    baseline: dict[DeviceId, tuple[float, float]] = field(default_factory=dict)

    def calibrate(self, windows: Sequence[Mapping[DeviceId, int]]) -> None:
        devices = sorted({d for w in windows for d in w})
        for d in devices:
            xs = np.array([w.get(d, 0) for w in windows], dtype=float)
            self.baseline[d] = (float(xs.mean()), float(xs.std()))

    def threshold(self, device: DeviceId) -> float:
        mean, std = self.baseline.get(device, (0.0, 0.0))
        return mean + self.sigma * std

    def check(self, counts: Mapping[DeviceId, int]) -> list[DeviceId]:
        return sorted(d for d, c in counts.items() if c > self.threshold(d))


def controller_counts(trajectories: Iterable[Trajectory]) -> dict[DeviceId, int]:
    """Distinct controller-bound trajectories per sending device."""
    seen: dict[DeviceId, set] = defaultdict(set)
    for tr in trajectories:
        for h in tr.hops:
            if h.device == CONTROLLER and h.parent >= 0:
                seen[tr.hops[h.parent].device].add((tr.label, tr.devices))
    return {d: len(s) for d, s in seen.items()}


# -------------------------------------------------------------------- per-hop check


def _expected_next(snap: NetworkSnapshot, device: DeviceId, header: int, in_port: Optional[PortId]):
    """(successor devices, header after the rule) that ``device``'s table calls for."""
    dev = snap.devices.get(device)
    if dev is None:
        return [], header
    rule = dev.lookup(header, in_port)
    if rule is None:
        return [], header
    out_header = rule.rewrite.apply(header) if rule.rewrite is not None else header
    a = rule.action
    if a.type is ActionType.CONTROLLER:
        return [CONTROLLER], out_header
    if a.type is ActionType.FORWARD:
        ports = [a.port]
    elif a.type is ActionType.FLOOD:
        ports = [p for p in dev.ports if p != in_port]
    else:
        return [], out_header
    nxt = []
    for p in ports:
        end = snap.peer(device, p)
        if end is not None:
            nxt.append(end[0])
    return nxt, out_header


def hop_deviations(snap: NetworkSnapshot, A: Trajectory, header: int,
                   estimator: Optional[CongestionEstimator] = None,
                   ttl: int = 64) -> list[tuple[VerdictKind, DeviceId, str]]:
    """Hops whose observed successors disagree with the hop's own flow table.

    Only arrivals at downstream devices are used, never a device's report
    about itself. Missing successors mean a drop, extra ones a replay,
    different ones a misroute, and a successor arriving later than the link
    allows a delay.
    """
    est = estimator or CongestionEstimator()
    if not A.hops or not A.has_ports:
        return []
    kids = A.children()
    headers: dict[int, int] = {0: header}
    ttls: dict[int, int] = {0: ttl}
    out = []
    for i, h in enumerate(A.hops):
        if h.device == CONTROLLER or i not in headers:
            continue
        if ttls[i] <= 1:
            # expired packets are discarded by honest devices too
            want, nxt_header = [], headers[i]
        else:
            want, nxt_header = _expected_next(snap, h.device, headers[i], h.in_port)
        got = [A.hops[j].device for j in kids[i]]
        for j in kids[i]:
            headers[j] = nxt_header
            ttls[j] = ttls[i] - 1
        if sorted(got) == sorted(want):
            for j in kids[i]:
                c = A.hops[j]
                excess = c.timestamp - h.timestamp - est._nominal(h.device, c.device)
                limit = est.t_delay((h.device, c.device))
                if excess > limit:
                    out.append((VerdictKind.DELAY, h.device, f"hop {h.device}->{c.device} took {excess:.0f} ns extra"))
                    break
            continue
        extra = [d for d in got if d not in want]
        missing = [d for d in want if d not in got]
        if not extra and missing:
            out.append((VerdictKind.DROP, h.device, f"hop {h.device} never reached {', '.join(missing)}"))
        elif extra and not missing:
            out.append((VerdictKind.REPLAY, h.device, f"hop {h.device} also sent to {', '.join(extra)}"))
        elif extra:
            out.append((VerdictKind.MISROUTE, h.device, f"hop {h.device} sent to {', '.join(extra)}"))
    return out


# -------------------------------------------------------------------- scanning


class StaleSnapshot(RuntimeError):
    """The live network changed while a scan was using an older snapshot."""


class ProbeNetwork(Protocol):
    live_state: NetworkState

    def inject(self, pkt: PacketHeader, device: DeviceId, port: PortId, key: tuple = ()) -> list[Observation]:
        ...


@dataclass
class ScanConfig:
    probes_per_pair: int = 4
    delay_confirmations: int = 3
    drop_confirmations: int = 3
    strict_drop: bool = False
    label_width: int = LABEL_WIDTH
    seed: int = 0
    include_controller: bool = True


def _tag(name: str) -> int:
    return zlib.crc32(str(name).encode())


class Scanner:
    """Probe-based scan of one snapshot against a live network.

    Each probe runs in its own clean slot, so any label other than the probe's
    that appears during the slot was produced by a device rather than a host.
    """

    def __init__(self, snap: NetworkSnapshot, network: ProbeNetwork,
                 estimator: Optional[CongestionEstimator] = None,
                 config: Optional[ScanConfig] = None, sweep: int = 0):
        self.snap = snap
        self.network = network
        self.estimator = estimator or CongestionEstimator()
        self.config = config or ScanConfig()
        self.sweep = sweep
        self.unreachable: list[tuple[DeviceId, DeviceId, PortId]] = []
        self.invalid = 0
        self.probes_sent = 0
        self.trajectories: list[Trajectory] = []

    def _check_fresh(self) -> None:
        if state_changed(self.snap, self.network.live_state):
            raise StaleSnapshot(f"snapshot epoch {self.snap.epoch} no longer matches the network")

    def _send(self, pkt: PacketHeader, target: DeviceId, port: PortId, key: tuple):
        self.probes_sent += 1
        obs = self.network.inject(pkt, target, port, key=key)
        by_label: dict[int, list[Observation]] = defaultdict(list)
        for o in obs:
            by_label[o.label].append(o)
        return by_label

    def _entry(self, tr: Trajectory, probe: Optional[Trajectory]) -> DeviceId:
        root = tr.hops[0]
        if root.device == CONTROLLER:
            if probe is not None:
                for h in probe.hops:
                    if CONTROLLER_PORT in h.out_ports:
                        return h.device
            return root.device
        up = self.snap.peer(root.device, root.in_port) if root.in_port is not None else None
        return up[0] if up else root.device

    def _pair(self, A: Trajectory, E_all: tuple[Path, ...], entry=None) -> TrajectoryPair:
        if not E_all:
            return TrajectoryPair((), A, entry=entry)
        probe = TrajectoryPair(E_all, A)
        best = probe.best
        chain_idx = max(A.chains(), key=lambda c: _lcp([A.hops[i].device for i in c], best))
        m = max(1, min(len(chain_idx), _lcp([A.hops[i].device for i in chain_idx], best)))
        prefix = best[:m]
        t_a = A.hops[chain_idx[m - 1]].timestamp - A.hops[chain_idx[0]].timestamp
        est = self.estimator
        return TrajectoryPair(
            E_all, A,
            t_expected=est.t_expected(prefix),
            t_actual=float(t_a),
            t_delay=est.t_delay(prefix),
            expected_hops=est.expected_hops(prefix),
            entry=entry,
        )

    def _evaluate(self, pkt, target, peer, port, E_all, key) -> tuple[Optional[list[Verdict]], Optional[TrajectoryPair]]:
        """One slot: (verdicts, probe pair), or (None, None) when inconclusive.

        The first verdict judges the probe's own trajectory as a whole. Any
        further verdicts name other devices that misbehaved on the same slot:
        labels no host sent, and hops whose successors disagree with that
        hop's flow table.
        """
        cfg = self.config
        label = label_packet(pkt, cfg.label_width)
        by_label = self._send(pkt, target, port, key)
        kw = dict(target=target, peer=peer, port=port, probe=pkt, sweep=self.sweep)
        try:
            A = reconstruct_actual(by_label.pop(label, []), label, self.snap)
        except InvalidTrajectory as exc:
            self.invalid += 1
            log.debug("discarding probe: %s", exc)
            return None, None
        foreign = []
        for lab in sorted(by_label):
            try:
                tr = reconstruct_actual(by_label[lab], lab, self.snap)
            except InvalidTrajectory:
                self.invalid += 1
                continue
            foreign.append(tr)
        if A is None:
            return None, None
        self.trajectories.append(A)
        self.trajectories.extend(foreign)
        pair = self._pair(A, E_all)
        verdict = verdict_from_pair(pair, strict_drop=cfg.strict_drop, **kw)
        gen = []
        for tr in foreign:
            entry = self._entry(tr, A)
            gp = TrajectoryPair((), tr, entry=entry)
            gen.append(Verdict(VerdictKind.GENERATION, frozenset({entry}), gp,
                               notes=(f"label {tr.label} not sent by any host",), **kw))
        if verdict.kind is VerdictKind.DROP:
            for g in gen:
                if g.malicious_devices == verdict.malicious_devices:
                    note = "probe vanished where an unexpected label appeared: modified in flight"
                    verdict = Verdict(g.kind, g.malicious_devices, g.evidence, notes=g.notes + (note,), **kw)
                    break
        out = [] if verdict.benign and gen else [verdict]
        seen = set(verdict.malicious_devices)
        for g in gen:
            if not g.malicious_devices <= seen:
                out.append(g)
                seen |= g.malicious_devices
        if not verdict.benign:
            for kind, dev, note in hop_deviations(self.snap, A, pkt.header_bits(self.snap.header_bits),
                                                  self.estimator, pkt.ttl):
                if dev in seen:
                    continue
                seen.add(dev)
                out.append(Verdict(kind, frozenset({dev}), pair, notes=(note,), **kw))
        return out, pair

    def _needs_confirmation(self, verdict: Verdict) -> int:
        """Re-probes a verdict must survive before it is reported."""
        cfg = self.config
        if verdict.kind is VerdictKind.DELAY:
            return cfg.delay_confirmations - 1
        if verdict.kind is VerdictKind.DROP:
            per_hop = any(n.startswith("hop ") for n in verdict.notes)
            # a per-hop drop names one link; any calibrated loss on the network puts it in doubt
            if per_hop and self.estimator.calibrated:
                return cfg.drop_confirmations
            if not per_hop and self.estimator.demoted(verdict.evidence.best):
                return cfg.drop_confirmations
        return 0

    def _confirm(self, verdict: Verdict, pkt, target, peer, port, E_all, key, rounds: int) -> bool:
        for attempt in range(1, rounds + 1):
            again, _ = self._evaluate(pkt, target, peer, port, E_all, key + (attempt,))
            if not again or not any(a.kind is verdict.kind and a.malicious_devices == verdict.malicious_devices
                                    for a in again):
                return False
        return True

    def scan_pair(self, target: DeviceId, peer: DeviceId, port: PortId) -> list[Verdict]:
        """Probe one (target, peer) pair.

        Returns the distinct confirmed malicious verdicts across all probes, a
        single benign verdict if there were none, or nothing when no probe was
        conclusive or ``peer`` is unreachable.
        """
        cfg = self.config
        reach = expected_trajectories(self.snap, target, peer, port)
        if reach.header_space.is_empty():
            self.unreachable.append((target, peer, port))
            return []
        E_all = tuple(sorted(reach.trajectories))
        last_pair = None
        found: dict[tuple, Verdict] = {}
        for i in range(cfg.probes_per_pair):
            self._check_fresh()
            key = (self.sweep, _tag(target), _tag(peer), int(port), i)
            rng = np.random.default_rng([cfg.seed, *key])
            bits = reach.header_space.sample(rng)
            pkt = PacketHeader.random(rng, bits, self.snap.header_bits)
            verdicts, pair = self._evaluate(pkt, target, peer, port, E_all, key + (0,))
            if verdicts is None:
                continue
            last_pair = pair or last_pair
            for verdict in verdicts:
                if verdict.benign:
                    continue
                ident = (verdict.kind, verdict.malicious_devices)
                if ident in found:
                    continue
                rounds = self._needs_confirmation(verdict)
                if rounds > 0 and not self._confirm(verdict, pkt, target, peer, port, E_all, key, rounds):
                    log.debug("%s at %s on %s->%s not confirmed; treating as congestion", verdict.kind.value,
                              sorted(verdict.malicious_devices), target, peer)
                    continue
                if rounds > 0:
                    verdict = replace(verdict, notes=verdict.notes + (f"confirmed by {rounds} re-probes",))
                found[ident] = verdict
        if found:
            return list(found.values())
        if last_pair is None:
            return []
        return [Verdict(VerdictKind.BENIGN, frozenset(), last_pair, target, peer, port, sweep=self.sweep)]

    def scan(self, target: DeviceId, port: PortId) -> list[Verdict]:
        """Verdicts for every reachable peer of ``target`` (other devices, then the controller)."""
        if target not in self.snap.devices:
            raise KeyError(f"unknown device {target!r}")
        self._check_fresh()
        peers = [d for d in sorted(self.snap.devices) if d != target]
        if self.config.include_controller:
            peers.append(CONTROLLER)
        out = []
        for peer in peers:
            out.extend(self.scan_pair(target, peer, port))
        return out


def scan_for_attacks(snap: NetworkSnapshot, target: DeviceId, port: PortId, network: ProbeNetwork,
                     estimator: Optional[CongestionEstimator] = None,
                     config: Optional[ScanConfig] = None, sweep: int = 0) -> list[Verdict]:
    return Scanner(snap, network, estimator, config, sweep).scan(target, port)
