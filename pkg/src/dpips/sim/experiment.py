"""Experiment configuration, the sweep loop, and ground-truth metrics."""

from __future__ import annotations

import json
import logging
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from ..detection import (
    MALICIOUS_KINDS,
    CongestionEstimator,
    ScanConfig,
    Scanner,
    StaleSnapshot,
    Verdict,
    VerdictKind,
    estimate_congestion,
)
from ..headerspace import expected_trajectories, reachability, trace_header
from ..netmodel import (
    Action,
    DeviceId,
    FlowRule,
    NetworkSnapshot,
    NetworkState,
    PortId,
    build_snapshot,
    snapshot_to_docs,
)
from ..patterns import HeaderPattern, Rewrite
from ..response import (
    ActionKind,
    AlarmLog,
    ResponseEngine,
    ResponsePolicy,
    apply_to_network,
    load_policies,
)
from ..targetid import build_scan_plan, uniform_plan
from ..trajectory import (
    InvalidTrajectory,
    ObservationLog,
    PacketHeader,
    TrajectoryStore,
    label_packet,
    reconstruct_actual,
    store_and_dedupe,
)
from .implants import (
    DEFAULT_ATTACK_MIX,
    DEFAULT_SCOPE_MIX,
    AttackImplant,
    AttackKind,
    Delay,
    Drop,
    Generate,
    Misroute,
    Replay,
    Scope,
)
from .rules import generate_rules
from .simulator import CongestionModel, Simulator
from .topologies import BUNDLED, bundled_topology, figure1, star

log = logging.getLogger(__name__)

UNIT_NS = 1_000_000_000


@dataclass
class ExperimentConfig:
    topology: str = "aarnet"
    header_bits: int = 32
    prefixes: int = 40
    rule_seed: int = 1
    seed: int = 7
    attack_mix: dict = field(default_factory=lambda: {k.value: v for k, v in DEFAULT_ATTACK_MIX.items()})
    scope_mix: dict = field(default_factory=lambda: {k.value: v for k, v in DEFAULT_SCOPE_MIX.items()})
    implants: int = 0
    trials: int = 1
    congestion_drop_rate: float = 0.0
    congestion_queue_ns: float = 0.0
    calibration_units: int = 0
    flows_per_unit: int = 1000
    corpus_flows: int = 400
    sweeps: int = 1
    probes_per_pair: int = 4
    ports: str = "host"
    label_width: int = 20
    groups: int = 3
    delay_min_ms: float = 10.0
    delay_max_ms: float = 50.0
    policies: Optional[str] = None
    strict_drop: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        total = sum(float(v) for v in self.attack_mix.values())
        if total > 1.0 + 1e-9:
            raise ValueError(f"attack fractions sum to {total:.3f} > 1")
        for k in self.attack_mix:
            AttackKind(k)
        for k in self.scope_mix:
            Scope(k)
        if self.groups < 2:
            raise ValueError("groups must be >= 2")
        if self.ports not in ("host", "all"):
            raise ValueError("ports must be 'host' or 'all'")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**dict(doc))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ network


@dataclass(frozen=True)
class Network:
    snapshot: NetworkSnapshot
    topology: dict
    rules: dict

    @property
    def owned(self) -> dict[DeviceId, list[HeaderPattern]]:
        return {d: [HeaderPattern.parse(p) for p in ps] for d, ps in self.rules.get("prefixes", {}).items()}


def topology_for(name: str, header_bits: int = 32) -> dict:
    if name in BUNDLED:
        return bundled_topology(name, header_bits)
    if name.startswith("star"):
        return star(int(name[4:] or 6), header_bits)
    path = Path(name)
    if path.exists():
        return json.loads(path.read_text())
    raise KeyError(f"unknown topology {name!r}")


@lru_cache(maxsize=16)
def _network(topology: str, header_bits: int, prefixes: int, rule_seed: int) -> Network:
    if topology == "figure1":
        snap = figure1()
        topo, rules = snapshot_to_docs(snap)
        return Network(snap, topo, rules)
    topo = topology_for(topology, header_bits)
    rules = generate_rules(topo, prefixes, seed=rule_seed)
    return Network(build_snapshot(topo, rules), topo, rules)


def build_network(cfg: ExperimentConfig) -> Network:
    return _network(cfg.topology, cfg.header_bits, cfg.prefixes, cfg.rule_seed)


def designated_ports(snap: NetworkSnapshot, device: DeviceId, mode: str = "host") -> tuple[PortId, ...]:
    hosts = tuple(snap.host_ports(device))
    if mode == "all":
        return hosts + tuple(snap.link_ports(device))
    return hosts[:1] if hosts else tuple(snap.devices[device].ports[-1:])


# ------------------------------------------------------------------ traffic


@dataclass(frozen=True)
class Flow:
    src: DeviceId
    port: PortId
    dst: DeviceId
    base: PacketHeader
    path: tuple[DeviceId, ...]


def random_flows(snap: NetworkSnapshot, n: int, rng: np.random.Generator) -> list[Flow]:
    """Host-to-host flows with headers drawn from each pair's deliverable space."""
    devices = sorted(d for d in snap.devices if snap.host_ports(d))
    flows = []
    if len(devices) < 2:
        return flows
    attempts = 0
    while len(flows) < n and attempts < 20 * n:
        attempts += 1
        i, j = rng.choice(len(devices), size=2, replace=False)
        src, dst = devices[i], devices[j]
        port = snap.host_ports(src)[0]
        reach = expected_trajectories(snap, src, dst, port)
        if reach.header_space.is_empty():
            continue
        bits = reach.header_space.sample(rng)
        pkt = PacketHeader.random(rng, bits, snap.header_bits)
        tr = trace_header(snap, bits, src, port)
        paths = [p for p, end in tr.delivered if end == dst]
        flows.append(Flow(src, port, dst, pkt, paths[0] if paths else ()))
    return flows


def unit_packets(flows: Sequence[Flow], rng: np.random.Generator, span_ns: int = UNIT_NS):
    """One packet per flow with a fresh IP id, spread over ``span_ns``."""
    ids = rng.integers(0, 1 << 16, size=len(flows))
    starts = np.sort(rng.integers(0, span_ns, size=len(flows)))
    out = []
    for f, ip_id, t in zip(flows, ids, starts):
        out.append((int(t), replace(f.base, ip_id=int(ip_id)), f.src, f.port, f.path))
    return out


def calibrate(cfg: ExperimentConfig, net: Network, units: Optional[int] = None) -> CongestionEstimator:
    """Fit a congestion estimator from ``units`` windows of benign traffic.

    Window u always carries the same packets regardless of the total window
    count, so a longer calibration strictly extends a shorter one.
    """
    units = cfg.calibration_units if units is None else units
    if units <= 0:
        return CongestionEstimator()
    snap = net.snapshot
    sim = Simulator(snap, seed=cfg.seed, congestion=_congestion(cfg), label_width=cfg.label_width)
    flows = random_flows(snap, cfg.flows_per_unit, np.random.default_rng([cfg.seed, 11]))
    log_ = ObservationLog()
    expected: dict[int, tuple] = {}
    dup: set[int] = set()
    for u in range(units):
        pkts = unit_packets(flows, np.random.default_rng([cfg.seed, 12, u]))
        for _, pkt, _, _, path in pkts:
            lab = label_packet(pkt, cfg.label_width)
            if lab in expected or lab in dup:
                dup.add(lab)
                expected.pop(lab, None)
            elif path:
                expected[lab] = path
        log_.extend(sim.run_flows([(t, p, s, port) for t, p, s, port, _ in pkts], key=(12, u)))
    return estimate_congestion(log_, expected)


def _congestion(cfg: ExperimentConfig) -> Optional[CongestionModel]:
    if cfg.congestion_drop_rate <= 0 and cfg.congestion_queue_ns <= 0:
        return None
    return CongestionModel(cfg.congestion_drop_rate, cfg.congestion_queue_ns)


# ------------------------------------------------------------------ implants


def _pick(rng: np.random.Generator, mix: Mapping[str, float]) -> str:
    keys = sorted(k for k, v in mix.items() if v > 0)
    w = np.array([float(mix[k]) for k in keys])
    return keys[int(rng.choice(len(keys), p=w / w.sum()))]


def random_implant(snap: NetworkSnapshot, device: DeviceId, kind: AttackKind, scope: Scope,
                   rng: np.random.Generator, cfg: Optional[ExperimentConfig] = None) -> AttackImplant:
    """An implant of the given kind and scope with randomly chosen parameters."""
    cfg = cfg or ExperimentConfig()
    width = snap.header_bits
    nbrs = snap.neighbors(device)
    ports = list(snap.devices[device].ports)
    port = subset = None
    replay_to = sorted(nbrs)[int(rng.integers(0, len(nbrs)))] if kind is AttackKind.REPLAY else None
    if scope in (Scope.INGRESS_SUBSET, Scope.PORT, Scope.PORT_SUBSET):
        if scope is Scope.INGRESS_SUBSET and replay_to is not None:
            # a copy sent back out the arrival port is never made, so pick another port
            ports = [p for p in ports if p != nbrs[replay_to]]
        if kind in (AttackKind.DELAY, AttackKind.GENERATION) and scope is Scope.INGRESS_SUBSET:
            # a delay or rewrite on traffic that ends here happens after the last observation point
            ports = [p for p in ports if p in transit_ports(snap, device)] or ports
        port = int(rng.choice(ports))
    if scope in (Scope.INGRESS_SUBSET, Scope.PORT_SUBSET):
        # one fixed bit in the low byte selects roughly half of the headers
        bit = int(rng.integers(0, min(8, width)))
        subset = HeaderPattern((int(rng.integers(0, 2)) << bit), 1 << bit, width)
    if kind is AttackKind.REPLAY:
        action = Replay(replay_to)
    elif kind is AttackKind.DROP:
        gray = scope in (Scope.ALL, Scope.PORT) and rng.random() < 0.5
        action = Drop(0.5 if gray else 1.0)
    elif kind is AttackKind.MISROUTE:
        links = sorted(nbrs.values())
        action = Misroute(int(links[int(rng.integers(0, len(links)))]))
    elif kind is AttackKind.GENERATION:
        low = min(8, width)
        rw = Rewrite(int(rng.integers(0, 1 << low)), (1 << low) - 1, width)
        action = Generate(rw, fabricate=bool(rng.random() < 0.5))
    else:
        lo, hi = cfg.delay_min_ms, cfg.delay_max_ms
        action = Delay(int(rng.uniform(lo, hi) * 1_000_000))
    return AttackImplant(device, action, scope, port, subset)


def transit_ports(snap: NetworkSnapshot, device: DeviceId) -> frozenset[PortId]:
    """Ports on which host-injected traffic arrives at ``device`` and then moves on."""
    cache = snap._cache.setdefault("transit", {})
    if device in cache:
        return cache[device]
    out = set()
    for src in sorted(snap.devices):
        hosts = snap.host_ports(src)
        if not hosts:
            continue
        fan = reachability(snap, src, hosts[0])
        for walks in fan.paths.values():
            for walk in walks:
                for i, d in enumerate(walk[:-1]):
                    if d != device:
                        continue
                    if i == 0:
                        out.add(hosts[0])
                    else:
                        p = snap.port_towards(device, walk[i - 1])
                        if p is not None:
                            out.add(p)
    cache[device] = frozenset(out)
    return cache[device]


def random_implants(snap: NetworkSnapshot, n: int, rng: np.random.Generator,
                    cfg: Optional[ExperimentConfig] = None) -> list[AttackImplant]:
    """``n`` implants on distinct devices, kinds and scopes drawn from the config mixes."""
    cfg = cfg or ExperimentConfig()
    devices = sorted(snap.devices)
    if n > len(devices):
        raise ValueError(f"{n} implants but only {len(devices)} devices")
    chosen = [devices[i] for i in sorted(rng.choice(len(devices), size=n, replace=False))]
    out = []
    for d in chosen:
        kind = AttackKind(_pick(rng, cfg.attack_mix))
        scope = Scope(_pick(rng, cfg.scope_mix))
        out.append(random_implant(snap, d, kind, scope, rng, cfg))
    return out


# ------------------------------------------------------------------ metrics


KIND_OF = {
    AttackKind.REPLAY: VerdictKind.REPLAY,
    AttackKind.DROP: VerdictKind.DROP,
    AttackKind.MISROUTE: VerdictKind.MISROUTE,
    AttackKind.GENERATION: VerdictKind.GENERATION,
    AttackKind.DELAY: VerdictKind.DELAY,
}


@dataclass
class ImplantOutcome:
    trial: int
    device: DeviceId
    kind: str
    scope: str
    reachable: bool
    detected: bool
    sweep_detected: Optional[int]
    latency_ns: Optional[int]
    verdict_kinds: dict
    modal_kind: Optional[str]
    kind_match: bool
    exact_localization: bool
    implant: dict = field(default_factory=dict)


@dataclass
class MetricsReport:
    implants: list[ImplantOutcome] = field(default_factory=list)
    verdict_counts: dict = field(default_factory=dict)
    false_positives: int = 0
    false_positive_devices: list = field(default_factory=list)
    non_benign: int = 0
    correctly_localized: int = 0
    sweeps: int = 0
    trials: int = 0
    unreachable_pairs: int = 0
    invalid_trajectories: int = 0
    probes: int = 0
    alarms: int = 0
    actions: list = field(default_factory=list)
    recoveries: list = field(default_factory=list)
    silent_devices: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list, repr=False)

    @property
    def reachable(self) -> int:
        return sum(1 for o in self.implants if o.reachable)

    @property
    def detected(self) -> int:
        return sum(1 for o in self.implants if o.reachable and o.detected)

    @property
    def accuracy(self) -> Optional[float]:
        return self.detected / self.reachable if self.reachable else None

    @property
    def false_negative_rate(self) -> Optional[float]:
        return 1.0 - self.accuracy if self.reachable else None

    @property
    def localization_hit_rate(self) -> Optional[float]:
        return self.correctly_localized / self.non_benign if self.non_benign else None

    def to_dict(self, with_timings: bool = False) -> dict:
        out = {
            "implanted": len(self.implants),
            "reachable": self.reachable,
            "detected": self.detected,
            "accuracy": self.accuracy,
            "false_negative_rate": self.false_negative_rate,
            "false_positives": self.false_positives,
            "false_positive_devices": sorted(set(self.false_positive_devices)),
            "localization_hit_rate": self.localization_hit_rate,
            "non_benign_verdicts": self.non_benign,
            "verdict_counts": dict(sorted(self.verdict_counts.items())),
            "sweeps": self.sweeps,
            "trials": self.trials,
            "unreachable_pairs": self.unreachable_pairs,
            "invalid_trajectories": self.invalid_trajectories,
            "probes": self.probes,
            "alarms": self.alarms,
            "actions": self.actions,
            "recoveries": self.recoveries,
            "silent_devices": self.silent_devices,
            "implants": [asdict(o) for o in self.implants],
        }
        if with_timings:
            out["timings"] = self.timings
        return out

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        self.implants.extend(other.implants)
        for k, v in other.verdict_counts.items():
            self.verdict_counts[k] = self.verdict_counts.get(k, 0) + v
        for name in ("false_positives", "non_benign", "correctly_localized", "sweeps", "trials",
                     "unreachable_pairs", "invalid_trajectories", "probes", "alarms"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.false_positive_devices.extend(other.false_positive_devices)
        self.actions.extend(other.actions)
        self.recoveries.extend(other.recoveries)
        self.silent_devices.extend(other.silent_devices)
        for k, v in other.timings.items():
            self.timings[k] = self.timings.get(k, 0.0) + v
        self.verdicts.extend(other.verdicts)
        return self


# ------------------------------------------------------------------ response glue


def make_reroute(net: Network):
    """Replacement tables for a subject device that avoid the flagged devices."""
    owned = net.owned

    def reroute(state: NetworkState, subject: DeviceId, avoid: set) -> dict[DeviceId, list[FlowRule]]:
        if subject is None or subject not in state.devices:
            return {}
        g = nx.Graph()
        g.add_nodes_from(state.devices)
        for link in state.links:
            g.add_edge(link.a[0], link.b[0], ports={link.a[0]: link.a[1], link.b[0]: link.b[1]})
        g.remove_nodes_from([d for d in avoid if d != subject])
        dev = state.devices[subject]
        new_rules = []
        changed = False
        for rule in dev.flow_table:
            owner = next((d for d, ps in owned.items() if rule.match in ps), None)
            if owner is None or owner == subject or rule.action.port is None or owner not in g:
                new_rules.append(rule)
                continue
            try:
                path = min(nx.all_shortest_paths(g, subject, owner))
            except nx.NetworkXNoPath:
                new_rules.append(rule)
                continue
            port = g[subject][path[1]]["ports"][subject]
            if port != rule.action.port:
                changed = True
            new_rules.append(FlowRule(rule.match, Action.forward(port), rule.priority, rule.in_port, rule.rewrite))
        return {subject: new_rules} if changed else {}

    return reroute


# ------------------------------------------------------------------ sweeps


def _corpus(sim: Simulator, snap: NetworkSnapshot, flows: Sequence[Flow], rng, key) -> TrajectoryStore:
    pkts = unit_packets(flows, rng)
    obs = sim.run_flows([(t, p, s, port) for t, p, s, port, _ in pkts], key=key)
    store = TrajectoryStore()
    grouped: dict[int, list] = {}
    for o in obs:
        grouped.setdefault(o.label, []).append(o)
    for lab in sorted(grouped):
        try:
            tr = reconstruct_actual(grouped[lab], lab, snap)
        except InvalidTrajectory:
            continue
        if tr is not None:
            store_and_dedupe(store, tr)
    return store


def _scan_all(sim, snap, plan, estimator, scfg, sweep, ports_mode) -> tuple[list[Verdict], Scanner]:
    scanner = Scanner(snap, sim, estimator, scfg, sweep=sweep)
    verdicts = []
    for group in plan.groups:
        for dev in group:
            for port in designated_ports(snap, dev, ports_mode):
                verdicts.extend(scanner.scan(dev, port))
    return verdicts, scanner


def run_sweep(cfg: ExperimentConfig, implants: Sequence[AttackImplant], *, trial: int = 0,
              estimator: Optional[CongestionEstimator] = None,
              policies: Optional[Sequence[ResponsePolicy]] = None,
              alarm_log: Optional[AlarmLog] = None,
              remove_implants_after: Optional[int] = None) -> MetricsReport:
    """Run ``cfg.sweeps`` detection-and-response sweeps against one implant set.

    Each sweep: benign corpus traffic, scan plan from the corpus, probe scan
    of every device in plan order, then policy matching and enforcement once
    the whole sweep is in. ``remove_implants_after`` switches implants off
    after that sweep index so re-probes can observe recovery.
    """
    net = build_network(cfg)
    snap0 = net.snapshot
    estimator = estimator or CongestionEstimator()
    if policies is None:
        policies = load_policies(cfg.policies) if cfg.policies else []
    engine = ResponseEngine(policies)
    alarms = alarm_log if alarm_log is not None else AlarmLog()
    reroute = make_reroute(net)
    sim = Simulator(snap0, implants, seed=cfg.seed * 1000 + trial, congestion=_congestion(cfg),
                    label_width=cfg.label_width)
    scfg = ScanConfig(probes_per_pair=cfg.probes_per_pair, strict_drop=cfg.strict_drop,
                      label_width=cfg.label_width, seed=cfg.seed * 1000 + trial)
    flows = random_flows(snap0, cfg.corpus_flows, np.random.default_rng([cfg.seed, 21, trial]))
    report = MetricsReport(trials=1)
    first_detect: dict[int, tuple[int, int]] = {}
    per_implant: dict[int, Counter] = {i: Counter() for i in range(len(implants))}
    implanted = {imp.device for imp in implants}
    all_verdicts: list[Verdict] = []
    for s in range(cfg.sweeps):
        t0 = time.perf_counter()
        snap = sim.live_state.snapshot()
        store = _corpus(sim, snap, flows, np.random.default_rng([cfg.seed, 22, trial, s]), key=(22, trial, s))
        plan = build_scan_plan(store, snap, cfg.groups) if len(store) else uniform_plan(snap)
        report.silent_devices.extend(plan.silent)
        t1 = time.perf_counter()
        for attempt in range(3):
            try:
                verdicts, scanner = _scan_all(sim, snap, plan, estimator, scfg, s, cfg.ports)
                break
            except StaleSnapshot:
                log.info("state changed during sweep %d; rescanning", s)
                snap = sim.live_state.snapshot()
        else:
            raise StaleSnapshot("network kept changing during the sweep")
        t2 = time.perf_counter()
        report.unreachable_pairs += len(scanner.unreachable)
        report.invalid_trajectories += scanner.invalid
        report.probes += scanner.probes_sent
        now_ms = sim.now / 1e6
        for v in verdicts:
            report.verdict_counts[v.kind.value] = report.verdict_counts.get(v.kind.value, 0) + 1
            if v.benign:
                continue
            report.non_benign += 1
            if v.malicious_devices and v.malicious_devices <= implanted:
                report.correctly_localized += 1
            bad = sorted(set(v.malicious_devices) - implanted)
            if bad:
                report.false_positives += 1
                report.false_positive_devices.extend(bad)
            for i, imp in enumerate(implants):
                if imp.device in v.malicious_devices:
                    per_implant[i][v.kind.value] += 1
                    first_detect.setdefault(i, (s, sim.now))
        all_verdicts.extend(verdicts)
        requests = engine.match_and_execute(verdicts, now_ms)
        state = sim.live_state
        for r in requests:
            state = apply_to_network(r, state, now_ms, alarms=alarms, reroute=reroute)
            report.actions.append({"sweep": s, "kind": r.kind.value, "device": r.device, "policy": r.policy_id})
        report.alarms += sum(1 for r in requests if r.kind is ActionKind.ALARM)
        if remove_implants_after is not None and s >= remove_implants_after:
            sim.remove_implants()
        pending, state.reprobes = state.reprobes, []
        sim.live_state = state
        if pending:
            report.recoveries.extend(_reprobe(sim, estimator, scfg, s, pending))
        t3 = time.perf_counter()
        for k, dt in (("target_id", t1 - t0), ("scan", t2 - t1), ("response", t3 - t2)):
            report.timings[k] = report.timings.get(k, 0.0) + dt
    report.sweeps = cfg.sweeps
    report.verdicts = all_verdicts
    for i, imp in enumerate(implants):
        rec = sim.fired.get(i)
        kinds = per_implant[i]
        modal = None
        if kinds:
            order = [k.value for k in MALICIOUS_KINDS]
            modal = max(kinds, key=lambda k: (kinds[k], -order.index(k)))
        own = [v for v in all_verdicts if not v.benign and imp.device in v.malicious_devices]
        det = first_detect.get(i)
        latency = None
        if det is not None and rec is not None and rec.first_ns is not None:
            latency = int(det[1] - rec.first_ns)
        report.implants.append(ImplantOutcome(
            trial=trial,
            device=imp.device,
            kind=imp.kind.value,
            scope=imp.scope.value,
            reachable=bool(rec and rec.probes > 0),
            detected=det is not None,
            sweep_detected=None if det is None else det[0],
            latency_ns=latency,
            verdict_kinds=dict(sorted(kinds.items())),
            modal_kind=modal,
            kind_match=modal == KIND_OF[imp.kind].value,
            exact_localization=bool(own) and all(v.malicious_devices == {imp.device} for v in own),
            implant=imp.describe(),
        ))
    return report


def _reprobe(sim: Simulator, estimator, scfg: ScanConfig, sweep: int, pending) -> list[dict]:
    """Re-inject the packets behind earlier verdicts; benign results are recoveries."""
    snap = sim.live_state.snapshot()
    scanner = Scanner(snap, sim, estimator, scfg, sweep=sweep)
    out = []
    for req in pending:
        v = req.verdict
        if v is None or v.probe is None or v.target not in snap.devices:
            continue
        reach = expected_trajectories(snap, v.target, v.peer, v.port)
        E_all = tuple(sorted(reach.trajectories))
        results = []
        for k in range(req.count):
            again, _ = scanner._evaluate(v.probe, v.target, v.peer, v.port, E_all, (sweep, 99, k))
            results.append("inconclusive" if not again else again[0].kind.value)
        out.append({
            "sweep": sweep,
            "device": req.device,
            "target": v.target,
            "peer": v.peer,
            "results": results,
            "recovered": all(r == VerdictKind.BENIGN.value for r in results),
        })
    return out


def run_experiment(cfg: ExperimentConfig, policies: Optional[Sequence[ResponsePolicy]] = None,
                   alarm_log: Optional[AlarmLog] = None) -> MetricsReport:
    """``cfg.trials`` independent trials, each with ``cfg.implants`` fresh random implants."""
    net = build_network(cfg)
    t0 = time.perf_counter()
    estimator = calibrate(cfg, net)
    t_cal = time.perf_counter() - t0
    total = MetricsReport()
    for trial in range(cfg.trials):
        rng = np.random.default_rng([cfg.seed, 31, trial])
        implants = random_implants(net.snapshot, cfg.implants, rng, cfg) if cfg.implants else []
        total.merge(run_sweep(cfg, implants, trial=trial, estimator=estimator, policies=policies,
                              alarm_log=alarm_log))
    total.timings["calibration"] = t_cal
    return total
