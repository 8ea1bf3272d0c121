"""Exhaustive reference for expected trajectories on small networks.

Every header of the space is pushed through the flow tables at once with the
batched first-match kernel; the result is compared, path by path and header
by header, against the header-space computation.
"""

from __future__ import annotations

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .headerspace import expected_trajectories
from .netmodel import CONTROLLER, Action, ActionType, DeviceId, FlowRule, NetworkSnapshot, PortId, build_snapshot
from .patterns import HeaderPattern, Rewrite
from .sim.topologies import random_topology

log = logging.getLogger(__name__)

MAX_DEVICES = 8
MAX_BITS = 12


def exhaustive_paths(snap: NetworkSnapshot, src: DeviceId, port: PortId) -> dict[DeviceId, dict[tuple, set[int]]]:
    """dst -> path -> set of injected headers that reach dst along path."""
    width = snap.header_bits
    if width > 20:
        raise ValueError("exhaustive enumeration is limited to 20 header bits")
    out: dict[DeviceId, dict[tuple, set[int]]] = defaultdict(lambda: defaultdict(set))
    orig = np.arange(1 << width, dtype=np.uint64)
    stack = [(src, port, (src,), orig, orig.copy())]
    hop_limit = len(snap.devices)
    while stack:
        dev, in_port, path, orig_h, cur = stack.pop()
        device = snap.devices[dev]
        if not device.flow_table:
            continue
        vals, masks, rports = device.rule_arrays()
        idx = _kernels.first_match(cur, np.full(cur.shape[0], in_port, dtype=np.int64), vals, masks, rports)
        for r in np.unique(idx):
            if r < 0:
                continue
            sel = idx == r
            rule = device.flow_table[int(r)]
            o, c = orig_h[sel], cur[sel]
            if rule.rewrite is not None:
                rw = rule.rewrite
                c = (c & ~np.uint64(rw.mask)) | np.uint64(rw.value & rw.mask)
            a = rule.action
            if a.type is ActionType.DROP:
                continue
            if a.type is ActionType.CONTROLLER:
                out[CONTROLLER][path + (CONTROLLER,)].update(int(x) for x in o)
                continue
            ports = [a.port] if a.type is ActionType.FORWARD else [p for p in device.ports if p != in_port]
            for p in ports:
                peer = snap.peer(dev, p)
                if peer is None:
                    if dev != src or p != port:
                        out[dev][path].update(int(x) for x in o)
                    continue
                if peer[0] in path or len(path) >= hop_limit:
                    continue
                stack.append((peer[0], peer[1], path + (peer[0],), o, c))
    return out


@dataclass
class OracleReport:
    networks: int = 0
    pairs: int = 0
    mismatches: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.mismatches


def check_snapshot(snap: NetworkSnapshot, report: Optional[OracleReport] = None) -> OracleReport:
    report = report or OracleReport()
    report.networks += 1
    dsts = sorted(snap.devices) + [CONTROLLER]
    for src in sorted(snap.devices):
        for port in snap.devices[src].ports:
            truth = exhaustive_paths(snap, src, port)
            for dst in dsts:
                if dst == src:
                    continue
                report.pairs += 1
                reach = expected_trajectories(snap, src, dst, port)
                got = {p.devices: p.space.headers() for p in reach.paths}
                want = {k: v for k, v in truth.get(dst, {}).items() if v}
                if got != want:
                    report.mismatches.append({
                        "network": snap.name, "src": src, "port": port, "dst": dst,
                        "hsa_paths": sorted(got), "exhaustive_paths": sorted(want),
                    })
    return report


def random_network(rng: np.random.Generator, n_devices: Optional[int] = None, width: Optional[int] = None,
                   rules_per_device: int = 6, max_devices: int = MAX_DEVICES,
                   max_bits: int = MAX_BITS) -> NetworkSnapshot:
    """Small random network with overlapping wildcard rules of every action type."""
    n = int(n_devices or rng.integers(2, max_devices + 1))
    L = int(width or rng.integers(3, max_bits + 1))
    topo = random_topology(rng, n, extra_edges=int(rng.integers(0, 3)), header_bits=L)
    snap = build_snapshot(topo)
    rules: dict[DeviceId, list[FlowRule]] = {}

    def pattern() -> HeaderPattern:
        care = rng.random(L) < 0.4
        bits = rng.integers(0, 2, size=L)
        return HeaderPattern.parse("".join(str(b) if c else "x" for b, c in zip(bits, care)))

    for d in sorted(snap.devices):
        ports = list(snap.devices[d].ports)
        table = []
        for _ in range(int(rng.integers(1, rules_per_device + 1))):
            roll = rng.random()
            if roll < 0.65:
                action = Action.forward(int(rng.choice(ports)))
            elif roll < 0.75:
                action = Action.drop()
            elif roll < 0.85:
                action = Action.flood()
            else:
                action = Action.to_controller()
            rewrite = None
            if rng.random() < 0.2:
                k = int(rng.integers(1, min(3, L) + 1))
                pos = rng.choice(L, size=k, replace=False)
                mask = sum(1 << int(p) for p in pos)
                rewrite = Rewrite(int(rng.integers(0, 1 << L)) & mask, mask, L)
            in_port = int(rng.choice(ports)) if rng.random() < 0.2 else None
            table.append(FlowRule(pattern(), action, int(rng.integers(0, 4)), in_port, rewrite))
        rules[d] = table
    devices = {d: snap.devices[d].with_rules(rules[d]) for d in snap.devices}
    return NetworkSnapshot(devices, snap.links, snap.hosts, L, f"random{n}x{L}")


def run_oracle(networks: int = 40, seed: int = 0, max_devices: int = MAX_DEVICES,
               max_bits: int = MAX_BITS) -> OracleReport:
    """Compare header-space results with exhaustive simulation on random networks."""
    if max_devices < 2 or not 3 <= max_bits <= 20:
        raise ValueError("need max_devices >= 2 and 3 <= max_bits <= 20")
    rng = np.random.default_rng(seed)
    report = OracleReport()
    t0 = time.perf_counter()
    for _ in range(networks):
        check_snapshot(random_network(rng, max_devices=max_devices, max_bits=max_bits), report)
    report.seconds = time.perf_counter() - t0
    if report.mismatches:
        log.error("%d oracle mismatches", len(report.mismatches))
    return report
