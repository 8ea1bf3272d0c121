"""Inspection priority from trajectory density.

Devices are scored by the fraction of trajectories that visit them. The most
visited devices are inspected first, the least visited nonzero devices ride
along in the first group, and devices never seen in any trajectory form a
flagged final group.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from . import _kernels
from .netmodel import CONTROLLER, DeviceId, NetworkSnapshot
from .trajectory import Trajectory

DEFAULT_GROUPS = 3


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class ScanPlan:
    groups: tuple[tuple[DeviceId, ...], ...]
    scores: Mapping[DeviceId, float]
    silent: tuple[DeviceId, ...] = ()

    def order(self) -> list[DeviceId]:
        return [d for g in self.groups for d in g]

    def group_of(self, device: DeviceId) -> int:
        for i, g in enumerate(self.groups):
            if device in g:
                return i
        raise KeyError(device)

    def to_dict(self) -> dict:
        return {
            "groups": [list(g) for g in self.groups],
            "scores": {d: round(s, 12) for d, s in sorted(self.scores.items())},
            "silent": list(self.silent),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _walks(corpus: Iterable) -> list[tuple[DeviceId, ...]]:
    out = []
    for t in corpus:
        devs = t.devices if isinstance(t, Trajectory) else tuple(t)
        out.append(tuple(d for d in devs if d != CONTROLLER))
    return out


def representativeness(corpus: Iterable, devices: Optional[Iterable[DeviceId]] = None) -> dict[DeviceId, float]:
    """score(d) = distinct trajectories visiting d / total trajectories.

    ``corpus`` holds Trajectory objects or plain device sequences. When
    ``devices`` is given, those ids are scored too (zero if unseen).
    """
    walks = _walks(corpus)
    if not walks:
        raise EmptyCorpus("trajectory corpus is empty")
    names = sorted(set(devices or ()) | {d for w in walks for d in w})
    index = {d: i for i, d in enumerate(names)}
    flat = np.fromiter((index[d] for w in walks for d in w), dtype=np.int64)
    offsets = np.zeros(len(walks) + 1, dtype=np.int64)
    np.cumsum([len(w) for w in walks], out=offsets[1:])
    counts = _kernels.visit_counts(flat, offsets, len(names))
    total = float(len(walks))
    return {d: counts[i] / total for d, i in index.items()}


def build_scan_plan(corpus: Iterable, snap: NetworkSnapshot, k: int = DEFAULT_GROUPS) -> ScanPlan:
    """Bucket snapshot devices into ordered inspection groups.

    Nonzero scores are split into ``k - 1`` quantile buckets, highest first.
    The lowest-scoring nonzero devices are promoted into group 0 so both
    extremes are inspected early. Zero-score devices form the last group and
    are reported as silent. Empty groups are omitted.
    """
    if k < 2:
        raise ValueError("need at least two groups")
    scores = representativeness(corpus, snap.devices)
    scores = {d: scores.get(d, 0.0) for d in snap.devices}
    live = sorted((d for d in scores if scores[d] > 0), key=lambda d: (-scores[d], d))
    silent = tuple(sorted(d for d in scores if scores[d] == 0))
    buckets: list[list[DeviceId]] = [[] for _ in range(k - 1)]
    if live:
        vals = np.array([scores[d] for d in live])
        hi, lo = vals.max(), vals.min()
        if hi == lo:
            buckets[0] = list(live)
        else:
            # bucket by quantile edges of the distinct score values, top bucket first
            edges = np.quantile(np.unique(vals), np.linspace(0, 1, k)[1:-1])
            for d in live:
                b = int(np.searchsorted(edges, scores[d], side="right"))
                buckets[(k - 2) - b].append(d)
            for d in live:
                if scores[d] == lo:
                    for bucket in buckets:
                        if d in bucket:
                            bucket.remove(d)
                    buckets[0].append(d)
    groups = [tuple(sorted(b, key=lambda d: (-scores[d], d))) for b in buckets if b]
    if silent:
        groups.append(silent)
    return ScanPlan(tuple(groups), scores, silent)


def uniform_plan(snap: NetworkSnapshot) -> ScanPlan:
    """Fallback when no corpus is available: one group, every device."""
    return ScanPlan((tuple(sorted(snap.devices)),), {d: 0.0 for d in snap.devices}, ())
