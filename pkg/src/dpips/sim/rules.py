"""Shortest-path forwarding tables toward randomly assigned destination prefixes."""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence, Union

import networkx as nx
import numpy as np

from ..netmodel import DeviceId, NetworkSnapshot, TopologyError, snapshot_to_docs
from ..patterns import HeaderPattern
from .topologies import components_of

LOCAL_PRIORITY = 100
ROUTE_PRIORITY = 50
CONTROL_PRIORITY = 200
# Headers whose top bits are all ones are control traffic and go to the controller.
CONTROL_PREFIX_BITS = 4


class DisconnectedTopology(TopologyError):
    pass


def control_pattern(width: int, bits: int = CONTROL_PREFIX_BITS) -> HeaderPattern:
    bits = min(bits, width)
    return HeaderPattern.parse("1" * bits + "x" * (width - bits))


def make_prefixes(count: int, width: int, rng: np.random.Generator, length: Optional[int] = None,
                  avoid: Optional[HeaderPattern] = None) -> list[HeaderPattern]:
    """``count`` distinct equal-length destination prefixes, none inside ``avoid``."""
    if length is None:
        length = min(width, max(16 if width >= 24 else 0, math.ceil(math.log2(max(count, 2))) + 2))
    length = min(length, width)
    capacity = 1 << length
    if avoid is not None:
        capacity -= 1 << max(0, length - bin(avoid.mask).count("1"))
    if count > capacity:
        raise ValueError(f"cannot draw {count} distinct /{length} prefixes")
    seen: set[int] = set()
    out = []
    while len(out) < count:
        v = int(rng.integers(0, 1 << length))
        if v in seen:
            continue
        p = HeaderPattern(v << (width - length), ((1 << length) - 1) << (width - length), width)
        if avoid is not None and p.overlaps(avoid):
            continue
        seen.add(v)
        out.append(p)
    return out


def assign_prefixes(devices: Sequence[DeviceId], prefixes: Sequence[HeaderPattern],
                    rng: np.random.Generator) -> dict[DeviceId, list[HeaderPattern]]:
    """Deal prefixes round-robin over a shuffled device order."""
    order = [devices[i] for i in rng.permutation(len(devices))]
    owned: dict[DeviceId, list[HeaderPattern]] = {d: [] for d in devices}
    for i, p in enumerate(prefixes):
        owned[order[i % len(order)]].append(p)
    return owned


def _graph(doc: dict) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(d["id"] for d in doc["devices"])
    for l in doc["links"]:
        g.add_edge(l["a"][0], l["b"][0], weight=l.get("weight", 1), ports={l["a"][0]: l["a"][1], l["b"][0]: l["b"][1]})
    return g


def next_hops(g: nx.Graph, dst: DeviceId) -> dict[DeviceId, DeviceId]:
    """Next hop toward ``dst`` for every other device, ties broken by smallest neighbor id."""
    dist = nx.single_source_dijkstra_path_length(g, dst, weight="weight")
    out = {}
    for u in g:
        if u == dst or u not in dist:
            continue
        best = min(g[u], key=lambda v: (dist.get(v, math.inf) + g[u][v]["weight"], v))
        out[u] = best
    return out


def generate_rules(topology: Union[dict, NetworkSnapshot],
                   prefixes: Union[int, Sequence[HeaderPattern], Mapping[DeviceId, Sequence]],
                   seed: int = 0,
                   controller_pattern: Optional[HeaderPattern] = "default") -> dict:
    """Rules document realizing shortest paths toward each prefix owner.

    ``prefixes`` is a count (drawn at random), a list (dealt to devices at
    random), or an explicit owner mapping. Every device delivers its own
    prefixes to its host port and sends control-pattern headers to the
    controller unless ``controller_pattern`` is None.
    """
    doc = snapshot_to_docs(topology)[0] if isinstance(topology, NetworkSnapshot) else topology
    width = int(doc.get("header_bits", 32))
    devices = [d["id"] for d in doc["devices"]]
    comps = components_of(doc)
    if len(comps) > 1:
        raise DisconnectedTopology("topology is disconnected: " + " | ".join(",".join(c) for c in comps))
    if controller_pattern == "default":
        controller_pattern = control_pattern(width)
    rng = np.random.default_rng(seed)
    if isinstance(prefixes, Mapping):
        owned = {d: [HeaderPattern.parse(p) if isinstance(p, str) else p for p in prefixes.get(d, ())]
                 for d in devices}
    else:
        if isinstance(prefixes, int):
            prefixes = make_prefixes(prefixes, width, rng, avoid=controller_pattern)
        owned = assign_prefixes(devices, list(prefixes), rng)
    host_port = {h["device"]: h["port"] for h in doc.get("hosts", [])}
    g = _graph(doc)
    rules: dict[DeviceId, list[dict]] = {d: [] for d in devices}
    if controller_pattern is not None:
        for d in devices:
            rules[d].append({"priority": CONTROL_PRIORITY, "match": str(controller_pattern), "action": "controller"})
    for dst in devices:
        if not owned[dst]:
            continue
        hops = next_hops(g, dst)
        for p in owned[dst]:
            if dst in host_port:
                rules[dst].append({"priority": LOCAL_PRIORITY, "match": str(p), "action": "forward",
                                   "port": host_port[dst]})
            for u, v in sorted(hops.items()):
                port = g[u][v]["ports"][u]
                rules[u].append({"priority": ROUTE_PRIORITY, "match": str(p), "action": "forward", "port": port})
    return {
        "header_bits": width,
        "rules": rules,
        "prefixes": {d: [str(p) for p in ps] for d, ps in owned.items()},
    }
