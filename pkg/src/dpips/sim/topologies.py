"""Bundled topologies and small hand-built fixture networks."""

from __future__ import annotations

import json
from importlib import resources
from typing import Iterable, Optional, Sequence

import networkx as nx
import numpy as np

from ..netmodel import Action, FlowRule, NetworkSnapshot, build_snapshot
from ..patterns import HeaderPattern

BUNDLED = ("aarnet", "zib54")


def load_edges(name: str) -> tuple[list[str], list[tuple[str, str]]]:
    """Node ids and undirected edges of a bundled topology."""
    name = name.lower()
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled topology {name!r}; choose from {', '.join(BUNDLED)}")
    raw = resources.files("dpips.sim").joinpath("data", f"{name}.json").read_text()
    doc = json.loads(raw)
    return list(doc["nodes"]), [tuple(e) for e in doc["edges"]]


def topology_doc(nodes: Sequence[str], edges: Iterable[tuple[str, str]], name: str = "",
                 header_bits: int = 32, weights: Optional[dict] = None) -> dict:
    """Topology document with one host per device.

    Link ports are numbered 1..degree in neighbor-id order; the host sits on
    the next port.
    """
    edges = sorted({tuple(sorted(e)) for e in edges})
    nbrs: dict[str, list[str]] = {n: [] for n in nodes}
    for u, v in edges:
        if u not in nbrs or v not in nbrs:
            raise KeyError(f"edge {u}-{v} references an unknown node")
        nbrs[u].append(v)
        nbrs[v].append(u)
    port = {n: {m: i + 1 for i, m in enumerate(sorted(nbrs[n]))} for n in nodes}
    doc = {
        "name": name,
        "header_bits": header_bits,
        "devices": [{"id": n, "ports": len(nbrs[n]) + 1} for n in nodes],
        "links": [],
        "hosts": [{"id": f"h_{n}", "device": n, "port": len(nbrs[n]) + 1} for n in nodes],
    }
    for u, v in edges:
        link = {"a": [u, port[u][v]], "b": [v, port[v][u]]}
        if weights and (u, v) in weights:
            link["weight"] = weights[(u, v)]
        doc["links"].append(link)
    return doc


def bundled_topology(name: str, header_bits: int = 32) -> dict:
    nodes, edges = load_edges(name)
    return topology_doc(nodes, edges, name=name, header_bits=header_bits)


def line(n: int, header_bits: int = 32) -> dict:
    nodes = [chr(ord("a") + i) for i in range(n)]
    return topology_doc(nodes, list(zip(nodes, nodes[1:])), name=f"line{n}", header_bits=header_bits)


def star(leaves: int, header_bits: int = 32) -> dict:
    nodes = ["hub"] + [f"leaf{i}" for i in range(leaves)]
    return topology_doc(nodes, [("hub", f"leaf{i}") for i in range(leaves)], name=f"star{leaves}",
                        header_bits=header_bits)


def random_topology(rng: np.random.Generator, n: int, extra_edges: int = 2, header_bits: int = 32) -> dict:
    """Connected random graph: a random spanning tree plus a few extra edges."""
    nodes = [f"s{i}" for i in range(n)]
    order = list(rng.permutation(n))
    edges = set()
    for i in range(1, n):
        j = int(rng.integers(0, i))
        edges.add(tuple(sorted((nodes[order[i]], nodes[order[j]]))))
    tries = 0
    while extra_edges > 0 and tries < 50 and n > 2:
        tries += 1
        u, v = rng.choice(n, size=2, replace=False)
        e = tuple(sorted((nodes[u], nodes[v])))
        if e not in edges:
            edges.add(e)
            extra_edges -= 1
    return topology_doc(nodes, sorted(edges), name=f"random{n}", header_bits=header_bits)


def components_of(doc: dict) -> list[list[str]]:
    g = nx.Graph()
    g.add_nodes_from(d["id"] for d in doc["devices"])
    g.add_edges_from((l["a"][0], l["b"][0]) for l in doc["links"])
    return sorted(sorted(c) for c in nx.connected_components(g))


# ------------------------------------------------------------------ fixtures

FIG1_BITS = 8
# Destination prefixes owned by each device of the branching fixture.
FIG1_PREFIXES = {
    "a": "0000xxxx",
    "b": "1101xxxx",
    "c": "1110xxxx",
    "d": "1011xxxx",
    "e": "1010xxxx",
    "f": "0001xxxx",
    "g": "0010xxxx",
    "i": "1100xxxx",
    "c1": "1001xxxx",
}
FIG1_EDGES = [("a", "b"), ("b", "c"), ("c", "d"), ("c", "i"), ("d", "e"), ("i", "e"), ("e", "c1"),
              ("b", "f"), ("f", "e"), ("f", "g"), ("g", "c")]


def figure1() -> NetworkSnapshot:
    """Nine-device network where a→c1 traffic branches at c over d or i.

    Links b–f and f–e carry weight 3, so shortest paths prefer the b→c→…→e
    corridor and f is off every a→e path. c1 only accepts 1001xx10; at c,
    10010xxx goes via d and 10011xxx via i.
    """
    from .rules import generate_rules

    nodes = sorted(FIG1_PREFIXES)
    weights = {("b", "f"): 3, ("e", "f"): 3}
    topo = topology_doc(nodes, FIG1_EDGES, name="figure1", header_bits=FIG1_BITS, weights=weights)
    prefixes = {d: [p] for d, p in FIG1_PREFIXES.items()}
    rules = generate_rules(topo, prefixes, seed=0, controller_pattern=None)
    snap = build_snapshot(topo)
    ports = {d: snap.neighbors(d) for d in nodes}
    host = {d: snap.host_ports(d)[0] for d in nodes}
    c = rules["rules"]["c"]
    c.insert(0, {"priority": 120, "match": "10011xxx", "action": "forward", "port": ports["c"]["i"]})
    c.insert(0, {"priority": 120, "match": "10010xxx", "action": "forward", "port": ports["c"]["d"]})
    rules["rules"]["c1"] = [{"priority": 100, "match": "1001xx10", "action": "forward", "port": host["c1"]}]
    return build_snapshot(topo, rules)


FIG2_EDGES = [("a", "b"), ("c", "b"), ("h", "b"), ("b", "g"), ("g", "f"), ("d", "g"), ("i", "g"),
              ("e", "f"), ("j", "f"), ("k", "f")]
FIG2_TRANSIT = ("b", "f", "g")


def figure2() -> dict:
    """Edge devices hanging off a three-device transit chain b–g–f."""
    nodes = sorted({n for e in FIG2_EDGES for n in e})
    return topology_doc(nodes, FIG2_EDGES, name="figure2")


def shortest_path_corpus(doc: dict) -> list[tuple[str, ...]]:
    """One trajectory per ordered pair of devices along the id-tie-broken shortest path."""
    g = nx.Graph()
    g.add_nodes_from(d["id"] for d in doc["devices"])
    g.add_edges_from((l["a"][0], l["b"][0]) for l in doc["links"])
    out = []
    for s in sorted(g):
        for t in sorted(g):
            if s != t:
                out.append(tuple(min(nx.all_shortest_paths(g, s, t))))
    return out


def fixture_pattern(device: str) -> HeaderPattern:
    return HeaderPattern.parse(FIG1_PREFIXES[device])
