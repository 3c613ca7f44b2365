"""Road network model, JSON ingestion, synthetic generators and shortest paths.

Lengths are held as integer millimetres so that path sums and tie-breaks are
exact.  The public unit is metres.
"""

from __future__ import annotations

import functools
import heapq
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from . import rng

INF_MM = 1 << 62  # unreachable marker inside integer distance tables

NETWORK_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["nodes", "edges"],
    "properties": {
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "signalized"],
                "properties": {
                    "id": {"type": "integer"},
                    "signalized": {"type": "boolean"},
                    "x": {"type": "number"},
                    "y": {"type": "number"},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "from", "to", "length_m", "lanes"],
                "properties": {
                    "id": {"type": "integer"},
                    "from": {"type": "integer"},
                    "to": {"type": "integer"},
                    "length_m": {"type": "number"},
                    "lanes": {"type": "integer"},
                },
            },
        },
    },
}


class NetworkError(ValueError):
    """Raised for malformed or inconsistent network documents."""

    def __init__(self, message: str, entity: str | None = None):
        super().__init__(message)
        self.entity = entity


@dataclass(frozen=True)
class Node:
    id: int
    signalized: bool = False
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class Edge:
    id: int
    src: int
    dst: int
    length_mm: int
    lanes: int = 1

    @property
    def length_m(self) -> float:
        return self.length_mm / 1000.0


def _to_mm(length_m: float) -> int:
    return int(round(length_m * 1000))


@dataclass(frozen=True)
class RoadNetwork:
    """Directed road graph.  Two-way roads are two directed edges."""

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self) -> None:
        n = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise NetworkError(f"node ids must be dense 0..{n - 1}; found {node.id} at {i}",
                                   entity=f"node {node.id}")
        seen: set[tuple[int, int]] = set()
        for i, e in enumerate(self.edges):
            if e.id != i:
                raise NetworkError(f"edge ids must be dense 0..{len(self.edges) - 1}; found {e.id} at {i}",
                                   entity=f"edge {e.id}")
            for end in (e.src, e.dst):
                if not 0 <= end < n:
                    raise NetworkError(f"edge {e.id} references missing node {end}", entity=f"edge {e.id}")
            if e.src == e.dst:
                raise NetworkError(f"edge {e.id} is a self-loop on node {e.src}", entity=f"edge {e.id}")
            if e.length_mm <= 0:
                raise NetworkError(f"edge {e.id} has non-positive length", entity=f"edge {e.id}")
            if e.lanes < 1:
                raise NetworkError(f"edge {e.id} has lanes < 1", entity=f"edge {e.id}")
            if (e.src, e.dst) in seen:
                raise NetworkError(f"edge {e.id} duplicates road {e.src}->{e.dst}", entity=f"edge {e.id}")
            seen.add((e.src, e.dst))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.edges)

    @functools.cached_property
    def out_edges(self) -> tuple[tuple[Edge, ...], ...]:
        """Out-edges per node, sorted by head node id."""
        out: list[list[Edge]] = [[] for _ in self.nodes]
        for e in self.edges:
            out[e.src].append(e)
        return tuple(tuple(sorted(lst, key=lambda e: e.dst)) for lst in out)

    @functools.cached_property
    def in_edges(self) -> tuple[tuple[Edge, ...], ...]:
        """In-edges per node, sorted by edge id."""
        inc: list[list[Edge]] = [[] for _ in self.nodes]
        for e in self.edges:
            inc[e.dst].append(e)
        return tuple(tuple(lst) for lst in inc)

    def edge_between(self, u: int, v: int) -> Edge | None:
        for e in self.out_edges[u]:
            if e.dst == v:
                return e
        return None

    @property
    def signalized_nodes(self) -> list[int]:
        return [nd.id for nd in self.nodes if nd.signalized]

    def to_document(self) -> dict[str, Any]:
        nodes = []
        for nd in self.nodes:
            item: dict[str, Any] = {"id": nd.id, "signalized": nd.signalized}
            if nd.x is not None:
                item["x"] = nd.x
            if nd.y is not None:
                item["y"] = nd.y
            nodes.append(item)
        edges = []
        for e in self.edges:
            length: float | int = e.length_mm // 1000 if e.length_mm % 1000 == 0 else e.length_mm / 1000
            edges.append({"id": e.id, "from": e.src, "to": e.dst, "length_m": length, "lanes": e.lanes})
        return {"nodes": nodes, "edges": edges}

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_document(), indent=indent)


def load_network(document: str | bytes | dict[str, Any]) -> RoadNetwork:
    """Parse and validate a network document (JSON text or decoded object)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"malformed network JSON: {exc}") from exc
    try:
        jsonschema.validate(document, NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise NetworkError(f"network schema violation at {where}: {exc.message}", entity=where) from exc

    node_docs = sorted(document["nodes"], key=lambda d: d["id"])
    edge_docs = sorted(document["edges"], key=lambda d: d["id"])
    for kind, docs in (("node", node_docs), ("edge", edge_docs)):
        for a, b in zip(docs, docs[1:]):
            if a["id"] == b["id"]:
                raise NetworkError(f"duplicate {kind} id {a['id']}", entity=f"{kind} {a['id']}")
    nodes = tuple(Node(d["id"], d["signalized"], d.get("x"), d.get("y")) for d in node_docs)
    known = {nd.id for nd in nodes}
    for d in edge_docs:
        for end in (d["from"], d["to"]):
            if end not in known:
                raise NetworkError(f"edge {d['id']} references missing node {end}", entity=f"edge {d['id']}")
        if not d["length_m"] > 0:
            raise NetworkError(f"edge {d['id']} has non-positive length {d['length_m']}", entity=f"edge {d['id']}")
    edges = tuple(Edge(d["id"], d["from"], d["to"], _to_mm(d["length_m"]), d["lanes"]) for d in edge_docs)
    return RoadNetwork(nodes, edges)


def load_network_file(path: str | Path) -> RoadNetwork:
    return load_network(Path(path).read_text())


def bundled_network(name: str = "delhi52") -> RoadNetwork:
    text = resources.files("macosim").joinpath("assets", f"{name}.json").read_text()
    return load_network(text)


# -- generators ---------------------------------------------------------------

def generate_grid(rows: int, cols: int, edge_length: float, lanes: int = 1,
                  signalized_interior: bool = False, seed: int = 0) -> RoadNetwork:
    """Rectangular grid with two directed edges between 4-neighbours.

    ``seed`` is accepted for interface symmetry; the grid itself has no
    random component.
    """
    if rows < 2 or cols < 2:
        raise ValueError(f"grid needs rows >= 2 and cols >= 2, got {rows}x{cols}")
    if edge_length <= 0 or lanes < 1:
        raise ValueError("edge_length must be > 0 and lanes >= 1")
    nodes = []
    for r in range(rows):
        for c in range(cols):
            interior = 0 < r < rows - 1 and 0 < c < cols - 1
            nodes.append(Node(r * cols + c, signalized_interior and interior,
                              float(c * edge_length), float(r * edge_length)))
    length_mm = _to_mm(edge_length)
    edges: list[Edge] = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < rows and cc < cols:
                    v = rr * cols + cc
                    edges.append(Edge(len(edges), u, v, length_mm, lanes))
                    edges.append(Edge(len(edges), v, u, length_mm, lanes))
    return RoadNetwork(tuple(nodes), tuple(edges))


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return (v > 0) - (v < 0)

    if len({p1, p2, p3, p4}) < 4:  # shared endpoint is a junction, not a crossing
        return False
    return (orient(p1, p2, p3) != orient(p1, p2, p4)
            and orient(p3, p4, p1) != orient(p3, p4, p2))


def generate_city(n_nodes: int = 52, n_roads: int = 64, width_m: float = 6000.0,
                  height_m: float = 4000.0, lanes: int = 3, circuity: float = 1.15,
                  seed: int = 2017) -> RoadNetwork:
    """Sparse planar street network: a Euclidean spanning tree plus the
    shortest non-crossing extra roads, every road two-way.

    Nodes where three or more roads meet are signalized.  With the defaults
    this yields 52 nodes and 128 directed edges.
    """
    if n_roads < n_nodes - 1:
        raise ValueError("need at least n_nodes - 1 roads for a connected network")
    u = rng.uniform_stream(seed, rng.NETWORK_LAYOUT, 2 * n_nodes)
    pts = [(round(float(u[2 * i]) * width_m), round(float(u[2 * i + 1]) * height_m)) for i in range(n_nodes)]

    def d(a: int, b: int) -> float:
        return math.dist(pts[a], pts[b])

    # Prim
    in_tree = [False] * n_nodes
    best = [math.inf] * n_nodes
    parent = [-1] * n_nodes
    best[0] = 0.0
    roads: list[tuple[int, int]] = []
    for _ in range(n_nodes):
        v = min((i for i in range(n_nodes) if not in_tree[i]), key=lambda i: (best[i], i))
        in_tree[v] = True
        if parent[v] >= 0:
            roads.append((min(v, parent[v]), max(v, parent[v])))
        for w in range(n_nodes):
            if not in_tree[w] and d(v, w) < best[w]:
                best[w], parent[w] = d(v, w), v
    existing = set(roads)
    candidates = sorted(((d(a, b), a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes)
                         if (a, b) not in existing))
    for _, a, b in candidates:
        if len(roads) >= n_roads:
            break
        if any(_segments_cross(pts[a], pts[b], pts[c], pts[e]) for c, e in roads):
            continue
        roads.append((a, b))
    if len(roads) < n_roads:
        raise ValueError(f"could only place {len(roads)} non-crossing roads")
    roads.sort()
    degree = [0] * n_nodes
    for a, b in roads:
        degree[a] += 1
        degree[b] += 1
    nodes = tuple(Node(i, degree[i] >= 3, float(pts[i][0]), float(pts[i][1])) for i in range(n_nodes))
    edges: list[Edge] = []
    for a, b in roads:
        length_mm = 1000 * max(1, round(d(a, b) * circuity))
        edges.append(Edge(len(edges), a, b, length_mm, lanes))
        edges.append(Edge(len(edges), b, a, length_mm, lanes))
    return RoadNetwork(nodes, tuple(edges))


# -- shortest paths -----------------------------------------------------------

@dataclass(frozen=True)
class PathResult:
    path: tuple[int, ...]
    distance_mm: int

    @property
    def distance(self) -> float:
        return self.distance_mm / 1000.0


def _single_source(net: RoadNetwork, src: int) -> tuple[list[int], list[tuple[int, ...] | None]]:
    """Dijkstra keyed on (distance, node sequence): the lexicographically
    smallest among shortest paths wins every tie."""
    dist = [INF_MM] * net.n
    best: list[tuple[int, ...] | None] = [None] * net.n
    dist[src] = 0
    best[src] = (src,)
    heap: list[tuple[int, tuple[int, ...]]] = [(0, (src,))]
    done = [False] * net.n
    while heap:
        du, pu = heapq.heappop(heap)
        u = pu[-1]
        if done[u] or (du, pu) != (dist[u], best[u]):
            continue
        done[u] = True
        for e in net.out_edges[u]:
            v = e.dst
            if done[v]:
                continue
            cand = (du + e.length_mm, pu + (v,))
            if cand < (dist[v], best[v] or ()):
                dist[v], best[v] = cand
                heapq.heappush(heap, cand)
    return dist, best


def shortest_path(net: RoadNetwork, src: int, dst: int) -> PathResult | None:
    """Shortest path from ``src`` to ``dst``; ``None`` when unreachable."""
    for node in (src, dst):
        if not 0 <= node < net.n:
            raise IndexError(f"node {node} not in network")
    dist, best = _single_source(net, src)
    if best[dst] is None:
        return None
    return PathResult(best[dst], dist[dst])


@dataclass(frozen=True)
class DistanceTable:
    """All-pairs shortest distances (integer mm) with next-hop matrix.

    ``dist_mm[u][v]`` is ``INF_MM`` and ``next_hop[u][v]`` is ``-1`` for
    unreachable pairs.
    """

    dist_mm: tuple[tuple[int, ...], ...]
    next_hop: tuple[tuple[int, ...], ...]

    def dist(self, u: int, v: int) -> float:
        d = self.dist_mm[u][v]
        return math.inf if d >= INF_MM else d / 1000.0

    def reachable(self, u: int, v: int) -> bool:
        return self.dist_mm[u][v] < INF_MM

    def path(self, u: int, v: int) -> list[int] | None:
        if not self.reachable(u, v):
            return None
        out = [u]
        while out[-1] != v:
            out.append(self.next_hop[out[-1]][v])
        return out


def all_pairs_distances(net: RoadNetwork) -> DistanceTable:
    dist_rows = []
    hop_rows = []
    for s in range(net.n):
        dist, best = _single_source(net, s)
        dist_rows.append(tuple(dist))
        hop_rows.append(tuple(-1 if p is None else (p[1] if len(p) > 1 else s) for p in best))
    return DistanceTable(tuple(dist_rows), tuple(hop_rows))


@functools.lru_cache(maxsize=16)
def cached_distances(net: RoadNetwork) -> DistanceTable:
    return all_pairs_distances(net)


@dataclass(frozen=True)
class Neighbor:
    neighbor: int
    edge: int


def adjacent_neighbors(net: RoadNetwork, node: int) -> list[Neighbor]:
    return [Neighbor(e.dst, e.id) for e in net.out_edges[node]]
