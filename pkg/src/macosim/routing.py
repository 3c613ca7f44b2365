"""Next-hop policies: shortest-path following, classic ACO and min-pheromone MACO."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from . import rng
from .netgraph import INF_MM, DistanceTable, Edge, RoadNetwork
from .pheromone import SCALE, PheromoneField

ALGORITHMS = ("dijkstra", "aco", "maco", "maco-p")


class Unroutable(RuntimeError):
    def __init__(self, current: int, dest: int):
        super().__init__(f"no route from node {current} to node {dest}")
        self.current = current
        self.dest = dest


@dataclass(frozen=True)
class RoutingParams:
    deviation_threshold: int = 1000
    deviation_mode: str = "global"  # or "edge-occupancy"
    progress_filter: bool = True
    aco_alpha: float = 1.0
    aco_beta: float = 1.0

    def __post_init__(self) -> None:
        if self.deviation_threshold < 0:
            raise ValueError("deviation_threshold must be >= 0")
        if self.deviation_mode not in ("global", "edge-occupancy"):
            raise ValueError(f"unknown deviation_mode {self.deviation_mode!r}")
        if self.aco_alpha < 0 or self.aco_beta < 0:
            raise ValueError("aco exponents must be >= 0")


@dataclass(frozen=True)
class RouteDecision:
    next: int
    via: int
    deviated: bool = False


def candidates(current: int, dest: int, net: RoadNetwork, dist: DistanceTable,
               progress_filter: bool = True) -> list[Edge]:
    """Out-edges whose head can still reach ``dest``, optionally only those that get closer.

    If the progress filter would leave nothing, all reachable heads are kept.
    """
    row = dist.dist_mm
    reachable = [e for e in net.out_edges[current] if row[e.dst][dest] < INF_MM]
    if progress_filter and reachable:
        here = row[current][dest]
        closer = [e for e in reachable if row[e.dst][dest] < here]
        if closer:
            return closer
    return reachable


def rank_by_pheromone(cands: Sequence[Edge], levels) -> list[Edge]:
    return sorted(cands, key=lambda e: (levels[e.id], e.dst))


def next_node_maco(current: int, dest: int, net: RoadNetwork, field: PheromoneField,
                   dist: DistanceTable, params: RoutingParams, n_t: int,
                   occupancy: Sequence[int] | None = None) -> RouteDecision:
    """Take the least-marked road toward ``dest``; under congestion take the runner-up.

    Congestion means ``n_t > deviation_threshold`` in global mode, or more
    than ``deviation_threshold`` vehicles on the preferred road in
    edge-occupancy mode (``occupancy`` indexed by edge id).
    """
    return decide_maco(current, dest, net, field.levels, dist, params, n_t, occupancy)


def decide_maco(current: int, dest: int, net: RoadNetwork, levels: Sequence[int],
                dist: DistanceTable, params: RoutingParams, n_t: int,
                occupancy: Sequence[int] | None = None) -> RouteDecision:
    cands = candidates(current, dest, net, dist, params.progress_filter)
    if not cands:
        raise Unroutable(current, dest)
    ranked = rank_by_pheromone(cands, levels)
    primary = ranked[0]
    if len(ranked) >= 2:
        if params.deviation_mode == "global":
            congested = n_t > params.deviation_threshold
        else:
            if occupancy is None:
                raise ValueError("edge-occupancy deviation needs the occupancy vector")
            congested = occupancy[primary.id] > params.deviation_threshold
        if congested:
            alt = ranked[1]
            return RouteDecision(alt.dst, alt.id, True)
    return RouteDecision(primary.dst, primary.id, False)


def aco_weights(cands: Sequence[Edge], levels: Sequence[int], params: RoutingParams) -> list[float]:
    return [(levels[e.id] / SCALE) ** params.aco_alpha * (1.0 / e.length_m) ** params.aco_beta
            for e in cands]


def next_node_aco(current: int, dest: int, net: RoadNetwork, field: PheromoneField,
                  dist: DistanceTable, params: RoutingParams, rng_key: tuple[int, int, int]) -> RouteDecision:
    """Roulette choice weighted by ``tau^alpha * (1/length)^beta``.

    ``rng_key`` is (seed, vehicle id, step); the draw depends on nothing else.
    """
    return decide_aco(current, dest, net, field.levels, dist, params, rng_key)


def decide_aco(current: int, dest: int, net: RoadNetwork, levels: Sequence[int],
               dist: DistanceTable, params: RoutingParams, rng_key: tuple[int, int, int]) -> RouteDecision:
    cands = candidates(current, dest, net, dist, params.progress_filter)
    if not cands:
        raise Unroutable(current, dest)
    if len(cands) == 1:
        return RouteDecision(cands[0].dst, cands[0].id)
    weights = aco_weights(cands, levels, params)
    total = sum(weights)
    if not total > 0:
        weights = [1.0] * len(cands)
        total = float(len(cands))
    seed, entity, step = rng_key
    target = rng.keyed_uniform(seed, rng.ACO_CHOICE, entity, step) * total
    acc = 0.0
    for e, w in zip(cands, weights):
        acc += w
        if target < acc:
            return RouteDecision(e.dst, e.id)
    last = [e for e, w in zip(cands, weights) if w > 0][-1]
    return RouteDecision(last.dst, last.id)


def next_node_dijkstra(current: int, dest: int, net: RoadNetwork, dist: DistanceTable) -> RouteDecision:
    hop = dist.next_hop[current][dest]
    if hop < 0 or current == dest:
        raise Unroutable(current, dest)
    edge = net.edge_between(current, hop)
    return RouteDecision(hop, edge.id)
