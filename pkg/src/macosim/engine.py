"""Discrete-time traffic world and the sequential reference executor.

One simulation step runs a fixed pipeline of stages with a full barrier
between them:

    B  route every vehicle standing at a node
    C  measure per-phase queue lengths at every signal
    D  assign green at signals whose current green has run out
    E  move vehicles, queue arrivals at signals, discharge green phases
    F  commit pheromone updates (per decision, or per finished ACO trip)
    G  evaporate pheromone

Stage kernels are pure: they read the world and return records keyed by
entity id.  A stage's records are applied by its commit function in
ascending entity order.  The executor decides how kernels are scheduled;
:class:`SequentialExecutor` runs them inline.

Time is kept in integer milliseconds, positions in micrometres and speeds in
mm/s, so every per-vehicle time account balances exactly.
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from . import rng
from .netgraph import DistanceTable, RoadNetwork, cached_distances
from .pheromone import (PheromoneParams, aco_deposit, evaporate, init_random,
                        maco_update)
from .routing import ALGORITHMS, RoutingParams, Unroutable, decide_aco, decide_maco
from .signals import CONTROLLERS, SignalParams, SignalState, apply_discharge, compute_density, plan_discharge

FAST_SPEEDS = (50.0, 80.0)
REALISTIC_SPEEDS = (8.0, 22.0)

PENDING, AT_NODE, ON_EDGE, QUEUED, ARRIVED, RETIRED = range(6)
STATE_NAMES = ("pending", "at-node", "on-edge", "queued", "arrived", "retired")


class ConservationError(AssertionError):
    pass


@dataclass(frozen=True)
class SimConfig:
    network: RoadNetwork
    algorithm: str = "maco-p"
    controller: str | None = None  # None: preemptive for maco-p, fixed otherwise
    vehicle_count: int = 300
    dt: float = 1.0
    max_steps: int = 20_000
    seed: int = 0
    decision_latency_s: float = 0.0
    spawn: str = "all-at-step-0"  # or "uniform"
    spawn_steps: int = 1
    speed_range: tuple[float, float] = FAST_SPEEDS
    corridor_pairs: tuple[tuple[int, int], ...] = ()
    corridor_fraction: float = 0.0
    pheromone: PheromoneParams = field(default_factory=PheromoneParams)
    signal: SignalParams = field(default_factory=SignalParams)
    routing: RoutingParams = field(default_factory=RoutingParams)

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.controller is not None and self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.vehicle_count < 1:
            raise ValueError("vehicle_count must be >= 1")
        if self.decision_latency_s < 0:
            raise ValueError("decision_latency_s must be >= 0")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.spawn not in ("all-at-step-0", "uniform"):
            raise ValueError(f"unknown spawn mode {self.spawn!r}")
        if self.spawn_steps < 1:
            raise ValueError("spawn_steps must be >= 1")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError("speed_range must satisfy 0 < lo <= hi")
        if not 0 <= self.corridor_fraction <= 1:
            raise ValueError("corridor_fraction must lie in [0, 1]")
        if self.corridor_fraction > 0 and not self.corridor_pairs:
            raise ValueError("corridor_fraction > 0 needs corridor_pairs")

    @property
    def controller_name(self) -> str:
        if self.controller is not None:
            return self.controller
        return "preemptive" if self.algorithm == "maco-p" else "fixed"

    @property
    def dt_ms(self) -> int:
        return int(round(self.dt * 1000))

    @property
    def latency_ms(self) -> int:
        return int(round(self.decision_latency_s * 1000))

    def with_(self, **changes: Any) -> SimConfig:
        return replace(self, **changes)


class Vehicle:
    __slots__ = ("id", "origin", "dest", "speed_mm_s", "depart_step", "arrive_step", "state",
                 "node", "edge", "progress_um", "carry_um", "debt_ms", "latency_ms", "queued_ms",
                 "driving_ms", "join_step", "join_c", "decisions", "deviations", "path_edges",
                 "path_mm")

    def __init__(self, vid: int, origin: int, dest: int, speed_mm_s: int, depart_step: int):
        self.id = vid
        self.origin = origin
        self.dest = dest
        self.speed_mm_s = speed_mm_s
        self.depart_step = depart_step
        self.arrive_step: int | None = None
        self.state = PENDING
        self.node = origin
        self.edge = -1
        self.progress_um = 0
        self.carry_um = 0
        self.debt_ms = 0
        self.latency_ms = 0
        self.queued_ms = 0
        self.driving_ms = 0
        self.join_step = -1
        self.join_c = 0
        self.decisions = 0
        self.deviations = 0
        self.path_edges: list[int] = []
        self.path_mm = 0

    @property
    def speed(self) -> float:
        return self.speed_mm_s / 1000.0

    @property
    def wait_s(self) -> float:
        return (self.queued_ms + self.latency_ms) / 1000.0

    @property
    def position(self) -> tuple:
        if self.state == ON_EDGE:
            return ("on-edge", self.edge, self.progress_um / 1e6)
        if self.state == QUEUED:
            return ("queued", self.node, self.edge)
        return (STATE_NAMES[self.state], self.node)

    def __repr__(self) -> str:
        return f"Vehicle({self.id}, {self.origin}->{self.dest}, {STATE_NAMES[self.state]})"


def spawn_vehicles(config: SimConfig, net: RoadNetwork, dist: DistanceTable) -> list[Vehicle]:
    """Draw the fleet; vehicle ``i`` depends only on (seed, i)."""
    pairs = [(o, d) for o in range(net.n) for d in range(net.n) if o != d and dist.reachable(o, d)]
    if not pairs:
        raise ValueError("network has no reachable origin-destination pair")
    for o, d in config.corridor_pairs:
        if o == d or not dist.reachable(o, d):
            raise ValueError(f"corridor pair {o}->{d} is not a routable trip")
    n = config.vehicle_count
    u_od = rng.uniform_stream(config.seed, rng.SPAWN_OD, n)
    u_speed = rng.uniform_stream(config.seed, rng.SPAWN_SPEED, n)
    u_time = rng.uniform_stream(config.seed, rng.SPAWN_TIME, n)
    u_demand = rng.uniform_stream(config.seed, rng.SPAWN_DEMAND, n)
    lo, hi = config.speed_range
    out = []
    for i in range(n):
        pool = config.corridor_pairs if u_demand[i] < config.corridor_fraction else pairs
        o, d = pool[min(int(u_od[i] * len(pool)), len(pool) - 1)]
        speed = int(round((lo + (hi - lo) * float(u_speed[i])) * 1000))
        depart = 0 if config.spawn == "all-at-step-0" else min(int(u_time[i] * config.spawn_steps),
                                                               config.spawn_steps - 1)
        out.append(Vehicle(i, o, d, speed, depart))
    return out


@dataclass
class RunResult:
    vehicle_count: int
    completed_count: int
    retired_count: int
    steps: int
    travel_times_s: tuple[float, ...]
    wait_times_s: tuple[float, ...]
    mean_travel_s: float | None
    mean_wait_s: float | None
    mean_queue_len: float
    max_edge_occupancy: int
    diagnostics: tuple[str, ...] = ()
    wall_clock_ms: float = field(default=0.0, compare=False)

    @property
    def complete(self) -> bool:
        return self.completed_count == self.vehicle_count


class World:
    """Mutable simulation state for one run."""

    def __init__(self, config: SimConfig, dist: DistanceTable | None = None, check: bool = False):
        net = config.network
        self.config = config
        self.net = net
        self.dist = dist if dist is not None else cached_distances(net)
        self.check = check
        self.dt_ms = config.dt_ms
        self.latency_ms = config.latency_ms
        self.vehicles = spawn_vehicles(config, net, self.dist)
        self.field = init_random(net, config.pheromone, config.seed)
        self.controller = CONTROLLERS[config.controller_name]
        self.step_index = 0

        self.signals: list[SignalState] = []
        self.signal_of_node: dict[int, int] = {}
        for node in net.signalized_nodes:
            self.signal_of_node[node] = len(self.signals)
            self.signals.append(SignalState.for_node(node, [e.id for e in net.in_edges[node]], config.signal))
        # edge id -> (signal index, phase) for roads ending at a signal
        self.approach: list[tuple[int, int] | None] = [None] * net.m
        self.phase_lanes: list[list[int]] = []
        for s, sig in enumerate(self.signals):
            lanes = []
            for u, ph in enumerate(sig.phases):
                for e in ph.feeder_edges:
                    self.approach[e] = (s, u)
                lanes.append(sum(net.edges[e].lanes for e in ph.feeder_edges))
            self.phase_lanes.append(lanes)
        self.edge_um = [e.length_mm * 1000 for e in net.edges]
        self.edge_dst = [e.dst for e in net.edges]
        self.hop_edge = {(e.src, e.dst): e.id for e in net.edges}

        self.pending = sorted(range(len(self.vehicles)), key=lambda i: (self.vehicles[i].depart_step, i))
        self.pending_pos = 0
        self.at_node: set[int] = set()
        self.on_edge: set[int] = set()
        self.n_queued = 0
        self.n_arrived = 0
        self.n_retired = 0
        self.occupancy = [0] * net.m
        self.levels: list[int] = []
        self.n_t = 0
        self.densities: list[tuple[int, ...]] = [(0,) * 8 for _ in self.signals]
        self.decisions: dict[int, tuple[int, int]] = {}  # vid -> (edge, node) this step
        self.finished: list[int] = []  # vids that arrived this step
        self.queue_len_sum = 0.0
        self.max_occupancy = 0
        self.diagnostics: list[str] = []

    # -- bookkeeping --------------------------------------------------------

    @property
    def active_count(self) -> int:
        return len(self.at_node) + len(self.on_edge) + self.n_queued

    @property
    def done(self) -> bool:
        return self.pending_pos == len(self.pending) and self.active_count == 0

    def census(self) -> dict[str, int]:
        counts = dict.fromkeys(STATE_NAMES, 0)
        for v in self.vehicles:
            counts[STATE_NAMES[v.state]] += 1
        return counts

    def check_conservation(self) -> None:
        counts = self.census()
        total = sum(counts.values())
        in_queues = sum(sig.queued_count for sig in self.signals)
        if total != len(self.vehicles) or counts["queued"] != in_queues or counts["queued"] != self.n_queued:
            raise ConservationError(f"step {self.step_index}: census {counts}, signal queues {in_queues}")
        if counts["on-edge"] != len(self.on_edge) or counts["at-node"] != len(self.at_node):
            raise ConservationError(f"step {self.step_index}: index sets disagree with census {counts}")
        if counts["arrived"] != self.n_arrived or counts["retired"] != self.n_retired:
            raise ConservationError(f"step {self.step_index}: terminal counters disagree with census")
        occ = [0] * self.net.m
        for v in self.vehicles:
            if v.state in (ON_EDGE, QUEUED):
                occ[v.edge] += 1
        if occ != self.occupancy:
            raise ConservationError(f"step {self.step_index}: edge occupancy drifted")
        for sig in self.signals:
            for ph in sig.phases:
                if not ph.feeder_edges and ph.queue:
                    raise ConservationError(f"signal {sig.node}: phase without feeder has a queue")

    def fingerprint(self) -> int:
        """Hash of all mutable state; used to assert that kernels do not write."""
        veh = tuple((v.state, v.node, v.edge, v.progress_um, v.carry_um, v.debt_ms, v.queued_ms,
                     v.driving_ms, v.latency_ms, v.decisions) for v in self.vehicles)
        sig = tuple((s.green, s.green_elapsed_ms, s.cycle_cursor, s.now_ms,
                     tuple((tuple(p.queue), p.credit) for p in s.phases)) for s in self.signals)
        return hash((veh, sig, tuple(self.occupancy), self.field.levels.tobytes(),
                     tuple(self.densities), self.n_queued))


# -- stage kernels and commits -----------------------------------------------

def activate(world: World) -> None:
    k = world.step_index
    vehicles = world.vehicles
    while world.pending_pos < len(world.pending):
        v = vehicles[world.pending[world.pending_pos]]
        if v.depart_step > k:
            break
        v.state = AT_NODE
        world.at_node.add(v.id)
        world.pending_pos += 1
    world.n_t = world.active_count
    world.levels = world.field.levels.tolist()


def route_kernel(world: World, vids: Sequence[int]) -> list[tuple[int, int, bool]]:
    """Stage B: one (vid, edge, deviated) record per deciding vehicle; edge -1 if unroutable."""
    cfg = world.config
    alg = cfg.algorithm
    net, dist, levels = world.net, world.dist, world.levels
    out = []
    for vid in vids:
        v = world.vehicles[vid]
        try:
            if alg == "dijkstra":
                hop = dist.next_hop[v.node][v.dest]
                if hop < 0:
                    raise Unroutable(v.node, v.dest)
                out.append((vid, world.hop_edge[(v.node, hop)], False))
                continue
            if alg == "aco":
                d = decide_aco(v.node, v.dest, net, levels, dist, cfg.routing, (cfg.seed, vid, world.step_index))
            else:
                d = decide_maco(v.node, v.dest, net, levels, dist, cfg.routing, world.n_t, world.occupancy)
            out.append((vid, d.via, d.deviated))
        except Unroutable:
            out.append((vid, -1, False))
    return out


def commit_routes(world: World, records: list[tuple[int, int, bool]]) -> None:
    latency = world.latency_ms
    for vid, edge, deviated in records:
        v = world.vehicles[vid]
        world.at_node.discard(vid)
        if edge < 0:
            v.state = RETIRED
            world.n_retired += 1
            world.diagnostics.append(f"step {world.step_index}: vehicle {vid} unroutable at node {v.node} "
                                     f"toward {v.dest}; retired")
            continue
        v.state = ON_EDGE
        v.edge = edge
        v.progress_um = 0
        v.decisions += 1
        v.deviations += deviated
        v.debt_ms += latency
        v.path_edges.append(edge)
        world.on_edge.add(vid)
        world.occupancy[edge] += 1
        world.decisions[vid] = (edge, v.node)


def density_kernel(world: World, sids: Sequence[int]) -> list[tuple[int, tuple[int, ...]]]:
    return [(s, compute_density(world.signals[s])) for s in sids]


def commit_densities(world: World, records: list[tuple[int, tuple[int, ...]]]) -> None:
    total = 0
    for s, dens in records:
        world.densities[s] = dens
        total += sum(dens)
    if world.signals:
        world.queue_len_sum += total / len(world.signals)


def green_kernel(world: World, sids: Sequence[int]) -> list[tuple[int, int]]:
    params = world.config.signal
    out = []
    for s in sids:
        sig = world.signals[s]
        if sig.at_epoch(params):
            out.append((s, world.controller(sig, params)))
    return out


def commit_greens(world: World, records: list[tuple[int, int]]) -> None:
    for s, phase in records:
        world.signals[s].assign(phase)


def motion_kernel(world: World, vids: Sequence[int]) -> list[tuple[int, int, int, bool]]:
    """Stage E1: (vid, latency consumed, new progress or overshoot, reached end of road)."""
    dt = world.dt_ms
    edge_um = world.edge_um
    vehicles = world.vehicles
    out = []
    for vid in vids:
        v = vehicles[vid]
        c = v.debt_ms if v.debt_ms < dt else dt
        if v.debt_ms > c:
            out.append((vid, c, v.progress_um, False))
            continue
        p = v.progress_um + v.carry_um + v.speed_mm_s * (dt - c)
        length = edge_um[v.edge]
        if p >= length:
            out.append((vid, c, p - length, True))
        else:
            out.append((vid, c, p, False))
    return out


def commit_motion(world: World, records: list[tuple[int, int, int, bool]]) -> None:
    k = world.step_index
    dt = world.dt_ms
    now = (k + 1) * dt
    for sig in world.signals:
        sig.now_ms = now
    vehicles = world.vehicles
    for vid, c, p, reached in records:
        v = vehicles[vid]
        v.latency_ms += c
        v.debt_ms -= c
        if not reached:
            if v.debt_ms == 0:
                v.carry_um = 0
            v.progress_um = p
            v.driving_ms += dt - c
            continue
        edge = v.edge
        node = world.edge_dst[edge]
        v.node = node
        v.path_mm += world.net.edges[edge].length_mm
        approach = world.approach[edge]
        world.on_edge.discard(vid)
        if node == v.dest:
            v.state = ARRIVED
            v.arrive_step = k + 1
            v.driving_ms += dt - c
            v.carry_um = 0
            v.edge = -1
            world.occupancy[edge] -= 1
            world.n_arrived += 1
            world.finished.append(vid)
        elif approach is not None:
            s, phase = approach
            v.state = QUEUED
            v.carry_um = 0
            v.progress_um = world.edge_um[edge]
            v.join_step = k
            v.join_c = c
            world.signals[s].enqueue(phase, vid)
            world.n_queued += 1
        else:
            v.state = AT_NODE
            v.carry_um = p
            v.driving_ms += dt - c
            v.edge = -1
            world.occupancy[edge] -= 1
            world.at_node.add(vid)


def discharge_kernel(world: World, sids: Sequence[int]) -> list[tuple[int, int, int]]:
    """Stage E2: (signal, vehicles to release, remaining credit) for each green phase."""
    params = world.config.signal
    out = []
    for s in sids:
        sig = world.signals[s]
        n, credit = plan_discharge(sig, world.dt_ms, world.phase_lanes[s][sig.green], params)
        out.append((s, n, credit))
    return out


def commit_discharge(world: World, records: list[tuple[int, int, int]]) -> None:
    k = world.step_index
    dt = world.dt_ms
    vehicles = world.vehicles
    for s, n, credit in records:
        sig = world.signals[s]
        for vid in apply_discharge(sig, n, credit):
            v = vehicles[vid]
            if v.join_step == k:
                v.driving_ms += dt - v.join_c
            else:
                v.queued_ms += (dt - v.join_c) + (k - 1 - v.join_step) * dt
                v.driving_ms += dt
            world.occupancy[v.edge] -= 1
            v.edge = -1
            v.state = AT_NODE
            world.n_queued -= 1
            world.at_node.add(vid)
        sig.green_elapsed_ms += dt


def pheromone_records(world: World, vids: Sequence[int]) -> list[tuple[int, int, tuple[int, ...] | None]]:
    """Stage F kernel: (vid, chosen edge, decremented edges or None for network scope)."""
    by_vid = world.decisions
    siblings = world.config.pheromone.decrement_scope == "siblings"
    out = []
    for vid in vids:
        edge, node = by_vid[vid]
        others = tuple(e.id for e in world.net.out_edges[node] if e.id != edge) if siblings else None
        out.append((vid, edge, others))
    return out


def commit_aco_deposits(world: World) -> None:
    params = world.config.pheromone
    fld = world.field
    for vid in sorted(world.finished):
        v = world.vehicles[vid]
        fld = aco_deposit(fld, v.path_edges, v.path_mm / 1000.0, params)
    world.field = fld


def finalize_step(world: World) -> None:
    world.decisions = {}
    world.finished = []
    world.step_index += 1
    peak = max(world.occupancy) if world.occupancy else 0
    if peak > world.max_occupancy:
        world.max_occupancy = peak
    if world.check:
        world.check_conservation()


class SequentialExecutor:
    """Runs every stage kernel inline over the full entity list."""

    name = "sequential"

    def map(self, kernel: Callable, world: World, ids: Sequence[int], count: int) -> list:
        return kernel(world, ids)

    def commit_maco(self, world: World) -> None:
        params = world.config.pheromone
        records = pheromone_records(world, sorted(world.decisions))
        fld = world.field
        for _, edge, others in records:
            fld = maco_update(fld, edge, params, others)
        world.field = fld

    def evaporate(self, world: World) -> None:
        world.field = evaporate(world.field, world.config.pheromone)

    def close(self) -> None:
        pass


def step(world: World, executor: SequentialExecutor | None = None) -> World:
    """Advance the world by one dt through stages B to G."""
    ex = executor or SequentialExecutor()
    n_veh = len(world.vehicles)
    n_sig = len(world.signals)
    sids = range(n_sig)
    activate(world)

    records = ex.map(route_kernel, world, sorted(world.at_node), n_veh)
    commit_routes(world, sorted(records, key=_entity))

    commit_densities(world, sorted(ex.map(density_kernel, world, sids, n_sig), key=_entity))
    commit_greens(world, sorted(ex.map(green_kernel, world, sids, n_sig), key=_entity))

    commit_motion(world, sorted(ex.map(motion_kernel, world, sorted(world.on_edge), n_veh), key=_entity))
    commit_discharge(world, sorted(ex.map(discharge_kernel, world, sids, n_sig), key=_entity))

    alg = world.config.algorithm
    if alg in ("maco", "maco-p"):
        ex.commit_maco(world)
    elif alg == "aco":
        commit_aco_deposits(world)
    ex.evaporate(world)
    finalize_step(world)
    return world


def _entity(record: tuple) -> int:
    return record[0]


def collect(world: World, wall_clock_ms: float = 0.0) -> RunResult:
    dt = world.dt_ms
    k = world.step_index
    travel, wait = [], []
    for v in world.vehicles:
        if v.state == QUEUED:
            # close the open queue interval of an unfinished run
            v.queued_ms += (dt - v.join_c) + (k - 1 - v.join_step) * dt
            v.join_step, v.join_c = k - 1, dt
        if v.state == ARRIVED:
            travel.append((v.arrive_step - v.depart_step) * dt / 1000.0)
            wait.append((v.queued_ms + v.latency_ms) / 1000.0)
    n_done = len(travel)
    return RunResult(
        vehicle_count=len(world.vehicles),
        completed_count=n_done,
        retired_count=world.n_retired,
        steps=k,
        travel_times_s=tuple(travel),
        wait_times_s=tuple(wait),
        mean_travel_s=math.fsum(travel) / n_done if n_done else None,
        mean_wait_s=math.fsum(wait) / n_done if n_done else None,
        mean_queue_len=world.queue_len_sum / k if k else 0.0,
        max_edge_occupancy=world.max_occupancy,
        diagnostics=tuple(world.diagnostics),
        wall_clock_ms=wall_clock_ms,
    )


def simulate(config: SimConfig, executor: SequentialExecutor | None = None, check: bool = False,
             trace: Callable[[World], None] | None = None) -> RunResult:
    t0 = time.perf_counter()
    world = World(config, check=check)
    ex = executor or SequentialExecutor()
    try:
        while not world.done and world.step_index < config.max_steps:
            step(world, ex)
            if trace is not None:
                trace(world)
    finally:
        ex.close()
    if not world.done:
        world.diagnostics.append(f"stopped at max_steps={config.max_steps} with "
                                 f"{world.active_count + len(world.pending) - world.pending_pos} vehicles unfinished")
    return collect(world, (time.perf_counter() - t0) * 1000.0)


def run(config: SimConfig, check: bool = False, trace: Callable[[World], None] | None = None) -> RunResult:
    """Run one simulation with the sequential reference executor."""
    return simulate(config, SequentialExecutor(), check=check, trace=trace)


def percent_reduction(base: float, new: float) -> float:
    """Relative reduction of ``new`` against ``base`` in percent, two decimals."""
    if not base > 0:
        raise ValueError(f"base must be positive, got {base}")
    return round(100.0 * (base - new) / base, 2)
