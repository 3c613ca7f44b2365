"""Eight-phase intersection queues and green-light controllers.

Each incoming road of a signalized node feeds one of eight phases.  A
controller is consulted at every assignment epoch and returns the phase that
gets the next green.  Queue service during green runs at a saturation flow
per lane; fractional service carries over inside the same green.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

N_PHASES = 8

# service credit unit: one vehicle == 1e3 (milli-veh) * 1e3 (ms per s)
_VEHICLE_CREDIT = 1_000_000


@dataclass(frozen=True)
class SignalParams:
    th_max: int = 10
    t_max: float = 120.0
    green_duration: float = 10.0
    saturation_flow: float = 0.5
    fixed_cycle_order: tuple[int, ...] = tuple(range(N_PHASES))

    def __post_init__(self) -> None:
        if self.th_max < 1:
            raise ValueError("th_max must be >= 1")
        if self.t_max <= 0 or self.green_duration <= 0 or self.saturation_flow <= 0:
            raise ValueError("t_max, green_duration and saturation_flow must be > 0")
        if sorted(self.fixed_cycle_order) != list(range(N_PHASES)):
            raise ValueError("fixed_cycle_order must be a permutation of 0..7")

    @property
    def green_ms(self) -> int:
        return int(round(self.green_duration * 1000))

    @property
    def flow_mveh(self) -> int:
        """Saturation flow in milli-vehicles per second per lane."""
        return int(round(self.saturation_flow * 1000))


@dataclass
class Phase:
    feeder_edges: list[int] = field(default_factory=list)
    # (vehicle id, join time in ms)
    queue: deque[tuple[int, int]] = field(default_factory=deque)
    credit: int = 0

    def __len__(self) -> int:
        return len(self.queue)


@dataclass
class SignalState:
    node: int
    phases: list[Phase]
    green: int
    green_elapsed_ms: int
    cycle_cursor: int
    now_ms: int = 0

    @classmethod
    def for_node(cls, node: int, incoming_edges: Sequence[int], params: SignalParams) -> SignalState:
        """Fresh signal; incoming edges are dealt to phases round-robin by edge id.

        The initial green is a placeholder: ``green_elapsed`` starts at the
        full green duration, so the first controller call happens at t = 0.
        """
        phases = [Phase() for _ in range(N_PHASES)]
        for i, e in enumerate(sorted(incoming_edges)):
            phases[i % N_PHASES].feeder_edges.append(e)
        last = params.fixed_cycle_order[-1]
        return cls(node, phases, green=last, green_elapsed_ms=params.green_ms, cycle_cursor=last)

    @property
    def phase_of_edge(self) -> dict[int, int]:
        return {e: u for u, ph in enumerate(self.phases) for e in ph.feeder_edges}

    @property
    def queue_lengths(self) -> list[int]:
        return [len(ph.queue) for ph in self.phases]

    def head_wait_ms(self, u: int) -> int:
        q = self.phases[u].queue
        return self.now_ms - q[0][1] if q else 0

    @property
    def head_wait(self) -> list[float]:
        return [self.head_wait_ms(u) / 1000.0 for u in range(N_PHASES)]

    def enqueue(self, phase: int, vehicle: int) -> None:
        self.phases[phase].queue.append((vehicle, self.now_ms))

    def at_epoch(self, params: SignalParams) -> bool:
        return self.green_elapsed_ms >= params.green_ms

    def assign(self, phase: int) -> None:
        if phase != self.green:
            self.phases[self.green].credit = 0
        self.green = phase
        self.cycle_cursor = phase
        self.green_elapsed_ms = 0

    @property
    def queued_count(self) -> int:
        return sum(len(ph.queue) for ph in self.phases)


def _next_in_order(cursor: int, order: Sequence[int]) -> int:
    return order[(order.index(cursor) + 1) % len(order)]


def select_phase_preemptive(state: SignalState, params: SignalParams) -> int:
    """Out-of-order green assignment.

    Priority: longest queue above ``th_max``; else longest head wait above
    ``t_max``; else longest non-empty queue; else the next phase in the
    fixed cycle.  Ties go to the lowest phase index.
    """
    q = state.queue_lengths
    over = [u for u in range(N_PHASES) if q[u] > params.th_max]
    if over:
        return max(over, key=lambda u: (q[u], -u))
    t_max_ms = params.t_max * 1000
    waits = [state.head_wait_ms(u) for u in range(N_PHASES)]
    starving = [u for u in range(N_PHASES) if waits[u] > t_max_ms]
    if starving:
        return max(starving, key=lambda u: (waits[u], -u))
    if any(q):
        return max(range(N_PHASES), key=lambda u: (q[u], -u))
    return _next_in_order(state.cycle_cursor, params.fixed_cycle_order)


def select_phase_fixed(state: SignalState, params: SignalParams) -> int:
    return _next_in_order(state.cycle_cursor, params.fixed_cycle_order)


def select_phase_adaptive(state: SignalState, params: SignalParams) -> int:
    """Non-preemptive actuated control: keep serving the current phase while it
    has vehicles, otherwise move to the next non-empty phase in cycle order."""
    order = params.fixed_cycle_order
    start = order.index(state.cycle_cursor)
    for k in range(N_PHASES):
        u = order[(start + k) % N_PHASES]
        if state.phases[u].queue:
            return u
    return _next_in_order(state.cycle_cursor, order)


CONTROLLERS: dict[str, Callable[[SignalState, SignalParams], int]] = {
    "fixed": select_phase_fixed,
    "adaptive": select_phase_adaptive,
    "preemptive": select_phase_preemptive,
}


def compute_density(state: SignalState) -> tuple[int, ...]:
    return tuple(len(ph.queue) for ph in state.phases)


def plan_discharge(state: SignalState, dt_ms: int, lanes: int, params: SignalParams) -> tuple[int, int]:
    """Return (vehicles to release, credit left) without touching ``state``."""
    ph = state.phases[state.green]
    if not ph.queue:
        return 0, 0
    credit = ph.credit + params.flow_mveh * lanes * dt_ms
    n = min(credit // _VEHICLE_CREDIT, len(ph.queue))
    credit -= n * _VEHICLE_CREDIT
    if n == len(ph.queue):
        credit = 0  # unused green is not banked
    return n, credit


def apply_discharge(state: SignalState, n: int, credit: int) -> list[int]:
    ph = state.phases[state.green]
    released = [ph.queue.popleft()[0] for _ in range(n)]
    ph.credit = credit
    return released


def discharge(state: SignalState, dt: float, lanes: int, params: SignalParams) -> list[int]:
    """Serve the green phase for ``dt`` seconds; returns released vehicle ids in FIFO order."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n, credit = plan_discharge(state, int(round(dt * 1000)), lanes, params)
    return apply_discharge(state, n, credit)
