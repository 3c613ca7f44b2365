"""Per-edge pheromone field and its update rules.

Levels are stored as integer micro-units (``SCALE`` per unit of pheromone).
Integer storage makes the batched update used by the parallel executor
bit-identical to applying single updates one by one.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .netgraph import RoadNetwork

SCALE = 1_000_000


def to_units(value: float) -> int:
    return int(round(value * SCALE))


@dataclass(frozen=True)
class PheromoneParams:
    tau_init_lo: float = 1.0
    tau_init_hi: float = 10.0
    delta_inc: float = 1.0
    delta_dec: float = 0.05
    rho: float = 0.1
    tau_min: float = 0.0
    tau_max: float = 100.0
    aco_deposit_q: float = 100.0
    # "network": every other edge is decremented; "siblings": only the other
    # out-edges of the deciding node
    decrement_scope: str = "network"

    def __post_init__(self) -> None:
        if not 0 <= self.tau_min <= self.tau_init_lo <= self.tau_init_hi <= self.tau_max:
            raise ValueError("need 0 <= tau_min <= tau_init_lo <= tau_init_hi <= tau_max")
        if self.tau_max > 1e9:
            raise ValueError("tau_max above 1e9 overflows the fixed-point field")
        if self.delta_inc <= 0 or self.delta_dec <= 0:
            raise ValueError("delta_inc and delta_dec must be > 0")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.aco_deposit_q < 0:
            raise ValueError("aco_deposit_q must be >= 0")
        if self.decrement_scope not in ("network", "siblings"):
            raise ValueError(f"unknown decrement_scope {self.decrement_scope!r}")

    @property
    def inc_units(self) -> int:
        return to_units(self.delta_inc)

    @property
    def dec_units(self) -> int:
        return to_units(self.delta_dec)

    @property
    def min_units(self) -> int:
        return to_units(self.tau_min)

    @property
    def max_units(self) -> int:
        return to_units(self.tau_max)

    @property
    def keep_units(self) -> int:
        """Fraction retained by one evaporation, in micro-units."""
        return to_units(1.0 - self.rho)


class PheromoneField:
    """Immutable per-edge pheromone levels; every update returns a new field."""

    __slots__ = ("_levels",)

    def __init__(self, levels: np.ndarray):
        arr = np.array(levels, dtype=np.int64)
        arr.setflags(write=False)
        self._levels = arr

    @classmethod
    def uniform(cls, m: int, tau: float) -> PheromoneField:
        return cls(np.full(m, to_units(tau), dtype=np.int64))

    @classmethod
    def from_tau(cls, tau: Iterable[float]) -> PheromoneField:
        return cls(np.array([to_units(t) for t in tau], dtype=np.int64))

    @property
    def levels(self) -> np.ndarray:
        """Raw fixed-point levels (read-only)."""
        return self._levels

    @property
    def tau(self) -> np.ndarray:
        return self._levels / SCALE

    def __len__(self) -> int:
        return len(self._levels)

    def __getitem__(self, edge: int) -> float:
        return int(self._levels[edge]) / SCALE

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PheromoneField) and np.array_equal(self._levels, other._levels)

    def __repr__(self) -> str:
        return f"PheromoneField(m={len(self)}, mean={self.tau.mean() if len(self) else 0:.4f})"

    def to_csv(self, path: str | Path) -> None:
        lines = ["edge_id,tau"] + [f"{e},{int(v) / SCALE!r}" for e, v in enumerate(self._levels)]
        Path(path).write_text("\n".join(lines) + "\n")


def init_random(net: RoadNetwork, params: PheromoneParams, seed: int) -> PheromoneField:
    """Edge ``e`` draws uniformly on [tau_init_lo, tau_init_hi] from the stream keyed by (seed, e)."""
    u = rng.uniform_stream(seed, rng.PHEROMONE_INIT, net.m)
    lo, hi = to_units(params.tau_init_lo), to_units(params.tau_init_hi)
    return PheromoneField(lo + np.floor(u * (hi - lo + 1)).astype(np.int64).clip(0, hi - lo))


def maco_update(field: PheromoneField, chosen: int, params: PheromoneParams,
                others: Sequence[int] | None = None) -> PheromoneField:
    """Reinforce the chosen edge and wear down the rest.

    ``others`` restricts the decrement to the given edges (sibling scope);
    by default every edge except ``chosen`` is decremented.
    """
    if not 0 <= chosen < len(field):
        raise IndexError(f"edge {chosen} not in field of size {len(field)}")
    lv = field.levels
    out = lv.copy()
    lo, hi = params.min_units, params.max_units
    if others is None:
        np.maximum(lv - params.dec_units, lo, out=out)
    else:
        idx = np.asarray([e for e in others if e != chosen], dtype=np.int64)
        if idx.size:
            out[idx] = np.maximum(lv[idx] - params.dec_units, lo)
    out[chosen] = min(int(lv[chosen]) + params.inc_units, hi)
    return PheromoneField(out)


def maco_update_batch(field: PheromoneField, decisions: Sequence[tuple[int, Sequence[int] | None]],
                      params: PheromoneParams) -> PheromoneField:
    """Fold a sequence of (chosen, others) updates in one pass.

    Equal to applying :func:`maco_update` to each decision in order.  With
    network scope, an edge that is never chosen sees ``k`` consecutive
    decrements, i.e. ``max(tau - k*dec, tau_min)``; only chosen edges need
    their event sequence replayed.
    """
    if not decisions:
        return field
    lv = field.levels
    lo, hi = params.min_units, params.max_units
    inc, dec = params.inc_units, params.dec_units
    network_scope = decisions[0][1] is None
    if any((others is None) != network_scope for _, others in decisions):
        raise ValueError("cannot mix network and sibling scope in one batch")

    if network_scope:
        k = len(decisions)
        out = np.maximum(lv - k * dec, lo)
        picks: dict[int, list[int]] = {}
        for i, (chosen, _) in enumerate(decisions):
            picks.setdefault(chosen, []).append(i)
        for edge, idxs in picks.items():
            level = int(lv[edge])
            prev = -1
            for i in idxs:
                level = max(level - (i - prev - 1) * dec, lo)
                level = min(level + inc, hi)
                prev = i
            out[edge] = max(level - (k - prev - 1) * dec, lo)
        return PheromoneField(out)

    # sibling scope: replay per-edge event lists, collapsing runs of decrements
    events: dict[int, list[int]] = {}
    for chosen, others in decisions:
        for e in others:
            if e != chosen:
                events.setdefault(e, []).append(-1)
        events.setdefault(chosen, []).append(+1)
    out = lv.copy()
    for edge, seq in events.items():
        level = int(lv[edge])
        run = 0
        for ev in seq:
            if ev < 0:
                run += 1
                continue
            if run:
                level = max(level - run * dec, lo)
                run = 0
            level = min(level + inc, hi)
        if run:
            level = max(level - run * dec, lo)
        out[edge] = level
    return PheromoneField(out)


def evaporate_levels(levels: np.ndarray, params: PheromoneParams) -> np.ndarray:
    return np.maximum(levels * params.keep_units // SCALE, params.min_units)


def evaporate(field: PheromoneField, params: PheromoneParams) -> PheromoneField:
    """``tau <- max(tau_min, (1 - rho) * tau)``, floored to the fixed-point grid."""
    if params.rho == 0:
        return field
    return PheromoneField(evaporate_levels(field.levels, params))


def deposit_units(path_length_m: float, params: PheromoneParams) -> int:
    if path_length_m <= 0:
        raise ValueError(f"path length must be positive, got {path_length_m}")
    return int(params.aco_deposit_q * 1000.0 * SCALE // path_length_m)


def aco_deposit(field: PheromoneField, path: Sequence[int], path_length_m: float,
                params: PheromoneParams) -> PheromoneField:
    """Classic ant deposit of ``q / length_km`` on every edge of a completed trip."""
    if not path:
        return field
    amount = deposit_units(path_length_m, params)
    out = field.levels.copy()
    for e in path:
        if not 0 <= e < len(out):
            raise IndexError(f"edge {e} not in field")
        out[e] = min(int(out[e]) + amount, params.max_units)
    return PheromoneField(out)
