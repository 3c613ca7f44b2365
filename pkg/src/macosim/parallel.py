"""Deterministic multi-worker executor for the staged step pipeline.

Each stage's entities are split into contiguous id ranges, one per worker.
Workers run the stage kernel on their range against the state committed at
the previous barrier and return record buffers.  Buffers are merged in
ascending entity id and committed on the calling thread, so the result does
not depend on the worker count or on scheduling.

Pheromone commits use the batched fold and evaporation is split by edge
range; both are exact integer operations and agree bit-for-bit with the
sequential executor's one-at-a-time updates.
"""

from __future__ import annotations

import bisect
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .engine import RunResult, SimConfig, World, pheromone_records, simulate
from .pheromone import PheromoneField, evaporate_levels, maco_update_batch


class IsolationError(AssertionError):
    """A stage kernel wrote to shared state."""


def partition_entities(count: int, workers: int) -> list[range]:
    """Split ``range(count)`` into ``workers`` contiguous ranges whose sizes differ by at most one."""
    if count < 0 or workers < 1:
        raise ValueError("need count >= 0 and workers >= 1")
    base, extra = divmod(count, workers)
    out, start = [], 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def resolve_workers(workers: int) -> int:
    """``0`` means one worker per hardware thread."""
    if workers < 0:
        raise ValueError("workers must be >= 0")
    return workers or os.cpu_count() or 1


class ParallelExecutor:
    name = "parallel"

    def __init__(self, workers: int, debug: bool = False):
        self.workers = resolve_workers(workers)
        self.debug = debug
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def _split(self, ids: Sequence[int], count: int) -> list[Sequence[int]]:
        parts = []
        for r in partition_entities(count, self.workers):
            lo = bisect.bisect_left(ids, r.start)
            hi = bisect.bisect_left(ids, r.stop)
            parts.append(ids[lo:hi])
        return parts

    def _run(self, fn: Callable, chunks: Sequence) -> list:
        if self._pool is None:
            return [fn(c) for c in chunks]
        return list(self._pool.map(fn, chunks))

    def map(self, kernel: Callable, world: World, ids: Sequence[int], count: int) -> list:
        ids = list(ids)
        before = world.fingerprint() if self.debug else None
        buffers = self._run(lambda part: kernel(world, part), self._split(ids, count))
        if self.debug and world.fingerprint() != before:
            raise IsolationError(f"{kernel.__name__} mutated world state during step {world.step_index}")
        merged = [rec for buf in buffers for rec in buf]
        merged.sort(key=lambda rec: rec[0])
        return merged

    def commit_maco(self, world: World) -> None:
        vids = sorted(world.decisions)
        records = self.map(pheromone_records, world, vids, len(world.vehicles))
        world.field = maco_update_batch(world.field, [(edge, others) for _, edge, others in records],
                                        world.config.pheromone)

    def evaporate(self, world: World) -> None:
        params = world.config.pheromone
        if params.rho == 0:
            return
        levels = world.field.levels
        ranges = partition_entities(len(levels), self.workers)
        slices = self._run(lambda r: evaporate_levels(levels[r.start:r.stop], params), ranges)
        world.field = PheromoneField(np.concatenate(slices) if slices else levels)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def parallel_run(config: SimConfig, workers: int, debug: bool = False, check: bool = False,
                 trace: Callable[[World], None] | None = None) -> RunResult:
    """Run ``config`` with the staged multi-worker executor.

    The result equals :func:`macosim.engine.run` for the same config in every
    field except ``wall_clock_ms``.
    """
    if workers < 0:
        raise ValueError("workers must be >= 0")
    return simulate(config, ParallelExecutor(workers, debug=debug), check=check, trace=trace)
