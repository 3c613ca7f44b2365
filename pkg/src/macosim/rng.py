"""Counter-based random draws.

Every draw is a pure function of its key: ``(seed, purpose)`` selects a Philox
key and the entity/step pair selects the counter.  Nothing here carries state
between calls, so draws do not depend on which worker or in which order they
are requested.
"""

from __future__ import annotations

import numpy as np

# purpose tags; part of the Philox key
PHEROMONE_INIT = 1
SPAWN_OD = 2
SPAWN_SPEED = 3
SPAWN_TIME = 4
SPAWN_DEMAND = 5
ACO_CHOICE = 6
NETWORK_LAYOUT = 7

_MASK64 = (1 << 64) - 1
_TO_UNIT = 1.0 / (1 << 53)


def _key(seed: int, purpose: int) -> int:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return ((seed & _MASK64) << 64) | (purpose & _MASK64)


def uniform_stream(seed: int, purpose: int, n: int) -> np.ndarray:
    """Return ``n`` uniforms on [0, 1); element ``i`` depends only on (seed, purpose, i)."""
    gen = np.random.Generator(np.random.Philox(key=_key(seed, purpose)))
    return gen.random(n)


def keyed_uniform(seed: int, purpose: int, entity: int, step: int = 0) -> float:
    """Single uniform on [0, 1) addressed by (seed, purpose, entity, step)."""
    bitgen = np.random.Philox(key=_key(seed, purpose), counter=[entity, step, 0, 0])
    return (int(bitgen.random_raw()) >> 11) * _TO_UNIT
