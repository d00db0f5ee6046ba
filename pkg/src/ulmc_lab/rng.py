"""Counter-based random streams.

Every random draw in the library comes from a Philox generator whose key is
``(seed, block)`` and whose counter encodes ``(step, purpose)``.  Chains are
grouped into blocks of fixed size :data:`CHAIN_BLOCK`, so the draws seen by a
given chain depend only on the master seed, the chain index and the step
index, never on how blocks are scheduled across threads.
"""

from __future__ import annotations

import numpy as np

CHAIN_BLOCK = 1024

# purpose tags occupy the top counter word
STEP_NOISE = 0
INIT_DRAW = 1
PATH_NOISE = 2
VALIDATOR = 3
BOOTSTRAP = 4

_MASK64 = (1 << 64) - 1


def stream(seed: int, block: int, step: int, purpose: int = STEP_NOISE) -> np.random.Generator:
    """Generator for one (seed, block, step, purpose) cell."""
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    key = np.array([seed & _MASK64, int(block) & _MASK64], dtype=np.uint64)
    counter = np.array([0, 0, int(step) & _MASK64, int(purpose) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def blocks(n: int, size: int = CHAIN_BLOCK):
    """Yield ``(block_index, start, stop)`` covering ``range(n)``."""
    for b, start in enumerate(range(0, n, size)):
        yield b, start, min(start + size, n)
