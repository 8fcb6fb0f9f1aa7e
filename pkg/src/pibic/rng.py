"""Counter-based random streams.

Every stream is a Philox generator keyed by the user seed. The high words of
the 256-bit counter carry a purpose tag and a block (or replicate) index, so
streams never overlap and the draws for block ``b`` do not depend on how many
workers produced the other blocks.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# purpose tags
LAW = 1
DATA = 2
BOOTSTRAP = 3
STABLE = 4
SECONDARY = 5


def stream(seed: int, index: int, tag: int = LAW) -> np.random.Generator:
    """Generator for block/replicate ``index`` of the ``tag`` family under ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    key = [seed & _MASK64, (seed >> 64) & _MASK64]
    counter = [0, 0, tag & _MASK64, index & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def block_slices(reps: int, block: int):
    """Yield ``(block_index, start, stop)`` covering ``range(reps)``."""
    for b, start in enumerate(range(0, reps, block)):
        yield b, start, min(start + block, reps)
