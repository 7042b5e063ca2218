"""Vectorized numpy implementation of the raw-draw kernel.

Kept bit-identical to the compiled kernel; uint64 arithmetic wraps
mod 2**64 on both sides.
"""

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
SALT = 0xD1B54A32D192ED03
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

BACKEND = "numpy"


def raw_block(seed: int, stream: int, j0: int, n: int) -> np.ndarray:
    """Draws j0..j0+n of the indexed SplitMix64 stream as uint64."""
    if n == 0:
        return np.empty(0, dtype=np.uint64)
    # scalar prefix in python ints: numpy warns on scalar uint64 overflow
    base = (seed + GAMMA * (j0 + 1) + SALT * (stream + 1)) & _MASK
    z = np.uint64(base) + np.uint64(GAMMA) * np.arange(n, dtype=np.uint64)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z
