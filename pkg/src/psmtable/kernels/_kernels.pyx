# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled raw-draw kernel: indexed SplitMix64, one u64 per draw."""

import numpy as np

ctypedef unsigned long long u64

cdef u64 GAMMA = <u64> 0x9E3779B97F4A7C15
cdef u64 SALT = <u64> 0xD1B54A32D192ED03
cdef u64 M1 = <u64> 0xBF58476D1CE4E5B9
cdef u64 M2 = <u64> 0x94D049BB133111EB

BACKEND = "cython"


def raw_block(seed, stream, j0, n):
    """Draws j0..j0+n of the indexed SplitMix64 stream as uint64."""
    cdef Py_ssize_t count = n
    out = np.empty(count, dtype=np.uint64)
    if count == 0:
        return out
    cdef u64[::1] view = out
    cdef u64 base = <u64> seed
    cdef u64 salt_term = SALT * ((<u64> stream) + 1)
    cdef u64 start = <u64> j0
    cdef u64 z
    cdef Py_ssize_t i
    with nogil:
        for i in range(count):
            z = base + GAMMA * (start + (<u64> i) + 1) + salt_term
            z ^= z >> 30
            z *= M1
            z ^= z >> 27
            z *= M2
            z ^= z >> 31
            view[i] = z
    return out
