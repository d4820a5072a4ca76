# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trajectory sampler; see ``_fallback`` for the reference semantics."""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint64_t

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double unit(uint64_t z) noexcept nogil:
    return <double>(z >> 11) * (1.0 / 9007199254740992.0)


def simulate_sums(const double[:, :, ::1] cum, const int32_t[::1] regime,
                  const double[:, ::1] values, const double[::1] init_cum,
                  uint64_t seed, int64_t rep_start, int64_t rep_stop):
    """Raw sums ``sum_i values[i, X_i]`` for replications ``rep_start..rep_stop-1``."""
    cdef Py_ssize_t nsteps = regime.shape[0]
    cdef Py_ssize_t i
    cdef int64_t r
    cdef uint64_t base
    cdef double u, s
    cdef int x
    cdef const double *row
    out = np.empty(rep_stop - rep_start, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for r in range(rep_start, rep_stop):
            base = mix64(seed + <uint64_t>(r + 1) * GOLDEN)
            u = unit(mix64(base + GOLDEN))
            x = 0
            while u >= init_cum[x]:
                x += 1
            s = values[0, x]
            for i in range(nsteps):
                u = unit(mix64(base + <uint64_t>(i + 2) * GOLDEN))
                row = &cum[regime[i], x, 0]
                x = 0
                while u >= row[x]:
                    x += 1
                s += values[i + 1, x]
            o[r - rep_start] = s
    return out
