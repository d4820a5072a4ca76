"""Numpy implementation of the trajectory sampler.

Bit-for-bit identical to the compiled ``_core`` module: the same
counter-based uniforms, the same inverse-CDF rule and the same order of
floating-point additions per replication.
"""

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = (np.uint64(v) for v in (30, 27, 31, 11))
_SCALE = 2.0 ** -53

CHUNK = 65536


def mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def unit(z: np.ndarray) -> np.ndarray:
    return (z >> _S11).astype(np.float64) * _SCALE


def simulate_sums(cum, regime, values, init_cum, seed, rep_start, rep_stop):
    nsteps = regime.shape[0]
    out = np.empty(rep_stop - rep_start)
    offsets = [np.uint64(((t + 1) * GOLDEN) & MASK) for t in range(nsteps + 1)]
    seed = np.uint64(seed & MASK)
    for c0 in range(rep_start, rep_stop, CHUNK):
        c1 = min(c0 + CHUNK, rep_stop)
        reps = np.arange(c0 + 1, c1 + 1, dtype=np.uint64)
        base = mix64(seed + reps * np.uint64(GOLDEN))
        u = unit(mix64(base + offsets[0]))
        x = (u[:, None] >= init_cum[None, :]).sum(axis=1)
        s = values[0, x].copy()
        for i in range(nsteps):
            u = unit(mix64(base + offsets[i + 1]))
            rows = cum[regime[i]][x]
            x = (u[:, None] >= rows).sum(axis=1)
            s += values[i + 1, x]
        out[c0 - rep_start:c1 - rep_start] = s
    return out
