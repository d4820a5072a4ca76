"""Brute-force reference computations and random instance generators.

These are exponential or quadratic on purpose: they follow the definitions
literally and are only meant to cross-check the fast paths on small inputs.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np

from .kernel import Kernel
from .schedule import Schedule, from_kernels


# -- random instances ---------------------------------------------------------

def random_kernel(rng: np.random.Generator, size: int, zero_prob: float = 0.3) -> Kernel:
    """Random kernel with some zero entries; rows normalised in floating point."""
    rows = rng.exponential(size=(size, size))
    rows[rng.random((size, size)) < zero_prob] = 0.0
    for x in range(size):
        if rows[x].sum() == 0.0:
            rows[x, rng.integers(size)] = 1.0
    rows /= rows.sum(axis=1, keepdims=True)
    return Kernel(rows)


def dyadic_kernel(rng: np.random.Generator, size: int, bits: int = 20) -> Kernel:
    """Random kernel whose entries are multiples of ``2**-bits`` summing exactly to 1.

    Every sum or difference of entries is exact in double precision, so
    different but equivalent formulas give bit-identical results.
    """
    total = 1 << bits
    rows = np.empty((size, size))
    for x in range(size):
        cuts = np.sort(rng.integers(0, total + 1, size=size - 1))
        parts = np.diff(np.concatenate(([0], cuts, [total])))
        rows[x] = parts / total
    return Kernel(rows)


def random_schedule(rng: np.random.Generator, size: int, n: int,
                    distinct: int | None = None, center: bool = True) -> Schedule:
    """Inhomogeneous schedule with random kernels, observable values and start."""
    pool = [random_kernel(rng, size) for _ in range(distinct or max(n - 1, 1))]
    kernels = [pool[int(rng.integers(len(pool)))] for _ in range(n - 1)]
    law = rng.exponential(size=size)
    law /= law.sum()
    obs = rng.normal(size=(n, size))
    return from_kernels(kernels, obs, law, center)


def random_lattice_schedule(rng: np.random.Generator, size: int, n: int,
                            center: bool = True) -> Schedule:
    """Like :func:`random_schedule` but with integer-valued observables."""
    s = random_schedule(rng, size, n, center=center)
    obs = rng.integers(-2, 3, size=(n, size)).astype(float)
    return s.with_observable(obs)


# -- coefficient oracle ---------------------------------------------------------

def subset_delta(k: Kernel) -> float:
    """``sup_{x1, x2, A} |P(x1, A) - P(x2, A)|`` over all subsets ``A``."""
    size = k.size
    best = 0.0
    rows = k.rows
    for mask in range(1 << size):
        members = [y for y in range(size) if mask >> y & 1]
        mass = [math.fsum(rows[x, members]) for x in range(size)]
        best = max(best, max(mass) - min(mass))
    return best


# -- path enumeration -----------------------------------------------------------

def enumerate_paths(s: Schedule, limit: int = 200_000):
    """All state paths with positive probability, with their probabilities."""
    if s.size ** s.n > limit:
        raise ValueError(f"{s.size}^{s.n} paths exceed the enumeration limit {limit}")
    kernels = [s.kernel_at(i).rows for i in range(1, s.n)]
    paths, probs = [], []
    for path in itertools.product(range(s.size), repeat=s.n):
        p = s.initial_law[path[0]]
        for i in range(s.n - 1):
            if p == 0.0:
                break
            p *= kernels[i][path[i], path[i + 1]]
        if p > 0.0:
            paths.append(path)
            probs.append(p)
    return np.array(paths, dtype=int).reshape(-1, s.n), np.array(probs)


def path_sums(s: Schedule, paths: np.ndarray) -> np.ndarray:
    F = s.observable_table
    return F[np.arange(s.n)[None, :], paths].sum(axis=1)


def path_marginals(s: Schedule) -> np.ndarray:
    paths, probs = enumerate_paths(s)
    out = np.zeros((s.n, s.size))
    for i in range(s.n):
        np.add.at(out[i], paths[:, i], probs)
    return out


def path_mean_var(s: Schedule) -> tuple[float, float]:
    paths, probs = enumerate_paths(s)
    S = path_sums(s, paths)
    mean = math.fsum(probs * S)
    return mean, math.fsum(probs * (S - mean) ** 2)


def path_sum_law(s: Schedule, decimals: int = 9) -> dict[float, float]:
    paths, probs = enumerate_paths(s)
    law: dict[float, float] = defaultdict(float)
    for v, p in zip(path_sums(s, paths), probs):
        law[round(float(v), decimals)] += p
    return dict(law)


def naive_mean_var(s: Schedule) -> tuple[float, float]:
    """``D(S_n)`` from all pairwise covariances (``O(n^2)`` kernel products)."""
    F = s.observable_table
    nu = s.marginal_array
    means = np.einsum("ik,ik->i", nu, F)
    terms = []
    for i in range(s.n):
        di = F[i] - means[i]
        terms.append(nu[i] @ (di * di))
        joint = np.eye(s.size)
        for j in range(i + 1, s.n):
            joint = joint @ s.kernel_at(j).rows
            dj = F[j] - means[j]
            terms.append(2.0 * (nu[i] * di) @ joint @ dj)
    return math.fsum(means), math.fsum(terms)


def definitional_Z(s: Schedule) -> np.ndarray:
    """``Z_k = sum_{i >= k} P_{k,i} f_i`` term by term."""
    F = s.observable_table
    Z = np.zeros((s.n, s.size))
    for k in range(1, s.n + 1):
        for i in range(k, s.n + 1):
            Z[k - 1] += s.transition(k, i).rows @ F[i - 1]
    return Z


def path_increment_variances(s: Schedule) -> tuple[np.ndarray, float]:
    """``D(Z_k - E[Z_k | X_{k-1}])`` for ``k = 2..n`` and ``D(Z_1)`` by enumeration."""
    paths, probs = enumerate_paths(s)
    Z = definitional_Z(s)
    xi = []
    for k in range(2, s.n + 1):
        H = s.kernel_at(k - 1).rows @ Z[k - 1]
        inc = Z[k - 1][paths[:, k - 1]] - H[paths[:, k - 2]]
        m = math.fsum(probs * inc)
        xi.append(math.fsum(probs * (inc - m) ** 2))
    z1 = Z[0][paths[:, 0]]
    m1 = math.fsum(probs * z1)
    return np.array(xi), math.fsum(probs * (z1 - m1) ** 2)


def path_lemma4(s: Schedule, l: int) -> np.ndarray:
    """``E[(T_l - E[T_l | X_l])^2 | X_{l-1} = x] / D(S_n)`` with ``T_l = sum_{j>l} f_j``.

    Entries for unreachable ``x`` are ``nan``.
    """
    paths, probs = enumerate_paths(s)
    F = s.observable_table
    T = F[np.arange(l, s.n)[None, :], paths[:, l:]].sum(axis=1)
    cond_T = np.zeros(s.size)
    for y in range(s.size):
        sel = paths[:, l - 1] == y
        if probs[sel].sum() > 0:
            cond_T[y] = math.fsum(probs[sel] * T[sel]) / math.fsum(probs[sel])
    resid = (T - cond_T[paths[:, l - 1]]) ** 2
    _, DSn = path_mean_var(s)
    out = np.full(s.size, np.nan)
    for x in range(s.size):
        sel = paths[:, l - 2] == x
        if probs[sel].sum() > 0:
            out[x] = math.fsum(probs[sel] * resid[sel]) / math.fsum(probs[sel]) / DSn
    return out
