"""Exact laws, moments and martingale decomposition of ``S_n = sum f_i(X_i)``.

Everything here is deterministic linear algebra over the finite state space;
no sampling. Long series are handled with forward/backward recursions that
cost ``O(n k^2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .schedule import CENTER_TOL, Schedule, Segment, series_coefficients


class ExactEngineError(ValueError):
    pass


def _steps(s: Schedule):
    """Yield ``(i, rows)`` for each transition ``X_i -> X_{i+1}``."""
    for seg in s.segments:
        rows = seg.kernel.rows
        for i in range(seg.start, seg.stop + 1):
            yield i, rows


def _steps_reversed(s: Schedule):
    for seg in reversed(s.segments):
        rows = seg.kernel.rows
        for i in range(seg.stop, seg.start - 1, -1):
            yield i, rows


def _require_centered(s: Schedule, what: str):
    if not s.is_centered(CENTER_TOL):
        raise ExactEngineError(f"{what} needs a centered schedule (E f_i(X_i) = 0)")


# -- marginals and moments --------------------------------------------------

@dataclass(frozen=True, eq=False)
class MarginalTable:
    laws: np.ndarray  # row i-1 is the law of X_i

    def __getitem__(self, i: int) -> np.ndarray:
        """Law of ``X_i`` (1-based)."""
        return self.laws[i - 1]

    def __len__(self):
        return self.laws.shape[0]


def marginals(s: Schedule) -> MarginalTable:
    return MarginalTable(s.marginal_array)


class MeanVar(NamedTuple):
    ESn: float
    DSn: float
    per_step_var: np.ndarray


def exact_mean_var(s: Schedule) -> MeanVar:
    """Exact mean and variance of ``S_n`` and the per-step variances.

    Uses ``h_i(x) = E[sum_{j>i} f_j(X_j) | X_i = x]`` so that
    ``D(S_n) = sum_i D(f_i(X_i)) + 2 sum_i E[(f_i - E f_i)(X_i) h_i(X_i)]``.
    """
    F = s.observable_table
    nu = s.marginal_array
    means = np.einsum("ik,ik->i", nu, F)
    dev = F - means[:, None]
    per_var = np.einsum("ik,ik->i", nu, dev * dev)
    cov = np.zeros(s.n)
    h = np.zeros(s.size)
    for i, rows in _steps_reversed(s):
        h = rows @ (F[i] + h)
        cov[i - 1] = nu[i - 1] @ (dev[i - 1] * h)
    ESn = math.fsum(means)
    DSn = math.fsum(per_var) + 2.0 * math.fsum(cov)
    return MeanVar(ESn, max(DSn, 0.0), per_var)


def window(s: Schedule, a: int, b: int) -> Schedule:
    """Sub-chain ``X_a..X_b`` started from the exact law of ``X_a``.

    Observables are taken as they are in ``s`` (already centered if ``s``
    centers them) and are not re-centered.
    """
    if not 1 <= a <= b <= s.n:
        raise ExactEngineError(f"need 1 <= a <= b <= n, got a={a}, b={b}")
    segs = []
    for seg in s.segments:
        lo, hi = max(seg.start, a), min(seg.stop, b - 1)
        if lo <= hi:
            segs.append(Segment(lo - a + 1, hi - a + 1, seg.kernel))
    law = s.marginal_array[a - 1]
    law = law / law.sum()
    return Schedule(b - a + 1, law, tuple(segs), s.observable_table[a - 1:b],
                    False, f"{s.name}[{a}:{b}]", dict(s.params))


def partial_variance(s: Schedule, a: int, b: int) -> float:
    """Exact ``D(sum_{i=a}^b f_i(X_i))``."""
    return exact_mean_var(window(s, a, b)).DSn


# -- martingale decomposition -----------------------------------------------

@dataclass(frozen=True, eq=False)
class MartingaleDecomposition:
    """``S_n = sum_{k>=2} (Z_k - E[Z_k | X_{k-1}]) + Z_1``.

    ``Z[k-1, x]`` is ``Z_k`` evaluated at ``X_k = x``. ``xi_var[k-2]`` is
    ``D(Z_k - E[Z_k | X_{k-1}])`` for ``k = 2..n``; ``cond_var[k-2, x]`` is the
    same variance conditional on ``X_{k-1} = x`` (before dividing by
    ``DSn``). ``xi_sup[k-2]`` bounds ``|Z_k - E[Z_k | X_{k-1}]|`` over
    reachable values.
    """

    Z: np.ndarray
    xi_var: np.ndarray
    cond_var: np.ndarray
    xi_sup: np.ndarray
    Z1_var: float
    DSn: float
    ESn: float

    @property
    def total(self) -> float:
        return math.fsum(self.xi_var) + self.Z1_var

    def normalized_increment_sup(self) -> float:
        """``max_k ||xi_k||`` with increments scaled by ``1/sqrt(D(S_n))``."""
        if self.xi_sup.size == 0:
            return 0.0
        return float(self.xi_sup.max() / math.sqrt(self.DSn))

    def conditional_variance_sum(self, nu: np.ndarray) -> float:
        """``E sum_k v_k`` with ``v_k = E[xi_k^2 | X_{k-1}]``; equals ``1 - Z1_var/DSn``."""
        return math.fsum(np.einsum("ik,ik->i", nu[:-1], self.cond_var)) / self.DSn


def martingale_decomposition(s: Schedule, rtol: float = 1e-8) -> MartingaleDecomposition:
    """Martingale-difference decomposition of a centered schedule.

    ``Z_k = f_k + P_{k,k+1} Z_{k+1}`` with ``Z_n = f_n``. Raises if the
    variance identity fails beyond ``rtol``.
    """
    _require_centered(s, "martingale_decomposition")
    F = s.observable_table
    nu = s.marginal_array
    n, k = F.shape
    Z = np.empty((n, k))
    Z[n - 1] = F[n - 1]
    cond_var = np.zeros((max(n - 1, 0), k))
    xi_var = np.zeros(max(n - 1, 0))
    xi_sup = np.zeros(max(n - 1, 0))
    for i, rows in _steps_reversed(s):
        # transition i takes X_i to X_{i+1}; increment index k = i + 1
        z_next = Z[i]
        H = rows @ z_next
        dev = z_next[None, :] - H[:, None]
        cv = np.einsum("xy,xy->x", rows, dev * dev)
        cond_var[i - 1] = cv
        xi_var[i - 1] = math.fsum(nu[i - 1] * cv)
        reach = (nu[i - 1] > 0.0)[:, None] & (rows > 0.0)
        xi_sup[i - 1] = np.abs(dev[reach]).max() if reach.any() else 0.0
        Z[i - 1] = F[i - 1] + H
    EZ1 = nu[0] @ Z[0]
    Z1_var = math.fsum(nu[0] * (Z[0] - EZ1) ** 2)
    ESn, DSn, _ = exact_mean_var(s)
    dec = MartingaleDecomposition(Z, xi_var, cond_var, xi_sup, Z1_var, DSn, ESn)
    err = abs(dec.total - DSn)
    if err > rtol * max(DSn, 1.0) and err > 1e-12:
        raise ExactEngineError(
            f"decomposition identity failed: sum of increment variances {dec.total!r} "
            f"vs D(S_n) {DSn!r}"
        )
    return dec


def increment_mean_residual(s: Schedule, dec: MartingaleDecomposition | None = None) -> float:
    """Largest ``|sum_y P(x,y) (Z_k(y) - (P Z_k)(x))|`` over ``k`` and ``x``."""
    dec = dec or martingale_decomposition(s)
    worst = 0.0
    for i, rows in _steps(s):
        z = dec.Z[i]
        H = rows @ z
        resid = np.einsum("xy,xy->x", rows, z[None, :] - H[:, None])
        worst = max(worst, float(np.abs(resid).max()))
    return worst


# -- exact law of S_n --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SumDistribution:
    """Law of ``S_n`` on the lattice ``lattice_offset + lattice_step * j``."""

    lattice_offset: float
    lattice_step: float
    masses: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.lattice_offset + self.lattice_step * np.arange(self.masses.size)

    def mean(self) -> float:
        return self.lattice_offset + self.lattice_step * math.fsum(
            np.arange(self.masses.size) * self.masses)

    def var(self) -> float:
        j = np.arange(self.masses.size)
        mj = math.fsum(j * self.masses)
        return self.lattice_step ** 2 * math.fsum((j - mj) ** 2 * self.masses)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.masses)

    def ks_to_normal(self, mean: float | None = None, sd: float | None = None) -> float:
        """Exact sup-distance between the law of ``(S_n - mean)/sd`` and N(0, 1)."""
        from .montecarlo import normal_cdf

        mean = self.mean() if mean is None else mean
        sd = math.sqrt(self.var()) if sd is None else sd
        if sd <= 0.0:
            raise ExactEngineError("degenerate law: zero variance")
        keep = self.masses > 0.0
        z = (self.values[keep] - mean) / sd
        m = self.masses[keep]
        upper = np.cumsum(m)
        lower = upper - m
        phi = normal_cdf(z)
        return float(max(np.abs(upper - phi).max(), np.abs(lower - phi).max()))

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lattice_value", "mass"])
            for v, m in zip(self.values, self.masses):
                w.writerow([repr(float(v)), repr(float(m))])


def _lattice(table: np.ndarray, tol: float = 1e-9):
    base = table.min(axis=1)
    diffs = table - base[:, None]
    positive = diffs[diffs > tol]
    if positive.size == 0:
        return base, 1.0, np.zeros(table.shape, dtype=np.int64)
    dmin = positive.min()
    for q in range(1, 17):
        step = dmin / q
        ratio = diffs / step
        idx = np.rint(ratio)
        if np.all(np.abs(diffs - idx * step) <= tol * max(step, 1.0)):
            return base, step, idx.astype(np.int64)
    raise ExactEngineError("observables do not take values on a common lattice")


def sum_distribution(s: Schedule, max_lattice: int = 10 ** 7) -> SumDistribution:
    """Exact law of ``S_n`` by dynamic programming over (state, partial sum).

    The work is ``n`` times the lattice size; it must stay under
    ``max_lattice``.
    """
    F = s.observable_table
    base, step, idx = _lattice(np.asarray(F))
    width = int(idx.max(axis=1).sum()) + 1
    if s.n * width > max_lattice:
        raise ExactEngineError(
            f"lattice budget exceeded: n * support = {s.n * width} > {max_lattice}"
        )
    k = s.size
    M = np.zeros((k, width))
    M[np.arange(k), idx[0]] = s.initial_law
    reach = int(idx[0].max()) + 1
    for i, rows in _steps(s):
        T = rows.T @ M[:, :reach]
        shift = idx[i]
        grow = int(shift.max())
        M[:, :reach + grow] = 0.0
        for y in range(k):
            M[y, shift[y]:shift[y] + reach] = T[y]
        reach += grow
    masses = M.sum(axis=0)
    return SumDistribution(math.fsum(base), float(step), masses)


# -- checks of the auxiliary bounds -----------------------------------------

@dataclass
class CheckReport:
    check: str
    n: int
    max_violation: float
    slack: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "check": self.check,
            "n": self.n,
            "max_violation": self.max_violation,
            "slack": self.slack,
            "pass": self.passed,
        }
        out.update(self.details)
        return out


VIOLATION_TOL = 1e-10
LEMMA1_CASES = ("sup", "osc_sq", "a", "b", "c", "d")


def _decay(d: int, a1: float, a2: float) -> float:
    """Bound on ``delta(P_{i,i+d})`` from the one- and two-step coefficients."""
    out = (1.0 - a2) ** (d // 2)
    return out * (1.0 - a1) if d % 2 else out


def random_triples(n: int, trials: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """``trials`` triples ``1 <= l < i <= j <= n``."""
    if n < 2:
        raise ExactEngineError("need n >= 2 for triples")
    out = []
    for _ in range(trials):
        l = int(rng.integers(1, n))
        i = int(rng.integers(l + 1, n + 1))
        j = int(rng.integers(i, n + 1))
        out.append((l, i, j))
    return out


def check_lemma1(s: Schedule, trials: int = 500, seed: int = 0,
                 triples: Sequence[tuple[int, int, int]] | None = None) -> CheckReport:
    """Evaluate the six oscillation bounds at random triples ``l < i <= j``.

    For each triple: ``||P_{i,j} f_j||`` and ``Osc(P_{i,j} f_j^2)`` against
    ``2C`` and ``2C^2`` times the decay factor of ``j - i``, and
    ``Osc(P_{l,i}(f_i * P_{i,j} f_j))`` against ``6C^2`` times the decay
    factors of ``i - l`` and ``j - i``; the product case is (a)..(d) by the
    parities of ``i - l`` and ``j - i``. Passes iff no left side exceeds its
    bound by more than ``1e-10``.
    """
    _require_centered(s, "check_lemma1")
    coeffs = series_coefficients(s)
    a1, a2 = coeffs.alpha_n, coeffs.alpha2_n
    if math.isnan(a2):
        a2 = 0.0
    C = s.sup_bound
    F = s.observable_table
    if triples is None:
        triples = random_triples(s.n, trials, np.random.default_rng(seed))
    worst = {c: -math.inf for c in LEMMA1_CASES}
    counts = {c: 0 for c in LEMMA1_CASES}
    first_bad = None
    for l, i, j in triples:
        P_ij = s.transition(i, j).rows
        P_li = s.transition(l, i).rows
        fj = F[j - 1]
        g = P_ij @ fj
        r_ij = _decay(j - i, a1, a2)
        r_li = _decay(i - l, a1, a2)
        prod_case = "ab"[(i - l) % 2] if (j - i) % 2 == 0 else "cd"[(i - l) % 2]
        items = (
            ("sup", float(np.abs(g).max()), 2.0 * C * r_ij),
            ("osc_sq", float(np.ptp(P_ij @ (fj * fj))), 2.0 * C * C * r_ij),
            (prod_case, float(np.ptp(P_li @ (F[i - 1] * g))), 6.0 * C * C * r_li * r_ij),
        )
        for case, lhs, bound in items:
            counts[case] += 1
            v = lhs - bound
            if v > worst[case]:
                worst[case] = v
            if v > VIOLATION_TOL and first_bad is None:
                first_bad = {"case": case, "l": l, "i": i, "j": j, "lhs": lhs, "bound": bound}
    max_v = max(worst.values())
    details = {
        "alpha_n": a1,
        "alpha2_n": a2,
        "C_n": C,
        "cases": {c: {"count": counts[c],
                      "max_violation": None if counts[c] == 0 else worst[c]}
                  for c in LEMMA1_CASES},
    }
    if first_bad:
        details["first_violation"] = first_bad
    return CheckReport("lemma1", s.n, max_v, -max_v, max_v <= VIOLATION_TOL, details)


def check_lemma2(s: Schedule, dec: MartingaleDecomposition | None = None) -> CheckReport:
    """``max_k ||Z_k|| <= 4C / (1 - sqrt(1 - alpha_n^(2)))``.

    Also reports the ratio of ``max_k ||Z_k||`` to the cruder ``8C/alpha_n^(2)``.
    """
    a2 = series_coefficients(s).alpha2_n
    if not a2 > 0.0:
        raise ExactEngineError("check_lemma2 needs alpha_n^(2) > 0")
    dec = dec or martingale_decomposition(s)
    C = s.sup_bound
    zmax = float(np.abs(dec.Z).max())
    bound = 4.0 * C / (1.0 - math.sqrt(1.0 - a2))
    v = zmax - bound
    return CheckReport("lemma2", s.n, v, bound - zmax, v <= VIOLATION_TOL, {
        "max_Z": zmax,
        "bound": bound,
        "ratio_to_8C_over_alpha2": zmax / (8.0 * C / a2) if C > 0 else 0.0,
        "alpha2_n": a2,
    })


def check_prop3(s: Schedule) -> CheckReport:
    """``D(S_n) >= (alpha_n / 4) * sum_i D(f_i(X_i))``."""
    a1 = series_coefficients(s).alpha_n
    if math.isnan(a1):
        a1 = 1.0
    _, DSn, per_var = exact_mean_var(s)
    rhs = a1 / 4.0 * math.fsum(per_var)
    slack = DSn - rhs
    return CheckReport("prop3", s.n, -slack, slack, slack >= -VIOLATION_TOL,
                       {"DSn": DSn, "bound": rhs, "alpha_n": a1})


@dataclass(frozen=True, eq=False)
class Lemma4Decay:
    """Oscillation over reachable ``X_{l-1}`` of ``E[sum_{j>l} v_j | X_{l-1}]``.

    ``osc[l-2]`` is the value at ``l`` for ``l = 2..n-1``.
    """

    osc: np.ndarray
    DSn: float

    def __array__(self, dtype=None, copy=None):
        return self.osc if dtype is None else self.osc.astype(dtype)

    def max(self) -> float:
        return float(self.osc.max()) if self.osc.size else 0.0


def conditional_tail_variance(s: Schedule) -> np.ndarray:
    """``W[l-1, x] = D(sum_{j>l} f_j(X_j) | X_l = x)`` for ``l = 1..n``."""
    F = s.observable_table
    n, k = F.shape
    W = np.zeros((n, k))
    h = np.zeros(k)
    for i, rows in _steps_reversed(s):
        g = F[i] + h  # E[sum_{j>i} f_j | X_{i+1}]
        h_new = rows @ g
        dev = g[None, :] - h_new[:, None]
        W[i - 1] = rows @ W[i] + np.einsum("xy,xy->x", rows, dev * dev)
        h = h_new
    return W


def lemma4_decay(s: Schedule) -> Lemma4Decay:
    """For each ``l``, the oscillation of ``E[sum_{j=l+1}^n v_j | X_{l-1}]``.

    The conditional expectation equals
    ``(P_{l-1,l} W_l)(x) / D(S_n)`` with ``W_l = D(sum_{j>l} f_j | X_l)``.
    """
    _require_centered(s, "lemma4_decay")
    _, DSn, _ = exact_mean_var(s)
    if DSn <= 0.0:
        raise ExactEngineError("lemma4_decay needs D(S_n) > 0")
    W = conditional_tail_variance(s)
    nu = s.marginal_array
    out = np.zeros(max(s.n - 2, 0))
    for l in range(2, s.n):
        G = s.kernel_at(l - 1).rows @ W[l - 1]
        live = nu[l - 2] > 0.0
        out[l - 2] = np.ptp(G[live]) / DSn
    return Lemma4Decay(out, DSn)
