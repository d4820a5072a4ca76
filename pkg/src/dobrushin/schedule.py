"""One row of a triangular array: kernels, initial law and observables.

Kernels are stored as runs of identical matrices (``Segment``), so a series
of length ``2**24`` with one kernel costs a single matrix, and coefficient
sweeps touch each distinct kernel (or kernel pair) once.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernel import (
    BoundedFunction,
    Kernel,
    KernelError,
    StateSpace,
    check_probability,
    compose,
    kernel_from_dict,
    load_kernel,
    matrix_power,
    md_delta,
    two_state,
)

CENTER_TOL = 1e-10


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Segment:
    """Transitions ``start..stop`` (inclusive, 1-based) all use ``kernel``."""

    start: int
    stop: int
    kernel: Kernel

    @property
    def length(self) -> int:
        return self.stop - self.start + 1


@dataclass(frozen=True, eq=False)
class Schedule:
    """A chain ``X_1..X_n`` with kernels ``P_{i,i+1}`` and observables ``f_i``.

    ``observable`` is either one function of the state (shape ``(k,)``) used
    at every step, or a per-step table of shape ``(n, k)``. With
    ``center=True`` the observables seen through :meth:`observable_at` are
    shifted by their exact means, so that ``E f_i(X_i) = 0``.
    """

    n: int
    initial_law: np.ndarray
    segments: tuple[Segment, ...]
    observable: np.ndarray
    center: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ScheduleError(f"series length must be >= 1, got {n}")
        object.__setattr__(self, "n", n)
        segs = tuple(self.segments)
        expected = 1
        for seg in segs:
            if seg.start != expected or seg.stop < seg.start:
                raise ScheduleError(
                    f"segments must tile transitions 1..{n - 1} in order; "
                    f"got [{seg.start}, {seg.stop}] where {expected} was expected"
                )
            expected = seg.stop + 1
        if expected != n:
            raise ScheduleError(f"segments cover transitions 1..{expected - 1}, need 1..{n - 1}")
        if segs:
            size = segs[0].kernel.size
            if any(seg.kernel.size != size for seg in segs):
                raise ScheduleError("all kernels must share one state space")
        else:
            size = np.asarray(self.initial_law).size
        try:
            law = check_probability(self.initial_law, size)
        except KernelError as exc:
            raise ScheduleError(f"initial law: {exc}") from None
        law = law.copy()
        law.setflags(write=False)
        obs = np.array(self.observable, dtype=float)
        if obs.shape not in ((size,), (n, size)):
            raise ScheduleError(
                f"observable must have shape ({size},) or ({n}, {size}), got {obs.shape}"
            )
        if not np.all(np.isfinite(obs)):
            raise ScheduleError("observable values must be finite")
        obs.setflags(write=False)
        object.__setattr__(self, "initial_law", law)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "observable", obs)
        object.__setattr__(self, "_starts", [seg.start for seg in segs])

    # -- structure ----------------------------------------------------------

    @property
    def size(self) -> int:
        return self.initial_law.size

    @property
    def space(self) -> StateSpace:
        return self.segments[0].kernel.space if self.segments else StateSpace(self.size)

    def kernel_at(self, i: int) -> Kernel:
        """Kernel of the transition ``X_i -> X_{i+1}``, ``1 <= i <= n-1``."""
        if not 1 <= i <= self.n - 1:
            raise IndexError(f"transition index {i} outside 1..{self.n - 1}")
        return self.segments[bisect.bisect_right(self._starts, i) - 1].kernel

    def transition(self, i: int, j: int) -> Kernel:
        """Product kernel ``P_{i,j}`` taking ``X_i`` to ``X_j`` (identity if ``i == j``)."""
        if not 1 <= i <= j <= self.n:
            raise IndexError(f"need 1 <= i <= j <= n, got i={i}, j={j}")
        out = Kernel.identity(self.size)
        t = i
        while t < j:
            seg = self.segments[bisect.bisect_right(self._starts, t) - 1]
            stop = min(seg.stop, j - 1)
            out = compose(out, matrix_power(seg.kernel, stop - t + 1))
            t = stop + 1
        return out

    def kernel_plan(self) -> tuple[list[Kernel], np.ndarray]:
        """Distinct kernels and, per transition, the index of its kernel."""
        distinct: list[Kernel] = []
        ids: dict[int, int] = {}
        regime = np.empty(max(self.n - 1, 0), dtype=np.int32)
        for seg in self.segments:
            key = id(seg.kernel)
            if key not in ids:
                ids[key] = len(distinct)
                distinct.append(seg.kernel)
            regime[seg.start - 1:seg.stop] = ids[key]
        return distinct, regime

    # -- laws and observables ---------------------------------------------

    @cached_property
    def marginal_array(self) -> np.ndarray:
        """``(n, k)`` array whose row ``i-1`` is the law of ``X_i``."""
        out = np.empty((self.n, self.size))
        nu = self.initial_law.copy()
        out[0] = nu
        for seg in self.segments:
            rows = seg.kernel.rows
            for i in range(seg.start, seg.stop + 1):
                nu = nu @ rows
                out[i] = nu
        out.setflags(write=False)
        return out

    def raw_observable_table(self) -> np.ndarray:
        if self.observable.ndim == 1:
            return np.broadcast_to(self.observable, (self.n, self.size))
        return self.observable

    @cached_property
    def centering_offsets(self) -> np.ndarray:
        """Exact means ``E g_i(X_i)`` of the raw observables."""
        raw = self.raw_observable_table()
        out = np.einsum("ik,ik->i", self.marginal_array, raw)
        out.setflags(write=False)
        return out

    @cached_property
    def observable_table(self) -> np.ndarray:
        """``(n, k)`` table of ``f_i(x)`` as used by every computation."""
        raw = self.raw_observable_table()
        if self.center:
            table = raw - self.centering_offsets[:, None]
        else:
            table = np.array(raw, dtype=float)
        table.setflags(write=False)
        return table

    def observable_at(self, i: int) -> BoundedFunction:
        if not 1 <= i <= self.n:
            raise IndexError(f"step {i} outside 1..{self.n}")
        if self.observable.ndim == 1 and not self.center:
            return BoundedFunction(self.observable, self.space)
        return BoundedFunction(self.observable_table[i - 1], self.space)

    def is_centered(self, tol: float = CENTER_TOL) -> bool:
        means = np.einsum("ik,ik->i", self.marginal_array, self.observable_table)
        return bool(np.all(np.abs(means) <= tol))

    @property
    def sup_bound(self) -> float:
        """``C_n``: the largest ``|f_i(x)|`` over steps and states."""
        if self.observable.ndim == 1 and self.center:
            offs = self.centering_offsets
            obs = self.observable
            return float(max(np.abs(obs.max() - offs).max(), np.abs(obs.min() - offs).max()))
        return float(np.abs(self.observable_table).max())

    def with_observable(self, observable, center: bool | None = None) -> "Schedule":
        return Schedule(
            self.n, self.initial_law, self.segments, observable,
            self.center if center is None else center, self.name, dict(self.params),
        )

    def with_initial(self, initial_law) -> "Schedule":
        return Schedule(
            self.n, initial_law, self.segments, self.observable,
            self.center, self.name, dict(self.params),
        )


def homogeneous(kernel: Kernel, n: int, observable=None, initial=None,
                center: bool = True, name: str = "homogeneous", params=None) -> Schedule:
    """Schedule using ``kernel`` at every step."""
    size = kernel.size
    segs = (Segment(1, n - 1, kernel),) if n > 1 else ()
    return Schedule(
        n,
        np.full(size, 1.0 / size) if initial is None else initial,
        segs,
        indicator(size, 1) if observable is None else observable,
        center, name, params or {},
    )


def from_kernels(kernels: Sequence[Kernel], observable=None, initial=None,
                 center: bool = True, name: str = "custom") -> Schedule:
    """Schedule with explicit kernels ``P_{1,2}, ..., P_{n-1,n}``.

    Consecutive entries that are the same object share a segment.
    """
    n = len(kernels) + 1
    segs: list[Segment] = []
    for i, k in enumerate(kernels, start=1):
        if segs and segs[-1].kernel is k:
            segs[-1] = Segment(segs[-1].start, i, k)
        else:
            segs.append(Segment(i, i, k))
    if kernels:
        size = kernels[0].size
    elif initial is not None:
        size = len(initial)
    else:
        raise ScheduleError("a one-step schedule needs an explicit initial law")
    return Schedule(
        n,
        np.full(size, 1.0 / size) if initial is None else initial,
        tuple(segs),
        indicator(size, 1) if observable is None else observable,
        center, name,
    )


def indicator(size: int, state: int) -> np.ndarray:
    """Indicator of a 1-based ``state``."""
    if not 1 <= state <= size:
        raise ScheduleError(f"state {state} outside 1..{size}")
    out = np.zeros(size)
    out[state - 1] = 1.0
    return out


# -- example families ------------------------------------------------

# State 1 is transient without return in examples 1 and 2, so its indicator
# has bounded total variance; those families observe the recurrent state 4.
DEFAULT_INDICATOR = {1: 4, 2: 4, 3: 1, 4: 1}


def example_kernel(example_id: int, beta: float, eps: float | None = None) -> Kernel:
    """Transition matrix of example family ``example_id`` (1 to 4)."""
    b = beta
    e = eps
    if example_id == 1:
        if not 0.0 < b < 0.5:
            raise ScheduleError(f"example 1 needs 0 < beta < 1/2, got {b}")
        rows = [[1 - 2 * b, b, b, 0.0],
                [0.0, 0.5, 0.5, 0.0],
                [0.0, 0.0, 0.5, 0.5],
                [0.0, 0.0, 0.0, 1.0]]
    elif example_id == 2:
        rows = [[1 - 2 * b, b, b, 0.0],
                [0.0, 0.5, 0.5, 0.0],
                [0.0, 0.0, 0.5, 0.5],
                [0.0, e, 0.0, 1 - e]]
    elif example_id == 3:
        rows = [[1 - 2 * b, b, b, 0.0, 0.0],
                [0.0, 1 / 3, 1 / 3, 0.0, 1 / 3],
                [0.0, 0.0, 0.5, 0.5, 0.0],
                [e, 0.0, 0.0, 1 - b, b - e],
                [e, 0.0, 0.0, b - e, 1 - b]]
    elif example_id == 4:
        rows = [[1 - b, e, e, b - 2 * e],
                [e, 1 - b, b - 2 * e, e],
                [0.25, 0.25, 0.25, 0.25],
                [0.25, 0.25, 0.25, 0.25]]
    else:
        raise ScheduleError(f"unknown example id {example_id!r}; expected 1, 2, 3 or 4")
    try:
        return Kernel(np.array(rows, dtype=float))
    except KernelError as exc:
        raise ScheduleError(
            f"example {example_id} with beta={b}, eps={e} is not a kernel: {exc}"
        ) from None


def default_beta(n: int) -> float:
    return float(n) ** (-1.0 / 6.0)


def default_eps(n: int) -> float:
    return float(n) ** (-1.0 / 3.0)


def build_example(example_id: int, n: int, beta: float | None = None,
                  eps: float | None = None, observable=None, initial=None,
                  center: bool = True) -> Schedule:
    """Series of length ``n`` for one of the four example families.

    ``beta`` defaults to ``n**(-1/6)`` and ``eps`` to ``n**(-1/3)``. The
    observable defaults to the indicator of ``DEFAULT_INDICATOR[example_id]``
    and the initial law to uniform.
    """
    if example_id not in (1, 2, 3, 4):
        raise ScheduleError(f"unknown example id {example_id!r}; expected 1, 2, 3 or 4")
    if n < 3:
        raise ScheduleError(f"example schedules need n >= 3, got {n}")
    b = default_beta(n) if beta is None else float(beta)
    e = None if example_id == 1 else (default_eps(n) if eps is None else float(eps))
    k = example_kernel(example_id, b, e)
    if observable is None:
        observable = indicator(k.size, DEFAULT_INDICATOR[example_id])
    params = {"beta": b} if e is None else {"beta": b, "eps": e}
    return homogeneous(k, n, observable, initial, center, f"example{example_id}", params)


@dataclass(frozen=True)
class BDParams:
    n: int
    alpha_n: float
    block_len: int
    breakpoints: tuple[int, ...]
    m_n: int

    def __post_init__(self):
        bp = self.breakpoints
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])) or (bp and bp[-1] > self.n):
            raise ScheduleError("breakpoints must increase strictly and end at or before n")


def robust_floor(x: float) -> int:
    # n ** (1/3) lands a few ulps below an exact integer for perfect cubes.
    r = round(x)
    return int(r) if abs(x - r) <= 1e-9 * max(1.0, abs(x)) else int(math.floor(x))


def bd_params(n: int, alpha_exponent: float) -> BDParams:
    if n < 10:
        raise ScheduleError(f"BD schedule needs n >= 10, got {n}")
    if not 0.0 < alpha_exponent <= 0.5:
        raise ScheduleError(f"alpha_exponent must lie in (0, 1/2], got {alpha_exponent}")
    alpha = float(n) ** (-alpha_exponent)
    block = robust_floor(float(n) ** alpha_exponent)
    if block >= n:
        raise ScheduleError(f"block length {block} >= n={n}: degenerate blocking")
    m = n // block
    return BDParams(n, alpha, block, tuple(i * block for i in range(m + 1)), m)


def build_bd(n: int, alpha_exponent: float = 1 / 3, observable=None,
             initial=None, center: bool = True) -> tuple[Schedule, BDParams]:
    """Two-state Bernstein-Dobrushin series.

    Transitions ``1..k_1-1`` use ``Q(alpha_n)``, the breakpoints
    ``k_1..k_m`` use ``Q(1/2)``, every other transition uses
    ``Q(1-alpha_n)``, with ``alpha_n = n**(-alpha_exponent)`` and
    ``k_i = i * floor(1/alpha_n)``.
    """
    p = bd_params(n, alpha_exponent)
    slow = two_state(p.alpha_n)
    reset = two_state(0.5)
    fast = two_state(1.0 - p.alpha_n)
    segs: list[Segment] = []

    def push(a, b, k):
        if a <= b:
            segs.append(Segment(a, b, k))

    push(1, p.block_len - 1, slow)
    for idx in range(1, p.m_n + 1):
        bp = p.breakpoints[idx]
        if bp > n - 1:
            break
        push(bp, bp, reset)
        nxt = p.breakpoints[idx + 1] - 1 if idx < p.m_n else n - 1
        push(bp + 1, min(nxt, n - 1), fast)
    sched = Schedule(
        n,
        np.array([0.5, 0.5]) if initial is None else initial,
        tuple(segs),
        indicator(2, 1) if observable is None else observable,
        center,
        "bd",
        {"alpha_exponent": alpha_exponent, "alpha_n": p.alpha_n},
    )
    return sched, p


# -- coefficients along a series -------------------------------------------

@dataclass(frozen=True, eq=False)
class SeriesCoefficients:
    """One-step and two-step coefficients along a series.

    Per-transition values are kept run-length encoded as
    ``(first_index, count, value)`` triples; ``per_step_alpha`` and
    ``per_two_step_alpha`` expand them (index ``0`` is transition 1).
    """

    n: int
    alpha_n: float
    alpha2_n: float
    delta_n: float
    step_runs: tuple[tuple[int, int, float], ...]
    two_step_runs: tuple[tuple[int, int, float], ...]

    @staticmethod
    def _expand(runs) -> np.ndarray:
        if not runs:
            return np.empty(0)
        return np.repeat([v for _, _, v in runs], [c for _, c, _ in runs])

    @property
    def per_step_alpha(self) -> np.ndarray:
        return self._expand(self.step_runs)

    @property
    def per_two_step_alpha(self) -> np.ndarray:
        return self._expand(self.two_step_runs)


def series_coefficients(s: Schedule) -> SeriesCoefficients:
    """``alpha_n``, ``alpha_n^(2)`` and their per-transition values.

    Each distinct kernel and each distinct adjacent pair is evaluated once.
    """
    one: dict[int, tuple[float, float]] = {}
    two: dict[tuple[int, int], float] = {}

    def coef(k: Kernel):
        key = id(k)
        if key not in one:
            rep = md_delta(k)
            one[key] = (rep.alpha, rep.delta)
        return one[key]

    def coef2(a: Kernel, b: Kernel) -> float:
        key = (id(a), id(b))
        if key not in two:
            two[key] = md_delta(compose(a, b)).alpha
        return two[key]

    step_runs = []
    two_runs = []
    segs = s.segments
    for idx, seg in enumerate(segs):
        step_runs.append((seg.start, seg.length, coef(seg.kernel)[0]))
        if seg.length >= 2:
            two_runs.append((seg.start, seg.length - 1, coef2(seg.kernel, seg.kernel)))
        if idx + 1 < len(segs):
            two_runs.append((seg.stop, 1, coef2(seg.kernel, segs[idx + 1].kernel)))
    alpha_n = min((v for _, _, v in step_runs), default=math.nan)
    delta_n = max((coef(seg.kernel)[1] for seg in segs), default=math.nan)
    alpha2_n = min((v for _, _, v in two_runs), default=math.nan)
    return SeriesCoefficients(s.n, alpha_n, alpha2_n, delta_n, tuple(step_runs), tuple(two_runs))


# -- limit-condition diagnostics --------------------------------------------

def _inv_pow(x: float, p: int) -> float:
    return math.inf if x <= 0.0 else x ** (-p)


def dobrushin_rate(n: int, alpha_n: float) -> float:
    """``n^(1/3) alpha_n``; Dobrushin's condition asks this to diverge."""
    return float(n) ** (1.0 / 3.0) * alpha_n


def new_rate(n: int, alpha_n: float, alpha2_n: float) -> float:
    """``n alpha_n (alpha_n^(2))^2``; the two-step condition asks this to diverge."""
    return float(n) * alpha_n * alpha2_n ** 2


@dataclass(frozen=True)
class ConditionDiagnostics:
    n: int
    C_n: float
    sum_var: float
    dobrushin_lhs: float
    dobrushin_rate: float
    new_lhs: float
    new_rate: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def condition_diagnostics(s: Schedule, exact_vars: Sequence[float],
                          coeffs: SeriesCoefficients | None = None) -> ConditionDiagnostics:
    """Finite-n values of the one-step and two-step CLT conditions.

    ``exact_vars[i]`` must be the exact variance of ``f_{i+1}(X_{i+1})``.
    Reciprocal quantities are ``inf`` when a coefficient or the variance
    sum is zero.
    """
    exact_vars = np.asarray(exact_vars, dtype=float)
    if exact_vars.shape != (s.n,):
        raise ScheduleError(f"need {s.n} per-step variances, got shape {exact_vars.shape}")
    c = coeffs or series_coefficients(s)
    C = s.sup_bound
    sum_var = math.fsum(exact_vars)
    degenerate = sum_var <= 0.0
    inv_var = math.inf if degenerate else 1.0 / sum_var

    def scaled(x):
        # 0 * inf is taken as 0: a zero observable satisfies every condition.
        return 0.0 if C == 0.0 else C * C * x * inv_var

    return ConditionDiagnostics(
        n=s.n,
        C_n=C,
        sum_var=sum_var,
        dobrushin_lhs=scaled(_inv_pow(c.alpha_n, 3)),
        dobrushin_rate=dobrushin_rate(s.n, c.alpha_n),
        new_lhs=scaled(_inv_pow(c.alpha_n, 1) * _inv_pow(c.alpha2_n, 2)),
        new_rate=new_rate(s.n, c.alpha_n, c.alpha2_n),
        degenerate=degenerate,
    )


# -- schedule files -----------------------------------------------------

FAMILIES = ("example1", "example2", "example3", "example4", "bd", "custom")


def _parse_observable(spec: dict, size: int):
    if "values" in spec:
        try:
            return np.asarray(spec["values"], dtype=float)
        except (TypeError, ValueError):
            raise ScheduleError('"values" must be a list of numbers') from None
    obs = spec.get("observable")
    if obs is None:
        return None
    if isinstance(obs, str) and obs.startswith("indicator:"):
        try:
            state = int(obs.split(":", 1)[1])
        except ValueError:
            raise ScheduleError(f"bad observable {obs!r}; expected indicator:<state>") from None
        return indicator(size, state)
    raise ScheduleError(f'bad observable {obs!r}; expected "indicator:<state>" or a "values" list')


def _parse_initial(spec: dict, size: int):
    init = spec.get("initial", "uniform")
    if init == "uniform":
        return np.full(size, 1.0 / size)
    try:
        return check_probability(init, size)
    except KernelError as exc:
        raise ScheduleError(f"initial law: {exc}") from None


def schedule_from_dict(spec: dict, base_dir: str | Path = ".") -> tuple[Schedule, BDParams | None]:
    """Build a schedule from a parsed schedule description.

    ``{"family": ..., "n": ..., "params": {...}, "observable": "indicator:2"
    | "values": [...], "initial": "uniform" | [...]}``; the custom family adds
    ``"kernels": [{"steps": [a, b], "rows": [[...]]} | {"steps": [a, b],
    "file": "kernel.json"}, ...]`` covering transitions ``1..n-1``.
    """
    if not isinstance(spec, dict):
        raise ScheduleError("schedule file must be a JSON object")
    family = spec.get("family")
    if family not in FAMILIES:
        raise ScheduleError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    try:
        n = int(spec["n"])
    except (KeyError, TypeError, ValueError):
        raise ScheduleError('schedule file needs an integer "n"') from None
    params = spec.get("params", {}) or {}
    center = bool(spec.get("center", True))

    if family.startswith("example"):
        ex = int(family[-1])
        size = 5 if ex == 3 else 4
        sched = build_example(
            ex, n, params.get("beta"), params.get("eps"),
            _parse_observable(spec, size), _parse_initial(spec, size), center,
        )
        return sched, None
    if family == "bd":
        sched, p = build_bd(
            n, float(params.get("alpha_exponent", 1 / 3)),
            _parse_observable(spec, 2), _parse_initial(spec, 2), center,
        )
        return sched, p

    entries = spec.get("kernels")
    if not entries:
        raise ScheduleError('custom family needs a "kernels" list')
    segs = []
    for pos, entry in enumerate(entries):
        try:
            a, b = (int(v) for v in entry["steps"])
        except (KeyError, TypeError, ValueError):
            raise ScheduleError(f'kernels[{pos}]: need "steps": [first, last]') from None
        try:
            if "file" in entry:
                k = load_kernel(Path(base_dir) / entry["file"])
            else:
                k = kernel_from_dict(entry)
        except KernelError as exc:
            raise ScheduleError(f"kernels[{pos}]: {exc}") from None
        segs.append(Segment(a, b, k))
    size = segs[0].kernel.size
    obs = _parse_observable(spec, size)
    return Schedule(
        n, _parse_initial(spec, size), tuple(segs),
        indicator(size, 1) if obs is None else obs, center, "custom", dict(params),
    ), None


def load_schedule(path: str | Path) -> tuple[Schedule, BDParams | None]:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScheduleError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return schedule_from_dict(spec, path.parent)
