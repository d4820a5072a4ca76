"""Finite-state transition kernels and Markov-Dobrushin coefficients.

States are indexed ``0..size-1`` internally; anything read from or written to
disk uses 1-based state numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
PRODUCT_ROW_SUM_TOL = 1e-9


class KernelError(ValueError):
    """Raised for invalid kernels, functions or probability vectors."""


@dataclass(frozen=True)
class StateSpace:
    size: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.size) < 1:
            raise KernelError(f"state space size must be >= 1, got {self.size}")
        if self.labels is not None and len(self.labels) != self.size:
            raise KernelError(
                f"{len(self.labels)} labels given for {self.size} states"
            )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Kernel:
    """Row-stochastic matrix; row ``x`` is the law of the next state from ``x``."""

    rows: np.ndarray
    space: StateSpace = None  # type: ignore[assignment]

    def __post_init__(self):
        rows = _readonly(self.rows)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
            raise KernelError(f"kernel must be a square matrix, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise KernelError("kernel has non-finite entries")
        if rows.min() < 0.0 or rows.max() > 1.0:
            raise KernelError("kernel entries must lie in [0, 1]")
        drift = np.abs(rows.sum(axis=1) - 1.0)
        bad = np.flatnonzero(drift > ROW_SUM_TOL)
        if bad.size:
            x = int(bad[0])
            raise KernelError(
                f"row {x + 1} sums to {float(rows[x].sum())!r}, not 1 (tolerance {ROW_SUM_TOL})"
            )
        space = self.space if self.space is not None else StateSpace(rows.shape[0])
        if space.size != rows.shape[0]:
            raise KernelError(
                f"space has {space.size} states but kernel is {rows.shape[0]}x{rows.shape[0]}"
            )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "space", space)

    @property
    def size(self) -> int:
        return self.space.size

    @classmethod
    def identity(cls, size: int) -> "Kernel":
        return cls(np.eye(size))

    @classmethod
    def constant(cls, row: Sequence[float]) -> "Kernel":
        """Kernel whose every row equals ``row`` (next state independent of current)."""
        row = np.asarray(row, dtype=float)
        return cls(np.tile(row, (row.size, 1)))

    def __matmul__(self, other: "Kernel") -> "Kernel":
        return compose(self, other)

    def __repr__(self):
        return f"Kernel(size={self.size}, rows={self.rows.tolist()!r})"


@dataclass(frozen=True, eq=False)
class BoundedFunction:
    values: np.ndarray
    space: StateSpace = None  # type: ignore[assignment]

    def __post_init__(self):
        values = _readonly(self.values)
        if values.ndim != 1:
            raise KernelError("function values must be a 1-d array")
        if not np.all(np.isfinite(values)):
            raise KernelError("function values must be finite")
        space = self.space if self.space is not None else StateSpace(values.size)
        if space.size != values.size:
            raise KernelError(f"{values.size} values for a {space.size}-state space")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "space", space)

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class CoefficientReport:
    """Markov-Dobrushin coefficients of one kernel.

    ``pairwise_alpha[x1, x2]`` is the overlap ``sum_y min(P(x1, y), P(x2, y))``
    and ``pairwise_delta`` the half-L1 distance between the two rows.
    ``alpha`` is the smallest overlap and ``delta`` the largest row distance;
    the two agree (``alpha == 1 - delta``) up to floating-point rounding.
    """

    delta: float
    alpha: float
    pairwise_alpha: np.ndarray
    pairwise_delta: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "alpha": self.alpha,
            "pairwise_alpha": self.pairwise_alpha.tolist(),
            "pairwise_delta": self.pairwise_delta.tolist(),
        }


def _check_same_space(a_size: int, b_size: int, what: str):
    if a_size != b_size:
        raise KernelError(f"dimension mismatch in {what}: {a_size} vs {b_size}")


def compose(a: Kernel, b: Kernel) -> Kernel:
    """Two-step kernel: first step with ``a``, second with ``b``.

    The product is not renormalised; a row-sum drift beyond ``1e-9`` means the
    inputs were corrupted and raises :class:`KernelError`.
    """
    _check_same_space(a.size, b.size, "compose")
    prod = a.rows @ b.rows
    drift = np.abs(prod.sum(axis=1) - 1.0).max()
    if drift > PRODUCT_ROW_SUM_TOL:
        raise KernelError(f"row-sum drift {drift:.3g} after product")
    # Rounding may leave products a hair outside [0, 1].
    prod = np.clip(prod, 0.0, 1.0)
    return _trusted_kernel(prod, a.space)


def _trusted_kernel(rows: np.ndarray, space: StateSpace) -> Kernel:
    # Products are checked against PRODUCT_ROW_SUM_TOL, not the construction
    # tolerance, so skip __post_init__ validation.
    k = object.__new__(Kernel)
    object.__setattr__(k, "rows", _readonly(rows))
    object.__setattr__(k, "space", space)
    return k


def matrix_power(k: Kernel, m: int) -> Kernel:
    """``m``-fold product of ``k`` with itself (identity for ``m == 0``)."""
    if m < 0:
        raise KernelError("negative power")
    rows = np.linalg.matrix_power(k.rows, m)
    drift = np.abs(rows.sum(axis=1) - 1.0).max()
    if drift > PRODUCT_ROW_SUM_TOL:
        raise KernelError(f"row-sum drift {drift:.3g} after power {m}")
    return _trusted_kernel(np.clip(rows, 0.0, 1.0), k.space)


def pairwise_overlap(rows: np.ndarray) -> np.ndarray:
    """Matrix of ``sum_y min(rows[x1, y], rows[x2, y])`` with exact summation."""
    size = rows.shape[0]
    out = np.ones((size, size))
    for x1 in range(size):
        for x2 in range(x1 + 1, size):
            v = min(math.fsum(np.minimum(rows[x1], rows[x2])), 1.0)
            out[x1, x2] = out[x2, x1] = v
    return out


def pairwise_tv(rows: np.ndarray) -> np.ndarray:
    """Matrix of half-L1 distances between rows."""
    size = rows.shape[0]
    out = np.zeros((size, size))
    for x1 in range(size):
        for x2 in range(x1 + 1, size):
            v = 0.5 * math.fsum(np.abs(rows[x1] - rows[x2]))
            out[x1, x2] = out[x2, x1] = v
    return out


def md_delta(k: Kernel) -> CoefficientReport:
    """Markov-Dobrushin coefficient of a single kernel.

    Parameters
    ----------
    k : Kernel

    Returns
    -------
    CoefficientReport
        ``delta`` is the largest half-L1 distance between two rows; ``alpha``
        is the smallest row overlap. For a one-state space both pairwise
        tables are trivial and ``delta == 0``.
    """
    overlap = pairwise_overlap(k.rows)
    tv = pairwise_tv(k.rows)
    if k.size == 1:
        return CoefficientReport(0.0, 1.0, overlap, tv)
    iu = np.triu_indices(k.size, 1)
    delta = float(min(tv[iu].max(), 1.0))
    alpha = float(overlap[iu].min())
    return CoefficientReport(delta, alpha, overlap, tv)


def multistep(kernels: Sequence[Kernel]) -> Kernel:
    """Product of the kernels in order of application."""
    if len(kernels) == 0:
        raise KernelError("empty kernel sequence")
    out = kernels[0]
    for k in kernels[1:]:
        out = compose(out, k)
    return out


def md_delta_multistep(kernels: Sequence[Kernel]) -> CoefficientReport:
    """Coefficients of the product kernel (not the product of the coefficients)."""
    return md_delta(multistep(kernels))


def osc(f: BoundedFunction | np.ndarray) -> float:
    """Oscillation ``max f - min f``."""
    values = f.values if isinstance(f, BoundedFunction) else np.asarray(f, dtype=float)
    return float(values.max() - values.min())


def apply_to_function(k: Kernel, f: BoundedFunction) -> BoundedFunction:
    """``(k f)(x) = sum_y k(x, y) f(y)``."""
    _check_same_space(k.size, f.space.size, "apply_to_function")
    return BoundedFunction(k.rows @ f.values, k.space)


def apply_to_measure(mu: Sequence[float], k: Kernel) -> np.ndarray:
    """Law of the next state when the current one has law ``mu``."""
    mu = check_probability(mu, k.size)
    out = mu @ k.rows
    if abs(out.sum() - 1.0) > 1e-10:
        raise KernelError(f"measure mass drifted to {out.sum()!r}")
    return out


def check_probability(mu: Iterable[float], size: int | None = None,
                      tol: float = ROW_SUM_TOL) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1:
        raise KernelError("probability vector must be 1-d")
    if size is not None and mu.size != size:
        raise KernelError(f"probability vector has {mu.size} entries, expected {size}")
    if not np.all(np.isfinite(mu)) or mu.min() < 0.0:
        raise KernelError("probability vector has negative or non-finite entries")
    if abs(mu.sum() - 1.0) > tol:
        raise KernelError(f"probability vector sums to {float(mu.sum())!r}, not 1")
    return mu


def two_state(p: float) -> Kernel:
    """Symmetric two-state kernel ``[[1-p, p], [p, 1-p]]``."""
    if not 0.0 <= p <= 1.0:
        raise KernelError(f"switching probability {p} outside [0, 1]")
    return Kernel(np.array([[1.0 - p, p], [p, 1.0 - p]]))


# -- JSON I/O ---------------------------------------------------------------

def kernel_from_dict(data: dict) -> Kernel:
    if not isinstance(data, dict) or "rows" not in data:
        raise KernelError('kernel JSON must be an object with a "rows" field')
    rows = data["rows"]
    try:
        arr = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise KernelError(f"rows are not a numeric matrix: {exc}") from None
    size = data.get("size", arr.shape[0] if arr.ndim else 0)
    if arr.ndim != 2 or arr.shape != (size, size):
        raise KernelError(f'"rows" must be a {size}x{size} matrix, got shape {arr.shape}')
    labels = data.get("labels")
    space = StateSpace(int(size), tuple(labels) if labels is not None else None)
    return Kernel(arr, space)


def kernel_to_dict(k: Kernel) -> dict:
    out = {"size": k.size, "rows": k.rows.tolist()}
    if k.space.labels is not None:
        out["labels"] = list(k.space.labels)
    return out


def load_kernel(path: str | Path) -> Kernel:
    """Read a kernel file ``{"size": k, "rows": [[...], ...], "labels": [...]}``."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise KernelError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return kernel_from_dict(data)
    except KernelError as exc:
        raise KernelError(f"{path}: {exc}") from None


def save_kernel(k: Kernel, path: str | Path):
    Path(path).write_text(json.dumps(kernel_to_dict(k), indent=2) + "\n")
