"""Seeded trajectory sampling and normality diagnostics for ``S_n``.

Random stream
-------------
Replication ``r`` (0-based) of a batch with 64-bit ``seed`` uses the
splitmix64 sequence started at ``base_r = mix64(seed + (r + 1) * G)``; its
``t``-th draw (``t = 0, 1, ...``) is ``mix64(base_r + (t + 1) * G)`` and
becomes the uniform ``(draw >> 11) * 2**-53``. All arithmetic is modulo
``2**64``, ``G = 0x9E3779B97F4A7C15`` and

    mix64(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
              z = (z ^ (z >> 27)) * 0x94D049BB133111EB
              return z ^ (z >> 31)

Draw 0 picks ``X_1`` from the initial law and draw ``t`` picks ``X_{t+1}``
from row ``X_t`` of ``P_{t,t+1}``. A state is picked by inverse CDF: the
first ``y`` (ascending) with ``u < cumsum(row)[y]``. Because each draw is a
pure function of ``(seed, r, t)``, a batch does not depend on how
replications are split across workers.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from . import _backend
from .exact import exact_mean_var
from .schedule import Schedule

GOLDEN = 0x9E3779B97F4A7C15
MASK = (1 << 64) - 1

KS_CONSISTENT = 0.02
KS_INCONSISTENT = 0.05

# D(S_n) below (DEGENERATE_RTOL * n * max|g|)^2 is centering round-off, not variance.
DEGENERATE_RTOL = 1e-9


class SimulationError(ValueError):
    pass


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def stream_uniform(seed: int, rep: int, t: int) -> float:
    """Draw ``t`` of replication ``rep``; the reference definition of the stream."""
    base = mix64((seed + (rep + 1) * GOLDEN) & MASK)
    return (mix64((base + (t + 1) * GOLDEN) & MASK) >> 11) * 2.0 ** -53


def inverse_cdf_table(rows: np.ndarray) -> np.ndarray:
    """Cumulative sums along the last axis, capped at 2 from the last positive entry.

    The cap makes the inverse-CDF scan stop on a state with positive
    probability even when the row sums to slightly less than one.
    """
    rows = np.asarray(rows, dtype=float)
    cum = np.cumsum(rows, axis=-1)
    flat = cum.reshape(-1, rows.shape[-1])
    src = rows.reshape(-1, rows.shape[-1])
    for r in range(flat.shape[0]):
        last = np.flatnonzero(src[r] > 0.0)[-1]
        flat[r, last:] = 2.0
    return np.ascontiguousarray(cum)


def normal_cdf(z):
    return ndtr(z)


def is_degenerate(s: Schedule, DSn: float) -> bool:
    scale = s.n * float(np.abs(s.raw_observable_table()).max())
    return DSn <= (DEGENERATE_RTOL * scale) ** 2


def workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("DOBRUSHIN_WORKERS", "1")))
    except ValueError:
        return 1


def raw_sums(s: Schedule, reps: int, seed: int, workers: int | None = None,
             backend: str | None = None) -> np.ndarray:
    """``S_n`` for replications ``0..reps-1`` (observables as in ``s.observable_table``)."""
    impl = _backend.get(backend)
    kernels, regime = s.kernel_plan()
    if kernels:
        cum = inverse_cdf_table(np.stack([k.rows for k in kernels]))
    else:
        cum = np.ones((1, s.size, s.size))
    init_cum = inverse_cdf_table(s.initial_law)
    values = np.ascontiguousarray(s.observable_table, dtype=np.float64)
    seed = int(seed) & MASK
    workers = workers or workers_from_env()
    bounds = np.linspace(0, reps, min(workers, reps) + 1).astype(int)
    jobs = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(job):
        return impl.simulate_sums(cum, regime, values, init_cum, seed, job[0], job[1])

    if len(jobs) == 1:
        return run(jobs[0])
    with ThreadPoolExecutor(len(jobs)) as pool:
        parts = list(pool.map(run, jobs))
    return np.concatenate(parts)


# -- statistics ---------------------------------------------------------------

def ks_statistic(samples) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and N(0, 1)."""
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    if m == 0:
        raise ValueError("ks_statistic needs at least one sample")
    phi = normal_cdf(x)
    i = np.arange(1, m + 1)
    return float(max(np.abs(i / m - phi).max(), np.abs((i - 1) / m - phi).max()))


def _moments(x: np.ndarray) -> tuple[float, float, float, float]:
    mean = float(x.mean())
    d = x - mean
    m2 = float(np.mean(d * d))
    if m2 == 0.0:
        return mean, 0.0, 0.0, 0.0
    m3 = float(np.mean(d ** 3))
    m4 = float(np.mean(d ** 4))
    return mean, m2, m3 / m2 ** 1.5, m4 / m2 ** 2 - 3.0


@dataclass(frozen=True)
class Summary:
    mean: float
    variance: float
    skewness: float
    ex_kurtosis: float
    ks: float


def summarize(x: np.ndarray) -> Summary:
    x = np.asarray(x, dtype=float)
    mean, m2, skew, kurt = _moments(x)
    var = m2 * x.size / (x.size - 1) if x.size > 1 else 0.0
    return Summary(mean, var, skew, kurt, ks_statistic(x))


@dataclass(frozen=True, eq=False)
class SampleBatch:
    n: int
    reps: int
    seed: int
    normalized_sums: np.ndarray
    ESn: float
    DSn: float
    plug_in: bool
    summary: Summary

    def to_csv(self, path):
        write_batch_csv(self, path)


def simulate(s: Schedule, reps: int, seed: int, workers: int | None = None,
             backend: str | None = None, exact: bool = True) -> SampleBatch:
    """Sample ``reps`` trajectories and normalise their sums.

    Parameters
    ----------
    s : Schedule
    reps : int
        At least 100.
    seed : int
        64-bit seed; see the module docstring for the stream definition.
    workers : int, optional
        Thread count; defaults to ``DOBRUSHIN_WORKERS``. Never changes the output.
    backend : {"cython", "python"}, optional
    exact : bool
        Normalise with the exact mean and variance of ``S_n`` (default).
        With ``False`` the sample mean and variance are used and the batch
        is flagged ``plug_in``.
    """
    if reps < 100:
        raise SimulationError(f"need reps >= 100, got {reps}")
    ESn, DSn, _ = exact_mean_var(s)
    if exact and is_degenerate(s, DSn):
        raise SimulationError("zero variance: D(S_n) = 0, cannot normalise")
    sums = raw_sums(s, reps, seed, workers, backend)
    if not exact:
        ESn = float(sums.mean())
        DSn = float(sums.var(ddof=1))
        if is_degenerate(s, DSn):
            raise SimulationError("zero sample variance, cannot normalise")
    z = (sums - ESn) / math.sqrt(DSn)
    z.setflags(write=False)
    return SampleBatch(s.n, reps, int(seed), z, ESn, DSn, not exact, summarize(z))


def _grouped_jackknife(x: np.ndarray, stat, groups: int) -> float:
    blocks = np.array_split(np.arange(x.size), groups)
    vals = np.array([stat(np.delete(x, b)) for b in blocks])
    g = len(blocks)
    return float(math.sqrt((g - 1) / g * np.sum((vals - vals.mean()) ** 2)))


@dataclass(frozen=True)
class NormalityReport:
    n: int
    reps: int
    seed: int
    ks: float
    skewness: float
    ex_kurtosis: float
    ks_se: float
    skewness_se: float
    ex_kurtosis_se: float
    verdict: str
    plug_in: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_json(self) -> dict:
        return {
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "ks": self.ks,
            "skew": self.skewness,
            "ex_kurtosis": self.ex_kurtosis,
            "verdict": self.verdict,
        }


def verdict(ks: float, consistent: float = KS_CONSISTENT,
            inconsistent: float = KS_INCONSISTENT) -> str:
    if ks <= consistent:
        return "consistent"
    if ks >= inconsistent:
        return "inconsistent"
    return "indeterminate"


def normality_report(b: SampleBatch, consistent: float = KS_CONSISTENT,
                     inconsistent: float = KS_INCONSISTENT, groups: int = 20,
                     min_reps: int = 10_000) -> NormalityReport:
    """KS distance, skewness and excess kurtosis with grouped-jackknife errors.

    The verdict is ``consistent`` for KS at or below ``consistent``,
    ``inconsistent`` at or above ``inconsistent``, ``indeterminate`` between.
    """
    x = np.asarray(b.normalized_sums)
    if x.size < min_reps:
        raise ValueError(f"normality_report needs at least {min_reps} samples, got {x.size}")
    s = b.summary
    return NormalityReport(
        n=b.n, reps=b.reps, seed=b.seed,
        ks=s.ks, skewness=s.skewness, ex_kurtosis=s.ex_kurtosis,
        ks_se=_grouped_jackknife(x, ks_statistic, groups),
        skewness_se=_grouped_jackknife(x, lambda v: _moments(v)[2], groups),
        ex_kurtosis_se=_grouped_jackknife(x, lambda v: _moments(v)[3], groups),
        verdict=verdict(s.ks, consistent, inconsistent),
        plug_in=b.plug_in,
    )


def batch_from_samples(samples, n: int = 0, seed: int = 0) -> SampleBatch:
    """Wrap externally produced normalised samples (no simulation)."""
    z = np.asarray(samples, dtype=float)
    return SampleBatch(n, z.size, seed, z, 0.0, 1.0, False, summarize(z))


# -- export -------------------------------------------------------------------

def write_batch_csv(b: SampleBatch, path):
    """CSV ``rep,normalized_sum``; floats are written with ``repr`` (round-trip exact)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "normalized_sum"])
        for r, v in enumerate(b.normalized_sums.tolist()):
            w.writerow([r, repr(v)])


def write_summary_json(report: NormalityReport, path):
    Path(path).write_text(json.dumps(report.summary_json(), indent=2) + "\n")
