"""KS thresholds for the normality verdict and the exact-law pilot behind them.

The pilot computes, for short series, the exact KS distance between the
law of the normalised sum and N(0, 1) for a schedule that should look
normal (Example 2) and one that should not (BD). The shipped
``calibration.json`` stores the thresholds together with these values.
"""

from __future__ import annotations

import json
import math
from importlib import resources

from .exact import exact_mean_var, sum_distribution
from .montecarlo import KS_CONSISTENT, KS_INCONSISTENT
from .schedule import build_bd, build_example


def exact_ks(s) -> float:
    ESn, DSn, _ = exact_mean_var(s)
    return sum_distribution(s).ks_to_normal(ESn, math.sqrt(DSn))


def pilot(ns=(1000, 2000)) -> dict:
    rows = []
    for n in ns:
        bd = exact_ks(build_bd(n)[0])
        ex2 = exact_ks(build_example(2, n))
        rows.append({"n": n, "ks_bd": bd, "ks_example2": ex2, "ratio": bd / ex2})
    return {
        "ks_consistent": KS_CONSISTENT,
        "ks_inconsistent": KS_INCONSISTENT,
        "pilot": rows,
    }


def load() -> dict:
    text = resources.files(__package__).joinpath("calibration.json").read_text()
    return json.loads(text)
