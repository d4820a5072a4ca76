"""Command-line entry point ``dobrushin``.

Exit codes: 0 success, 1 a verification failed or the variance is
degenerate, 2 bad usage or malformed input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import exact, oracles
from .kernel import KernelError, load_kernel, md_delta, multistep
from .montecarlo import (
    SimulationError,
    normality_report,
    simulate,
    write_batch_csv,
)
from .schedule import (
    ScheduleError,
    build_bd,
    build_example,
    dobrushin_rate,
    new_rate,
    schedule_from_dict,
    load_schedule,
    series_coefficients,
)

log = logging.getLogger("dobrushin")

DEFAULT_SWEEP = [2 ** k for k in range(12, 25, 3)]


class UsageError(Exception):
    pass


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)


def _emit(text: str, out: str | None):
    if out:
        _atomic_write(Path(out), text)
    else:
        sys.stdout.write(text)


def parse_sweep(text: str) -> list[int]:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            if "^" in item:
                b, e = item.split("^")
                out.append(int(b) ** int(e))
            else:
                out.append(int(float(item)))
        except ValueError:
            raise UsageError(f"bad n-sweep entry {item!r}") from None
    if not out:
        raise UsageError("empty n-sweep")
    return out


# -- coeff ----------------------------------------------------------------------

def cmd_coeff(args) -> int:
    if args.steps < 1:
        raise UsageError("--steps must be >= 1")
    k = load_kernel(args.matrix)
    rep = md_delta(multistep([k] * args.steps))
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x1", "x2", "alpha", "delta"])
        w.writerow(["all", "all", repr(rep.alpha), repr(rep.delta)])
        for x1 in range(k.size):
            for x2 in range(x1 + 1, k.size):
                w.writerow([x1 + 1, x2 + 1, repr(float(rep.pairwise_alpha[x1, x2])),
                            repr(float(rep.pairwise_delta[x1, x2]))])
        _emit(buf.getvalue(), args.out)
    else:
        body = {"steps": args.steps, **rep.to_dict()}
        _emit(json.dumps(body, indent=2) + "\n", args.out)
    return 0


# -- example --------------------------------------------------------------------

EXAMPLE_COLUMNS = ["n", "alpha_n", "alpha2_n", "dobrushin_rate", "new_rate"]


def example_rows(example_id: int, ns, beta=None, eps=None):
    for n in ns:
        s = build_example(example_id, n, beta, eps)
        c = series_coefficients(s)
        yield {
            "n": n,
            "alpha_n": c.alpha_n,
            "alpha2_n": c.alpha2_n,
            "dobrushin_rate": dobrushin_rate(n, c.alpha_n),
            "new_rate": new_rate(n, c.alpha_n, c.alpha2_n),
        }


def cmd_example(args) -> int:
    if args.n is not None:
        ns = [args.n]
    elif args.n_sweep:
        ns = parse_sweep(args.n_sweep)
    else:
        ns = DEFAULT_SWEEP
    rows = list(example_rows(args.id, ns, args.beta, args.eps))
    if args.format == "json":
        _emit(json.dumps(rows, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, EXAMPLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        _emit(buf.getvalue(), args.out)
    return 0


# -- verify ---------------------------------------------------------------------

def reference_schedules(n: int):
    for ex in (1, 2, 3, 4):
        yield f"example{ex}(n={n})", build_example(ex, n)
    s, _ = build_bd(n)
    yield f"bd(n={n}, exponent=1/3)", s


def _suite_lemmas(trials, seed, n):
    rng = np.random.default_rng(seed)
    cases = list(reference_schedules(n))
    for t in range(max(1, min(trials, 20))):
        cases.append((f"random#{t}", oracles.random_schedule(
            rng, int(rng.integers(2, 5)), int(rng.integers(3, 40)), distinct=3)))
    for name, s in cases:
        yield name, exact.check_lemma1(s, trials, seed)
        if series_coefficients(s).alpha2_n > 0:
            yield name, exact.check_lemma2(s)


def _suite_prop3(trials, seed, n):
    rng = np.random.default_rng(seed)
    for name, s in reference_schedules(min(n, 1024)):
        yield name, exact.check_prop3(s)
    for t in range(trials):
        s = oracles.random_schedule(rng, 4, int(rng.integers(2, 51)))
        yield f"random#{t}", exact.check_prop3(s)


def _decomposition_report(s) -> exact.CheckReport:
    try:
        dec = exact.martingale_decomposition(s)
    except exact.ExactEngineError as exc:
        return exact.CheckReport("decomposition", s.n, math.inf, -math.inf, False,
                                 {"error": str(exc)})
    rel = abs(dec.total - dec.DSn) / max(dec.DSn, 1e-300)
    resid = exact.increment_mean_residual(s, dec)
    ok = rel <= 1e-8 and resid <= 1e-12
    return exact.CheckReport("decomposition", s.n, max(rel - 1e-8, resid - 1e-12),
                             1e-8 - rel, ok,
                             {"relative_error": rel, "increment_mean_residual": resid})


def _suite_decomposition(trials, seed, n):
    rng = np.random.default_rng(seed)
    for name, s in reference_schedules(n):
        yield name, _decomposition_report(s)
    for t in range(trials):
        s = oracles.random_schedule(rng, int(rng.integers(2, 6)), int(rng.integers(2, 60)))
        yield f"random#{t}", _decomposition_report(s)


def oracle_report(s, tol: float = 1e-10) -> exact.CheckReport:
    """Compare the fast exact routines with path enumeration on one schedule."""
    errs = {}
    nu = oracles.path_marginals(s)
    errs["marginals"] = float(np.abs(nu - s.marginal_array).max())
    mean_p, var_p = oracles.path_mean_var(s)
    ESn, DSn, _ = exact.exact_mean_var(s)
    scale = max(abs(var_p), 1.0)
    errs["mean"] = abs(ESn - mean_p) / max(abs(mean_p), 1.0)
    errs["variance"] = abs(DSn - var_p) / scale
    dec = exact.martingale_decomposition(s)
    xi_p, z1_p = oracles.path_increment_variances(s)
    errs["decomposition"] = max(
        float(np.abs(dec.xi_var - xi_p).max()) if xi_p.size else 0.0,
        abs(dec.Z1_var - z1_p),
    ) / scale
    law_p = oracles.path_sum_law(s)
    try:
        dist = exact.sum_distribution(s)
    except exact.ExactEngineError:
        dist = None
    if dist is not None:
        law = {}
        for v, m in zip(dist.values, dist.masses):
            if m > 0:
                key = round(float(v), 9)
                law[key] = law.get(key, 0.0) + m
        keys = set(law) | set(law_p)
        errs["sum_distribution"] = max(abs(law.get(k, 0.0) - law_p.get(k, 0.0)) for k in keys)
    worst = max(errs.values())
    return exact.CheckReport("oracle", s.n, worst - tol, tol - worst, worst <= tol,
                             {"errors": errs})


def _suite_oracle(trials, seed, n):
    rng = np.random.default_rng(seed)
    for t in range(trials):
        size = int(rng.integers(2, 4))
        length = int(rng.integers(1, 9))
        if length == 1:
            s = oracles.random_lattice_schedule(rng, size, 2).with_observable(
                rng.integers(-2, 3, size=size).astype(float))
        else:
            s = oracles.random_lattice_schedule(rng, size, length)
        yield f"random#{t}(k={s.size}, n={s.n})", oracle_report(s)


SUITES = {
    "lemmas": _suite_lemmas,
    "prop3": _suite_prop3,
    "decomposition": _suite_decomposition,
    "oracle": _suite_oracle,
}


def cmd_verify(args) -> int:
    results = []
    failed = []
    for name, rep in SUITES[args.suite](args.trials, args.seed, args.n):
        d = {"instance": name, **rep.to_dict()}
        results.append(d)
        if not rep.passed:
            failed.append(name)
    body = {"suite": args.suite, "trials": args.trials, "seed": args.seed,
            "pass": not failed, "failed_instances": failed, "results": results}
    sys.stdout.write(json.dumps(body, indent=2, default=float) + "\n")
    return 0 if not failed else 1


# -- simulate -------------------------------------------------------------------

def _schedule_from_args(args):
    if args.schedule:
        return load_schedule(args.schedule)[0]
    if not args.family:
        raise UsageError("give --schedule FILE or --family with --n")
    if args.n is None:
        raise UsageError("--family needs --n")
    spec = {"family": args.family, "n": args.n, "params": {}}
    if args.alpha_exponent is not None:
        spec["params"]["alpha_exponent"] = args.alpha_exponent
    if args.beta is not None:
        spec["params"]["beta"] = args.beta
    if args.eps is not None:
        spec["params"]["eps"] = args.eps
    return schedule_from_dict(spec)[0]


def cmd_simulate(args) -> int:
    s = _schedule_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        log.info("simulate %s n=%d reps=%d seed=%d", s.name, s.n, args.reps, args.seed)
        try:
            batch = simulate(s, args.reps, args.seed)
        except SimulationError as exc:
            log.error("%s", exc)
            sys.stderr.write(f"error: {exc}\n")
            return 1
        rep = normality_report(batch, min_reps=0)
        fd, tmpname = tempfile.mkstemp(dir=out, prefix=".batch.csv.")
        os.close(fd)
        write_batch_csv(batch, tmpname)
        os.chmod(tmpname, 0o644)
        os.replace(tmpname, out / "batch.csv")
        summary = rep.summary_json()
        if args.format == "json":
            summary.update({k: v for k, v in rep.to_dict().items() if k not in summary})
        _atomic_write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
        sys.stdout.write(json.dumps(summary) + "\n")
        log.info("done ks=%.6f verdict=%s", rep.ks, rep.verdict)
        return 0
    finally:
        log.removeHandler(handler)
        handler.close()


# -- calibrate ------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    from .calibration import pilot

    ns = parse_sweep(args.n_sweep) if args.n_sweep else [1000, 2000]
    _emit(json.dumps(pilot(ns), indent=2) + "\n", args.out)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dobrushin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("coeff", help="coefficients of an m-step kernel product")
    c.add_argument("--matrix", required=True, help="kernel JSON file")
    c.add_argument("--steps", type=int, default=1)
    c.add_argument("--format", choices=["json", "csv"], default="json")
    c.add_argument("--out")
    c.set_defaults(func=cmd_coeff)

    e = sub.add_parser("example", help="coefficient table for an example family")
    e.add_argument("--id", type=int, required=True, choices=[1, 2, 3, 4])
    g = e.add_mutually_exclusive_group()
    g.add_argument("--n", type=int)
    g.add_argument("--n-sweep", help="comma list, entries like 4096 or 2^12")
    e.add_argument("--beta", type=float)
    e.add_argument("--eps", type=float)
    e.add_argument("--format", choices=["csv", "json"], default="csv")
    e.add_argument("--out")
    e.set_defaults(func=cmd_example)

    v = sub.add_parser("verify", help="run an exact verification suite")
    v.add_argument("--suite", required=True, choices=sorted(SUITES))
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--n", type=int, default=4096, help="series length of the reference schedules")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="Monte Carlo batch of normalised sums")
    s.add_argument("--schedule", help="schedule JSON file")
    s.add_argument("--family", choices=["example1", "example2", "example3", "example4", "bd"])
    s.add_argument("--n", type=int)
    s.add_argument("--alpha-exponent", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--eps", type=float)
    s.add_argument("--reps", type=int, default=50_000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--format", choices=["csv", "json"], default="csv",
                   help="json adds standard errors to summary.json")
    s.set_defaults(func=cmd_simulate)

    k = sub.add_parser("calibrate", help="exact-law pilot for the KS thresholds")
    k.add_argument("--n-sweep")
    k.add_argument("--out")
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, KernelError, ScheduleError, exact.ExactEngineError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
