"""Time the compiled and numpy trajectory samplers on the same workloads.

    python3 benchmarks/bench_simulate.py --reps 20000 --n 1000 10000
"""

import argparse
import time

import numpy as np

from dobrushin import _backend
from dobrushin.montecarlo import raw_sums
from dobrushin.schedule import build_bd, build_example


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[1000, 10000])
    p.add_argument("--reps", type=int, default=20000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    backends = sorted(_backend.BACKENDS)
    print(f"{'schedule':<12}{'n':>8}{'reps':>8}" + "".join(f"{b + ' s':>12}" for b in backends)
          + f"{'speedup':>10}{'same':>6}")
    for n in args.n:
        for name, s in (("bd", build_bd(n)[0]), ("example2", build_example(2, n))):
            times, outs = {}, {}
            for b in backends:
                times[b], outs[b] = best_of(
                    lambda b=b: raw_sums(s, args.reps, args.seed, workers=1, backend=b),
                    args.repeat)
            same = all(np.array_equal(outs[backends[0]], o) for o in outs.values())
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<12}{n:>8}{args.reps:>8}"
                  + "".join(f"{times[b]:>12.3f}" for b in backends)
                  + f"{speed:>10.1f}{'yes' if same else 'NO':>6}")


if __name__ == "__main__":
    main()
