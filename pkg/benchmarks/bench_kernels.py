"""Compiled path kernel versus the numpy fallback.

Runs the same ensembles through both backends, checks that they agree
(stop points, times, causes) and reports paths per second.

    python benchmarks/bench_kernels.py [--paths N] [--threads T]
"""
import argparse
import time

import numpy as np

from skbarrier import _core
from skbarrier.brownian import SimParams, StoppingRule, simulate_ensemble
from skbarrier.measures import RadialMeasure

CASES = {
    "sphere-hit": (RadialMeasure.sphere(1.0), StoppingRule.sphere_hit(2.0)),
    "two-ring": (RadialMeasure.sphere(1.0), StoppingRule.barrier_hit([1.5, 2.5], [0.98, -1.0])),
    "fixed-time": (RadialMeasure.sphere(1.0), StoppingRule.fixed_time(0.3)),
}


def run(case, paths, threads, backend):
    mu, rule = CASES[case]
    params = SimParams(paths, universe=3.0, threads=threads, backend=backend)
    t = time.perf_counter()
    ens = simulate_ensemble(mu, rule, params, seed=11)
    return ens, time.perf_counter() - t


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)
    try:
        _core.get_backend("compiled")
    except ImportError:
        print("compiled kernel not built; install with `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'case':<12}{'python s':>10}{'compiled s':>12}{'speedup':>9}{'max |dstop|':>13}{'causes':>8}")
    for case in CASES:
        # the fallback is slow; give it a tenth of the paths and compare on those
        n_py = max(1000, args.paths // 10)
        py, t_py = run(case, n_py, args.threads, "python")
        cc, t_cc = run(case, args.paths, args.threads, "compiled")
        sub, _ = run(case, n_py, args.threads, "compiled")
        diff = float(np.max(np.abs(py.stops - sub.stops)))
        same = bool(np.array_equal(py.causes, sub.causes))
        rate_py = n_py / t_py
        rate_cc = args.paths / t_cc
        print(f"{case:<12}{t_py * args.paths / n_py:>10.2f}{t_cc:>12.2f}{rate_cc / rate_py:>9.1f}"
              f"{diff:>13.1e}{'same' if same else 'DIFF':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
