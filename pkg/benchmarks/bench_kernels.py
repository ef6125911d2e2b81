"""Compiled kernels vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the two hot loops (inverse-CDF offspring counts and the factored map
update) and one full filter run on the 10x10 grid under each backend.  The
filter run is timed in a subprocess per backend because the backend is fixed
at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rbpf import _kernels as compiled
from rbpf import _pykernels as fallback

FILTER_SNIPPET = """
import time, numpy as np
from rbpf.engine import FilterConfig, ResamplePolicy, run_filter
from rbpf.models import ten_by_ten_scenario
m, _ = ten_by_ten_scenario()
obs = m.simulate(150, np.random.default_rng(0)).observations
cfg = FilterConfig(100, proposal="optimal", resampler="stratified", resample=ResamplePolicy.parse("ess:0.5"))
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter(); run_filter(m, obs, cfg); best = min(best, time.perf_counter() - t0)
print(best)
"""


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    n = 100_000
    w = rng.random(n)
    cdf = np.cumsum(w / w.sum())
    u = np.sort(rng.random(n))

    n_part, n_cells, n_obs = 1000, 100, 9
    theta0 = rng.dirichlet(np.ones(2), size=(n_part, n_cells))
    cells = rng.integers(0, n_cells, size=(n_part, n_obs)).astype(np.int64)
    y = rng.integers(0, 2, size=n_obs).astype(np.int64)

    rows = []
    for name, fn_c, fn_p in (
        ("inverse_cdf_counts N=1e5",
         lambda: compiled.inverse_cdf_counts(cdf, u), lambda: fallback.inverse_cdf_counts(cdf, u)),
        ("map_update 1000x100, 9 obs",
         lambda: compiled.map_update(theta0.copy(), cells, y, 0.1),
         lambda: fallback.map_update(theta0.copy(), cells, y, 0.1)),
    ):
        rows.append((name, bench(fn_c, args.repeat), bench(fn_p, args.repeat)))

    times = {}
    for backend in ("compiled", "python"):
        env = dict(os.environ, RBPF_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", FILTER_SNIPPET.format(repeat=args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        times[backend] = float(out.stdout.strip())
    rows.append(("run_filter 10x10, N=100, T=150", times["compiled"], times["python"]))

    print(f"{'kernel':34s} {'compiled':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, tc, tp in rows:
        print(f"{name:34s} {tc * 1e3:9.2f}ms {tp * 1e3:9.2f}ms {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
