"""Numba vs numpy timings for the hot kernels.

Run with ``python3 benchmarks/bench_backends.py [--paths N] [--repeat R]``.
Both backends are imported in one process (the numpy twins are always
available), so the env flag is not needed here.  The first numba call is
timed separately as compilation plus cache load.
"""
from __future__ import annotations

import argparse
import math
import time

import numpy as np

from pssmp import kernels
from pssmp import mc_kernels as K
from pssmp.levy_model import SnlpModel
from pssmp.mc_oracle import PathConfig, _pack


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--grid", type=int, default=4096)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    n = args.grid + 1
    f, g, w = rng.random(n), rng.random(n), rng.random(n)
    h = 1.0 / args.grid

    model = SnlpModel(0.5, 0.3, ((1.0, 2.0), (0.5, 5.0)), p=0.2, alpha=1.0)
    cfg = PathConfig(dt=1e-4, n_paths=args.paths, base_seed=1)
    packed = _pack(model, math.log(1.5), 0.0, math.log(2.0), cfg, None)
    sgrid = np.empty(0)

    cases = [
        (f"trap_convolve n={n}", lambda: kernels.trap_convolve_numba(f, g, h), lambda: kernels.trap_convolve_numpy(f, g, h)),
        (
            f"volterra_solve n={n}",
            lambda: kernels.volterra_solve_numba(f, g, w, 0.5, h),
            lambda: kernels.volterra_solve_numpy(f, g, w, 0.5, h),
        ),
        (
            f"two-sided paths n={args.paths}",
            lambda: K.simulate_numba(*packed, sgrid, 1, 0, args.paths),
            lambda: K.simulate_numpy(*packed, sgrid, 1, 0, args.paths),
        ),
    ]

    print(f"{'kernel':32s} {'first numba':>12s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for name, nb, npy in cases:
        t0 = time.perf_counter()
        nb()
        first = time.perf_counter() - t0
        t_nb = best_of(nb, args.repeat)
        t_np = best_of(npy, args.repeat)
        print(f"{name:32s} {first:12.4f} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x")

    a = K.simulate_numba(*packed, sgrid, 1, 0, 2000)
    b = K.simulate_numpy(*packed, sgrid, 1, 0, 2000)
    same = all(np.allclose(a[k], b[k], rtol=1e-12, atol=1e-12, equal_nan=True) for k in a)
    print(f"path outputs identical across backends (2000 paths): {same}")


if __name__ == "__main__":
    main()
