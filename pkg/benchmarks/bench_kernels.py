#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the raw per-triangle kernels on large arrays and one end-to-end
nonlinear solve per backend (the backend is chosen at import, so the solve
comparison re-runs this script under NSL_PURE_PY=1).

Run: python benchmarks/bench_kernels.py [--size N]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(size):
    from nsl._kernels import backends

    rng = np.random.default_rng(0)
    V = size
    T = 2 * size
    xy = np.ascontiguousarray(rng.random((V, 2)))
    tris = np.ascontiguousarray(rng.integers(0, V, (T, 3)), dtype="i4")
    tris[:, 1] = (tris[:, 0] + 1) % V  # non-degenerate index patterns
    tris[:, 2] = (tris[:, 0] + 2) % V
    values = rng.standard_normal(V)
    s2 = rng.random(T) * 10
    area = rng.random(T) + 0.1
    coef = np.ones(T)

    print(f"kernel timings, T = {T} triangles (best of 5)")
    header = f"{'kernel':<16}" + "".join(f"{name:>12}" for name in backends())
    print(header)
    rows = {
        "tri_gradients": lambda impl: impl.tri_gradients(xy, tris, values),
        "tri_means": lambda impl: impl.tri_means(tris, values),
        "p_terms": lambda impl: impl.p_terms(s2, 1.5, 1e-4),
        "p_energy_sum": lambda impl: impl.p_energy_sum(area, coef, s2, 1.5, 1e-4),
    }
    for label, call in rows.items():
        cells = []
        for name, impl in backends().items():
            cells.append(f"{time_call(call, impl) * 1e3:>10.2f}ms")
        print(f"{label:<16}" + "".join(cells))


def bench_solve():
    from nsl import KERNEL_BACKEND
    from nsl.geometry import PixelDomain
    from nsl.mesh import triangulate
    from nsl.solver import ProblemSpec, solve

    mesh = triangulate(PixelDomain.full(96))
    spec = ProblemSpec(p=1.5, b=1.0, f=8.0)
    t0 = time.perf_counter()
    rep = solve(mesh, spec)
    dt = time.perf_counter() - t0
    print(
        f"solve backend={KERNEL_BACKEND:<7} n=96 p=1.5: {dt:.2f}s "
        f"({rep.newton_iters} newton steps)"
    )


def main():
    par = argparse.ArgumentParser()
    par.add_argument("--size", type=int, default=500_000)
    par.add_argument("--solve-only", action="store_true")
    args = par.parse_args()

    if args.solve_only:
        bench_solve()
        return

    bench_kernels(args.size)
    bench_solve()
    if not os.environ.get("NSL_PURE_PY"):
        env = dict(os.environ, NSL_PURE_PY="1")
        subprocess.run(
            [sys.executable, __file__, "--solve-only"], env=env, check=False
        )


if __name__ == "__main__":
    main()
