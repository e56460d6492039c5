"""Timing comparison of the two kernel backends (jitted vs vectorized).

Usage:
    python3 benchmarks/bench_kernels.py [--sizes 64,128,256] [--repeats 200]

Both implementations are imported directly, so the CHEMOSTOKES_BACKEND
environment flag does not matter here. The jitted path is warmed before
timing; compilation cost is excluded.
"""

import argparse
import statistics
import time

import numpy as np

from chemostokes import kernels_numpy

try:
    from chemostokes import kernels_numba
except ImportError:
    kernels_numba = None


def make_data(n, rng):
    p = rng.standard_normal((n, n))
    fx = rng.standard_normal((n + 1, n))
    fy = rng.standard_normal((n, n + 1))
    fx[0, :] = fx[-1, :] = 0.0
    fy[:, 0] = fy[:, -1] = 0.0
    ih = float(n)
    ih2 = float(n) ** 2
    return p, fx, fy, ih, ih2


def ops(impl, n, rng):
    p, fx, fy, ih, ih2 = make_data(n, rng)
    smooth = np.add.outer(np.cos(np.linspace(0, 3, n)),
                          np.sin(np.linspace(0, 2, n)))
    zeros = np.zeros_like(p)
    return [
        ("lap_neumann", lambda: impl.lap_neumann(p, ih2, ih2)),
        ("grad_x", lambda: impl.grad_x(p, ih)),
        ("div_faces", lambda: impl.div_faces(fx, fy, ih, ih)),
        ("upwind_flux_div", lambda: impl.upwind_flux_div(fx, fy, p, ih, ih)),
        ("gradsq_cell", lambda: impl.gradsq_cell(fx, fy)),
        ("cg_helmholtz_neumann",
         lambda: impl.cg_helmholtz_neumann(smooth, zeros, 1e-3, ih2, ih2,
                                           1e-10, 10000)),
    ]


def time_op(fn, repeats):
    fn()  # warm (and jit-compile on the numba path)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples) * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="64,128,256")
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if kernels_numba is None:
        print("numba backend unavailable; timing the numpy backend only")
    header = f"{'kernel':<22}{'n':>6}{'numpy (us)':>14}{'numba (us)':>14}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        rng = np.random.default_rng(0)
        numpy_ops = ops(kernels_numpy, n, rng)
        rng = np.random.default_rng(0)
        numba_ops = ops(kernels_numba, n, rng) if kernels_numba else None
        for i, (name, fn) in enumerate(numpy_ops):
            reps = args.repeats if name.startswith(("lap", "grad", "div",
                                                    "upwind")) else max(
                10, args.repeats // 10)
            t_np = time_op(fn, reps)
            if numba_ops is None:
                print(f"{name:<22}{n:>6}{t_np:>14.1f}{'-':>14}{'-':>10}")
                continue
            t_nb = time_op(numba_ops[i][1], reps)
            print(f"{name:<22}{n:>6}{t_np:>14.1f}{t_nb:>14.1f}"
                  f"{t_np / t_nb:>9.1f}x")
        print()


if __name__ == "__main__":
    main()
