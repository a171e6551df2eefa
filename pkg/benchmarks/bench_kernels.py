"""Compare the compiled kernel backend against the pure-python fallback.

Run as: python3 benchmarks/bench_kernels.py [--repeats N]

Prints one row per kernel with both timings, the speedup, and the worst
numerical deviation between the two backends on identical inputs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from duo.kernels import pykernels
from duo.rng import Rng

try:
    from duo.kernels import _ckernels as ck

    HAVE_COMPILED = True
except ImportError:
    ck = None
    HAVE_COMPILED = False


def _time(fn, args, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(name, py_fn, c_fn, args, repeats, deviation):
    t_py = _time(py_fn, args, repeats)
    if c_fn is None:
        print(f"{name:24s} python {t_py * 1e3:8.2f} ms   compiled      n/a")
        return
    t_c = _time(c_fn, args, repeats)
    print(
        f"{name:24s} python {t_py * 1e3:8.2f} ms   compiled {t_c * 1e3:8.2f} ms"
        f"   speedup {t_py / t_c:5.1f}x   max dev {deviation:.2e}"
    )


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    repeats = args.repeats

    rng = Rng(99)
    print(f"compiled backend available: {HAVE_COMPILED}\n")

    x = rng.normal((8, 8, 64, 96))
    w = rng.normal((16, 8, 3, 3))
    gy = rng.normal((8, 16, 64, 96))
    dev = 0.0
    if HAVE_COMPILED:
        dev = float(np.max(np.abs(pykernels.conv2d3x3(x, w) - ck.conv2d3x3(x, w))))
    bench_case(
        "conv2d3x3 forward",
        pykernels.conv2d3x3,
        ck.conv2d3x3 if HAVE_COMPILED else None,
        (x, w),
        repeats,
        dev,
    )

    dev = 0.0
    if HAVE_COMPILED:
        dev = float(
            np.max(np.abs(pykernels.conv2d3x3_grad_w(x, gy) - ck.conv2d3x3_grad_w(x, gy)))
        )
    bench_case(
        "conv2d3x3 grad_w",
        pykernels.conv2d3x3_grad_w,
        ck.conv2d3x3_grad_w if HAVE_COMPILED else None,
        (x, gy),
        repeats,
        dev,
    )

    small = rng.normal((32, 48))

    def py_up(x_, h, w):
        for _ in range(64):
            pykernels.bilinear_resize(x_, h, w)

    def c_up(x_, h, w):
        for _ in range(64):
            ck.bilinear_resize(x_, h, w)

    dev = 0.0
    if HAVE_COMPILED:
        dev = float(
            np.max(
                np.abs(
                    pykernels.bilinear_resize(small, 64, 96)
                    - ck.bilinear_resize(small, 64, 96)
                )
            )
        )
    bench_case(
        "bilinear_resize x64",
        py_up,
        c_up if HAVE_COMPILED else None,
        (small, 64, 96),
        repeats,
        dev,
    )

    grad_big = rng.normal((64, 96))

    def py_adj(g, h, w):
        for _ in range(64):
            pykernels.bilinear_resize_adjoint(g, h, w)

    def c_adj(g, h, w):
        for _ in range(64):
            ck.bilinear_resize_adjoint(g, h, w)

    dev = 0.0
    if HAVE_COMPILED:
        dev = float(
            np.max(
                np.abs(
                    pykernels.bilinear_resize_adjoint(grad_big, 32, 48)
                    - ck.bilinear_resize_adjoint(grad_big, 32, 48)
                )
            )
        )
    bench_case(
        "bilinear_adjoint x64",
        py_adj,
        c_adj if HAVE_COMPILED else None,
        (grad_big, 32, 48),
        repeats,
        dev,
    )

    # jacobi on a batch of small symmetric matrices, the PSD-sweep shape
    mats = []
    for i in range(2000):
        c = 2 + i % 9
        m = rng.normal((c, c))
        mats.append(0.5 * (m + m.T))

    def py_sweep(ms):
        return [pykernels.jacobi_min_eigen(m.copy()) for m in ms]

    def c_sweep(ms):
        return [ck.jacobi_min_eigen(m.copy()) for m in ms]

    dev = 0.0
    if HAVE_COMPILED:
        dev = float(
            np.max(np.abs(np.array(py_sweep(mats)) - np.array(c_sweep(mats))))
        )
    bench_case(
        "jacobi_min_eigen x2000",
        py_sweep,
        c_sweep if HAVE_COMPILED else None,
        (mats,),
        max(1, repeats // 2),
        dev,
    )


if __name__ == "__main__":
    main()
