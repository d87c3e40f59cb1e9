"""Compiled (numba) vs pure-numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly, so the ``LEAM_DISABLE_NUMBA`` switch is
not needed here. The first compiled call is excluded (JIT warm-up).
"""
import argparse
import time

import numpy as np

from leam import _accel, _kernels
from leam.transport import solve_transport


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def grid_cost(side):
    pts = np.argwhere(np.ones((side, side))).astype(np.float64)
    return np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))


def cases(rng):
    x = rng.standard_normal((16, 64, 64))
    w = rng.standard_normal((32, 16, 3, 3))
    b = np.zeros(32)
    dy = rng.standard_normal((32, 32, 32))
    src = rng.random((512, 512))
    ys, xs = np.mgrid[0:512, 0:512].astype(np.float64)
    ys, xs = ys * 0.97 + 3.3, xs * 1.01 - 2.1
    side = 12
    a = rng.random(side * side) + 0.1
    q = rng.random(side * side) + 0.1
    a, q = a / a.sum(), q / q.sum()
    C = grid_cost(side)
    return [
        ("conv2d forward 16->32 @64x64 s2",
         lambda: _kernels.conv2d_forward_numba(x, w, b, 2, 1),
         lambda: _kernels.conv2d_forward_numpy(x, w, b, 2, 1)),
        ("conv2d backward 32->16 @64x64 s2",
         lambda: _kernels.conv2d_backward_numba(dy, w, x.shape, 2, 1),
         lambda: _kernels.conv2d_backward_numpy(dy, w, x.shape, 2, 1)),
        ("bilinear gather 512x512",
         lambda: _kernels.bilinear_gather_numba(src, ys, xs),
         lambda: _kernels.bilinear_gather_numpy(src, ys, xs)),
        (f"transport simplex {side}x{side} grid",
         lambda: solve_transport(a, q, C, use_numba=True),
         lambda: solve_transport(a, q, C, use_numba=False)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is disabled or missing; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numba [s]':>10s} {'numpy [s]':>10s} {'ratio':>7s}")
    for name, compiled, plain in cases(rng):
        compiled()  # warm-up / JIT
        tc = best_of(compiled, args.repeat)
        tp = best_of(plain, args.repeat)
        print(f"{name:36s} {tc:10.4f} {tp:10.4f} {tp / tc:7.2f}")


if __name__ == "__main__":
    main()
