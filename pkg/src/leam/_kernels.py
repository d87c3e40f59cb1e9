"""Hot inner loops: convolution forward/backward and bilinear gather.

Each kernel has an explicit-loop form compiled with numba and a vectorised
numpy form. ``bilinear_gather`` dispatches on ``_accel.USE_NUMBA``. The
convolutions always run the numpy form: its per-tap ``tensordot`` goes
through BLAS and beats the compiled loops at DeskNet sizes (see
``benchmarks/bench_kernels.py``); the loop form is kept as an independent
reference.
"""
import numpy as np

from . import _accel
from ._accel import njit


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


# -- numba loop kernels ------------------------------------------------------

def _valid_range(n_out, n_in, offset, stride):
    # output indices o with 0 <= o * stride + offset < n_in
    lo = 0
    while lo < n_out and lo * stride + offset < 0:
        lo += 1
    hi = n_out
    while hi > lo and (hi - 1) * stride + offset >= n_in:
        hi -= 1
    return lo, hi


def _conv2d_forward_loops(x, w, b, stride, pad):
    C, H, W = x.shape
    K, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((K, Ho, Wo))
    for k in range(K):
        out[k, :, :] = b[k]
    for c in range(C):
        for di in range(kh):
            i_lo, i_hi = _valid_range(Ho, H, di - pad, stride)
            for dj in range(kw):
                j_lo, j_hi = _valid_range(Wo, W, dj - pad, stride)
                off = dj - pad
                for i in range(i_lo, i_hi):
                    xrow = x[c, i * stride + di - pad]
                    for k in range(K):
                        wv = w[k, c, di, dj]
                        orow = out[k, i]
                        for j in range(j_lo, j_hi):
                            orow[j] += wv * xrow[j * stride + off]
    return out


def _conv2d_backward_loops(dy, w, in_shape, stride, pad):
    C, H, W = in_shape
    K, _, kh, kw = w.shape
    _, Ho, Wo = dy.shape
    dx = np.zeros((C, H, W))
    for c in range(C):
        for di in range(kh):
            i_lo, i_hi = _valid_range(Ho, H, di - pad, stride)
            for dj in range(kw):
                j_lo, j_hi = _valid_range(Wo, W, dj - pad, stride)
                off = dj - pad
                for i in range(i_lo, i_hi):
                    xrow = dx[c, i * stride + di - pad]
                    for k in range(K):
                        wv = w[k, c, di, dj]
                        grow = dy[k, i]
                        for j in range(j_lo, j_hi):
                            xrow[j * stride + off] += wv * grow[j]
    return dx


def _bilinear_gather_loops(src, ys, xs):
    H, W = src.shape
    Ho, Wo = ys.shape
    out = np.zeros((Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            y = ys[i, j]
            x = xs[i, j]
            y0 = np.floor(y)
            x0 = np.floor(x)
            fy = y - y0
            fx = x - x0
            r0 = int(y0)
            c0 = int(x0)
            acc = 0.0
            for dr in range(2):
                r = r0 + dr
                if r < 0 or r >= H:
                    continue
                wy = fy if dr == 1 else 1.0 - fy
                for dc in range(2):
                    c = c0 + dc
                    if c < 0 or c >= W:
                        continue
                    wx = fx if dc == 1 else 1.0 - fx
                    acc += wy * wx * src[r, c]
            out[i, j] = acc
    return out


_valid_range = njit(_valid_range)
conv2d_forward_numba = njit(_conv2d_forward_loops)
conv2d_backward_numba = njit(_conv2d_backward_loops)
bilinear_gather_numba = njit(_bilinear_gather_loops)


# -- numpy kernels -----------------------------------------------------------

def conv2d_forward_numpy(x, w, b, stride, pad):
    C, H, W = x.shape
    K, _, kh, kw = w.shape
    Ho, Wo = _out_size(H, kh, stride, pad), _out_size(W, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.repeat(b.astype(np.float64)[:, None, None], Ho * Wo, axis=1).reshape(K, Ho, Wo)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride]
            out += np.tensordot(w[:, :, di, dj], patch, axes=(1, 0))
    return out


def conv2d_backward_numpy(dy, w, in_shape, stride, pad):
    C, H, W = in_shape
    K, _, kh, kw = w.shape
    _, Ho, Wo = dy.shape
    dxp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    for di in range(kh):
        for dj in range(kw):
            dxp[:, di:di + stride * (Ho - 1) + 1:stride, dj:dj + stride * (Wo - 1) + 1:stride] += (
                np.tensordot(w[:, :, di, dj], dy, axes=(0, 0))
            )
    return dxp[:, pad:pad + H, pad:pad + W].copy()


def bilinear_gather_numpy(src, ys, xs):
    H, W = src.shape
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    r0 = y0.astype(np.int64)
    c0 = x0.astype(np.int64)
    out = np.zeros(ys.shape)
    for dr in (0, 1):
        r = r0 + dr
        wy = fy if dr else 1.0 - fy
        for dc in (0, 1):
            c = c0 + dc
            wx = fx if dc else 1.0 - fx
            ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
            vals = np.zeros(ys.shape)
            vals[ok] = src[r[ok], c[ok]]
            out += wy * wx * vals
    return out


# -- dispatch ----------------------------------------------------------------

conv2d_forward = conv2d_forward_numpy
conv2d_backward = conv2d_backward_numpy


def bilinear_gather(src, ys, xs):
    """Sample ``src`` at fractional (row, col) positions; zero outside."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    if _accel.USE_NUMBA:
        return bilinear_gather_numba(src, ys, xs)
    return bilinear_gather_numpy(src, ys, xs)
