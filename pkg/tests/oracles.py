"""Independent brute-force reference implementations used by the tests."""
import math
from itertools import combinations

import numpy as np

from leam.maps import cosine_loss, cosine_loss_grad
from leam.tensor import backward, forward, layer_index, run_layers


def naive_conv2d(x, w, b, stride, pad):
    C, H, W = x.shape
    K, _, kh, kw = w.shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    xp[:, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((K, Ho, Wo))
    for k in range(K):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
                out[k, i, j] = float((patch * w[k]).sum()) + b[k]
    return out


def naive_bilinear(src, y, x):
    """Value at fractional (y, x) with zero outside, from first principles."""
    H, W = src.shape
    total = 0.0
    for r in (math.floor(y), math.floor(y) + 1):
        for c in (math.floor(x), math.floor(x) + 1):
            wy = 1.0 - abs(y - r)
            wx = 1.0 - abs(x - c)
            if 0 <= r < H and 0 <= c < W and wy > 0 and wx > 0:
                total += wy * wx * src[r, c]
    return total


def finite_difference_check(net, image, other_embedding, n_per_layer, rng, h=1e-5, kink=1e-3):
    """Compare backward() against central differences on sampled activation elements.

    The loss is ``1 - cos(embedding, other_embedding)``; elements whose
    activation lies within ``kink`` of the ReLU hinge are not sampled.
    Returns the list of relative errors (absolute floor 1e-6).
    """
    trace = forward(net, image)
    grads = backward(net, trace, cosine_loss_grad(trace.embedding, other_embedding))
    errors = []
    for name, act in trace.recorded:
        start = layer_index(net, name) + 1
        g = grads.gradient(name)
        flat = np.flatnonzero(np.abs(act.ravel()) > kink)
        for idx in rng.choice(flat, size=min(n_per_layer, flat.size), replace=False):
            a = np.array(act)
            pos = np.unravel_index(idx, a.shape)
            a[pos] += h
            up = cosine_loss(run_layers(net, a, start), other_embedding)
            a[pos] -= 2 * h
            down = cosine_loss(run_layers(net, a, start), other_embedding)
            fd = (up - down) / (2 * h)
            errors.append(abs(fd - g[pos]) / max(abs(fd), abs(g[pos]), 1e-6))
    return errors


def lp_transport(a, b, C):
    """Optimal transport cost by a generic LP over the full plan polytope."""
    from scipy.optimize import linprog

    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def grid_cost(shape, cell=(1.0, 1.0)):
    pts = np.argwhere(np.ones(shape)).astype(np.float64) * cell
    return np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))


def enumerate_u_pvalue(x, y, alternative):
    """Exact Mann-Whitney p by enumerating every split of the pooled ranks."""
    pooled = sorted(list(x) + list(y))
    n = len(x)
    observed = sum(1.0 for xi in x for yj in y if xi > yj) + 0.5 * sum(1 for xi in x for yj in y if xi == yj)
    us = []
    for idx in combinations(range(len(pooled)), n):
        chosen = [pooled[i] for i in idx]
        rest = [pooled[i] for i in range(len(pooled)) if i not in idx]
        us.append(sum(1.0 for a in chosen for b in rest if a > b))
    total = len(us)
    ge = sum(1 for u in us if u >= observed - 1e-12) / total
    le = sum(1 for u in us if u <= observed + 1e-12) / total
    if alternative == "greater":
        return observed, ge
    if alternative == "less":
        return observed, le
    return observed, min(1.0, 2 * min(ge, le))
