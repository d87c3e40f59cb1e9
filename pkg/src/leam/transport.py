"""Exact discrete optimal transport by the transportation simplex method.

The basis is a spanning tree over the ``m + n`` supply/demand nodes. The
initial basis comes from the north-west corner rule. Entering cells are
chosen by block pricing; after a long run of degenerate pivots the solver
switches to Bland's rule (smallest-index entering and leaving cells), which
cannot cycle. On exit the dual potentials certify optimality through
complementary slackness.

The same routine runs compiled (numba, loop pricing) or interpreted (numpy,
vectorised Dantzig pricing); see ``LEAM_DISABLE_NUMBA``.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel
from ._accel import njit

OPTIMAL = 0
ITERATION_LIMIT = 1
BROKEN_TREE = 2


def _simplex(C, a, b, max_iter, tol, vectorized):
    m, n = C.shape
    nn = m + n
    nb = nn - 1
    total = m * n

    bi = np.empty(nb, np.int64)
    bj = np.empty(nb, np.int64)
    x = np.empty(nb)
    ra = a.copy()
    rb = b.copy()
    i = 0
    j = 0
    for t in range(nb):
        q = min(ra[i], rb[j])
        if q < 0.0:
            q = 0.0
        bi[t] = i
        bj[t] = j
        x[t] = q
        ra[i] -= q
        rb[j] -= q
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ra[i] <= rb[j]:
            i += 1
        else:
            j += 1

    pot = np.zeros(nn)
    parent = np.empty(nn, np.int64)
    pedge = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    start = np.zeros(nn + 1, np.int64)
    fill = np.empty(nn, np.int64)
    adj = np.empty(2 * nb, np.int64)
    queue = np.empty(nn, np.int64)
    pu = np.empty(nn, np.int64)
    pw = np.empty(nn, np.int64)

    block = max(1, int(np.sqrt(total)))
    cursor = 0
    degenerate = 0
    bland = False
    status = ITERATION_LIMIT
    it = 0
    while it < max_iter:
        # adjacency (CSR over edge slots)
        start[:] = 0
        for t in range(nb):
            start[bi[t] + 1] += 1
            start[m + bj[t] + 1] += 1
        for v in range(nn):
            start[v + 1] += start[v]
        for v in range(nn):
            fill[v] = start[v]
        for t in range(nb):
            adj[fill[bi[t]]] = t
            fill[bi[t]] += 1
            adj[fill[m + bj[t]]] = t
            fill[m + bj[t]] += 1

        # potentials: u_i + v_j = c_ij on every basic cell, u_0 = 0
        for v in range(nn):
            parent[v] = -2
        parent[0] = -1
        depth[0] = 0
        pot[0] = 0.0
        queue[0] = 0
        head = 0
        tail = 1
        while head < tail:
            u = queue[head]
            head += 1
            for k in range(start[u], start[u + 1]):
                e = adj[k]
                v = m + bj[e] if u < m else bi[e]
                if parent[v] != -2:
                    continue
                parent[v] = u
                pedge[v] = e
                depth[v] = depth[u] + 1
                pot[v] = C[bi[e], bj[e]] - pot[u]
                queue[tail] = v
                tail += 1
        if tail != nn:
            status = BROKEN_TREE
            break

        # pricing
        enter = -1
        if vectorized:
            reduced = C - pot[:m].reshape(m, 1) - pot[m:].reshape(1, n)
            flat = reduced.ravel()
            if bland:
                hits = np.flatnonzero(flat < -tol)
                if hits.size:
                    enter = int(hits[0])
            else:
                cand = int(np.argmin(flat))
                if flat[cand] < -tol:
                    enter = cand
        elif bland:
            for idx in range(total):
                r = C[idx // n, idx % n] - pot[idx // n] - pot[m + idx % n]
                if r < -tol:
                    enter = idx
                    break
        else:
            best = -tol
            scanned = 0
            idx = cursor
            while scanned < total:
                r = C[idx // n, idx % n] - pot[idx // n] - pot[m + idx % n]
                if r < best:
                    best = r
                    enter = idx
                scanned += 1
                idx += 1
                if idx == total:
                    idx = 0
                if enter >= 0 and scanned % block == 0:
                    break
            cursor = idx
        if enter < 0:
            status = OPTIMAL
            break

        # cycle through the tree path between row ei and column ej
        ei = enter // n
        ej = enter % n
        u = ei
        w = m + ej
        nu = 0
        nw = 0
        while depth[u] > depth[w]:
            pu[nu] = pedge[u]
            nu += 1
            u = parent[u]
        while depth[w] > depth[u]:
            pw[nw] = pedge[w]
            nw += 1
            w = parent[w]
        while u != w:
            pu[nu] = pedge[u]
            nu += 1
            u = parent[u]
            pw[nw] = pedge[w]
            nw += 1
            w = parent[w]

        # even positions along the path lose mass, odd positions gain it
        theta = np.inf
        leave = -1
        for k in range(nu + nw):
            if k % 2 == 1:
                continue
            e = pu[k] if k < nu else pw[nw - 1 - (k - nu)]
            if x[e] < theta:
                theta = x[e]
                leave = e
            elif bland and x[e] == theta and bi[e] * n + bj[e] < bi[leave] * n + bj[leave]:
                leave = e
        for k in range(nu + nw):
            e = pu[k] if k < nu else pw[nw - 1 - (k - nu)]
            if k % 2 == 0:
                x[e] -= theta
            else:
                x[e] += theta
        bi[leave] = ei
        bj[leave] = ej
        x[leave] = theta

        if theta == 0.0:
            degenerate += 1
            if degenerate > nn:
                bland = True
        else:
            degenerate = 0
            bland = False
        it += 1
    return bi, bj, x, pot, status, it


_simplex_jit = njit(_simplex)


@dataclass(frozen=True)
class TransportResult:
    cost: float
    rows: np.ndarray
    cols: np.ndarray
    flow: np.ndarray
    u: np.ndarray
    v: np.ndarray
    iterations: int
    dual_gap: float
    min_reduced_cost: float

    def plan(self, shape):
        out = np.zeros(shape)
        np.add.at(out, (self.rows, self.cols), self.flow)
        return out


class TransportError(RuntimeError):
    pass


def _min_reduced_cost(C, u, v, chunk=512):
    best = np.inf
    for s in range(0, C.shape[0], chunk):
        block = C[s:s + chunk] - u[s:s + chunk, None] - v[None, :]
        best = min(best, float(block.min()))
    return best


def solve_transport(a, b, C, max_iter=None, use_numba=None):
    """Minimise sum(P * C) over plans P >= 0 with row sums a and column sums b.

    ``a`` and ``b`` must be positive with equal totals (b is rescaled to a's
    total to absorb rounding). Raises :class:`TransportError` if the result
    cannot be certified optimal.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    m, n = C.shape
    if a.shape != (m,) or b.shape != (n,):
        raise ValueError("marginals do not match the cost matrix")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginals must be strictly positive (drop empty cells first)")
    sa, sb = a.sum(), b.sum()
    if abs(sa - sb) > 1e-9 * max(sa, sb):
        raise ValueError(f"unbalanced marginals: {sa} vs {sb}")
    b = b * (sa / sb)
    scale = max(1.0, float(np.abs(C).max()))
    tol = 1e-11 * scale
    if max_iter is None:
        max_iter = 1000 * (m + n) + 100000
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if use_numba and _accel.NUMBA_AVAILABLE:
        bi, bj, x, pot, status, it = _simplex_jit(C, a, b, max_iter, tol, False)
    else:
        bi, bj, x, pot, status, it = _simplex(C, a, b, max_iter, tol, True)
    if status != OPTIMAL:
        raise TransportError(f"transport simplex stopped without optimality (status {status})")
    u, v = pot[:m].copy(), pot[m:].copy()
    cost = float(np.dot(x, C[bi, bj]))
    dual = float(np.dot(a, u) + np.dot(b, v))
    min_rc = _min_reduced_cost(C, u, v)
    gap = abs(cost - dual)
    cert = 1e-9 * scale * max(1.0, sa)
    if min_rc < -cert or gap > cert or np.any(x < 0):
        raise TransportError(f"optimality certificate failed (min reduced cost {min_rc:.3e}, gap {gap:.3e})")
    keep = x > 0
    return TransportResult(cost, bi[keep], bj[keep], x[keep], u, v, int(it), gap, min_rc)
