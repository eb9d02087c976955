"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The backend is chosen once at import time: numba is used when it imports
cleanly, unless the environment variable ``CPILAB_NUMBA`` is set to ``"0"``,
in which case the vectorised numpy fallbacks run instead.  Both backends are
kept importable so they can be benchmarked against each other (see
``benchmarks/bench_kernels.py``) and cross-checked in the test suite.
"""

from __future__ import annotations

import math
import os

import numpy as np

_WANT_NUMBA = os.environ.get("CPILAB_NUMBA", "1") != "0"

if _WANT_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba = None
else:
    numba = None

HAVE_NUMBA = numba is not None


# ---------------------------------------------------------------------------
# P1 element assembly: 9 stiffness and 9 mass entries per triangle, emitted in
# (triangle, local row, local col) order so both backends produce identical
# triplet streams.
# ---------------------------------------------------------------------------

def _p1_triplets_numpy(px, py, tris, stiff_scale):
    x = px[tris]  # (nt, 3)
    y = py[tris]
    # edge coefficients: b_i = y_j - y_k, c_i = x_k - x_j (cyclic)
    b = y[:, [1, 2, 0]] - y[:, [2, 0, 1]]
    c = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    area2 = x[:, 1] * y[:, 2] - x[:, 2] * y[:, 1] \
        - x[:, 0] * (y[:, 2] - y[:, 1]) + y[:, 0] * (x[:, 2] - x[:, 1])
    area = 0.5 * area2
    nt = tris.shape[0]
    tri64 = tris.astype(np.int64, copy=False)
    rows = np.repeat(tri64, 3, axis=1).reshape(nt, 9)
    cols = np.tile(tri64, (1, 3)).reshape(nt, 9)
    ab = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    avals = ab / (4.0 * area)[:, None, None] * stiff_scale[:, None, None]
    mpat = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
    mvals = (area / 12.0)[:, None, None] * mpat[None, :, :]
    return (rows.ravel(), cols.ravel(), avals.reshape(nt, 9).ravel(),
            mvals.reshape(nt, 9).ravel())


def _p1_triplets_seq(px, py, tris, stiff_scale):
    nt = tris.shape[0]
    rows = np.empty(9 * nt, dtype=np.int64)
    cols = np.empty(9 * nt, dtype=np.int64)
    avals = np.empty(9 * nt, dtype=np.float64)
    mvals = np.empty(9 * nt, dtype=np.float64)
    b = np.empty(3, dtype=np.float64)
    c = np.empty(3, dtype=np.float64)
    for t in range(nt):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        x0, x1, x2 = px[i0], px[i1], px[i2]
        y0, y1, y2 = py[i0], py[i1], py[i2]
        b[0] = y1 - y2
        b[1] = y2 - y0
        b[2] = y0 - y1
        c[0] = x2 - x1
        c[1] = x0 - x2
        c[2] = x1 - x0
        area = 0.5 * (x1 * y2 - x2 * y1 - x0 * (y2 - y1) + y0 * (x2 - x1))
        s = stiff_scale[t]
        base = 9 * t
        k = 0
        for li in range(3):
            for lj in range(3):
                rows[base + k] = tris[t, li]
                cols[base + k] = tris[t, lj]
                avals[base + k] = (b[li] * b[lj] + c[li] * c[lj]) / (4.0 * area) * s
                mvals[base + k] = (area / 12.0) * (2.0 if li == lj else 1.0)
                k += 1
    return rows, cols, avals, mvals


# ---------------------------------------------------------------------------
# Lebesgue function of a Lagrange node set, maximised over a grid.  Evaluated
# in log space: products of up to a few hundred node distances underflow in
# double precision otherwise.
# ---------------------------------------------------------------------------

def _lebesgue_max_numpy(nodes, grid):
    logw = np.empty_like(nodes)
    for j in range(nodes.size):
        d = nodes[j] - nodes
        d[j] = 1.0
        logw[j] = -np.sum(np.log(np.abs(d)))
    best = 0.0
    chunk = max(1, int(2e6) // max(nodes.size, 1))
    for lo in range(0, grid.size, chunk):
        t = grid[lo:lo + chunk]
        dist = np.abs(t[:, None] - nodes[None, :])
        logprod = np.sum(np.log(dist), axis=1)
        terms = np.exp(logprod[:, None] - np.log(dist) + logw[None, :])
        best = max(best, float(np.max(np.sum(terms, axis=1))))
    return best


def _lebesgue_max_seq(nodes, grid):
    n = nodes.size
    logw = np.empty(n, dtype=np.float64)
    for j in range(n):
        s = 0.0
        for i in range(n):
            if i != j:
                s += math.log(abs(nodes[j] - nodes[i]))
        logw[j] = -s
    best = 0.0
    for g in range(grid.size):
        t = grid[g]
        logprod = 0.0
        for i in range(n):
            logprod += math.log(abs(t - nodes[i]))
        acc = 0.0
        for j in range(n):
            acc += math.exp(logprod - math.log(abs(t - nodes[j])) + logw[j])
        if acc > best:
            best = acc
    return best


if HAVE_NUMBA:
    _p1_triplets_numba = numba.njit(cache=True)(_p1_triplets_seq)
    _lebesgue_max_numba = numba.njit(cache=True)(_lebesgue_max_seq)

    def p1_triplets(px, py, tris, stiff_scale):
        return _p1_triplets_numba(px, py, tris, stiff_scale)

    def lebesgue_max(nodes, grid):
        return _lebesgue_max_numba(nodes, grid)
else:
    p1_triplets = _p1_triplets_numpy
    lebesgue_max = _lebesgue_max_numpy


def backend_name():
    """Which kernel backend is active: ``"numba"`` or ``"numpy"``."""
    return "numba" if HAVE_NUMBA else "numpy"
