"""Hot loops with an optional numba backend.

Every kernel here has a pure-numpy twin. The numba versions are used when
numba imports cleanly and ``CYLCALC_NUMBA`` is not set to ``0``. Both
backends must agree to rounding; the benchmark in ``benchmarks/`` and the
test-suite compare them.
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return decorator


def numba_enabled() -> bool:
    """True when the numba kernels are selected."""
    return HAVE_NUMBA and os.environ.get("CYLCALC_NUMBA", "1") != "0"


def apply_thread_limit() -> int | None:
    """Honour ``CYLCALC_THREADS`` for numba parallel regions.

    Returns the limit that was applied, or None if the variable is unset.
    """
    raw = os.environ.get("CYLCALC_THREADS")
    if not raw:
        return None
    n = max(1, int(raw))
    if HAVE_NUMBA:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------------------
# stencil assembly
# ---------------------------------------------------------------------------


@njit(cache=True)
def _assemble_nb(out, blocks, row_class, r, n_t, n_x, J):
    nl = 2 * J + 1
    for c in range(r):
        for j in range(n_t):
            cls = row_class[j]
            for li in range(nl):
                jj = j + li - J
                if jj < 0 or jj >= n_t:
                    continue
                for cc in range(r):
                    for i in range(n_x):
                        p = (c * n_t + j) * n_x + i
                        bi = c * n_x + i
                        for ii in range(n_x):
                            out[p, (cc * n_t + jj) * n_x + ii] = blocks[cls, li, bi, cc * n_x + ii]


def _assemble_np(out, blocks, row_class, r, n_t, n_x, J):
    o6 = out.reshape(r, n_t, n_x, r, n_t, n_x)
    for li in range(2 * J + 1):
        l = li - J
        js = np.arange(max(0, -l), min(n_t, n_t - l))
        if js.size == 0:
            continue
        b = blocks[row_class[js], li].reshape(js.size, r, n_x, r, n_x)
        # advanced indices on axes 1 and 4 are moved to the front
        o6[:, js, :, :, js + l, :] = b


def assemble_stencil(blocks, row_class, r, n_t, n_x, J, dtype=None):
    """Dense matrix from per-row t-offset link blocks.

    Parameters
    ----------
    blocks : ndarray, shape (n_class, 2J+1, r*n_x, r*n_x)
        ``blocks[c, l+J]`` couples row ``t_j`` to column ``t_{j+l}``.
    row_class : ndarray of int, shape (n_t,)
        Which block set each t-row uses.
    """
    dtype = dtype or blocks.dtype
    n = r * n_t * n_x
    out = np.zeros((n, n), dtype=dtype)
    blocks = np.ascontiguousarray(blocks, dtype=dtype)
    row_class = np.ascontiguousarray(row_class, dtype=np.int64)
    if numba_enabled():
        _assemble_nb(out, blocks, row_class, r, n_t, n_x, J)
    else:
        _assemble_np(out, blocks, row_class, r, n_t, n_x, J)
    return out


# ---------------------------------------------------------------------------
# kernel profiles
# ---------------------------------------------------------------------------


@njit(cache=True)
def _offset_profile_nb(absmat, tidx, rows, n_off):
    prof = np.zeros(n_off)
    for a in range(rows.shape[0]):
        p = rows[a]
        jp = tidx[p]
        for q in range(absmat.shape[1]):
            d = abs(tidx[q] - jp)
            if d < n_off:
                v = absmat[p, q]
                if v > prof[d]:
                    prof[d] = v
    return prof


def _offset_profile_np(absmat, tidx, rows, n_off):
    prof = np.zeros(n_off)
    sub = absmat[rows]
    d = np.abs(tidx[None, :] - tidx[rows][:, None])
    mask = d < n_off
    np.maximum.at(prof, d[mask], sub[mask])
    return prof


def offset_profile(mat, tidx, rows, n_off):
    """Max ``|mat[p, q]|`` over ``p in rows`` grouped by t-index offset."""
    absmat = np.ascontiguousarray(np.abs(mat), dtype=np.float64)
    tidx = np.ascontiguousarray(tidx, dtype=np.int64)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    if numba_enabled():
        return _offset_profile_nb(absmat, tidx, rows, int(n_off))
    return _offset_profile_np(absmat, tidx, rows, int(n_off))


@njit(cache=True)
def _weighted_sup_nb(absmat, WP, WQ):
    npow = WQ.shape[0]
    rowmax = np.zeros((npow, absmat.shape[0]))
    for p in range(absmat.shape[0]):
        for q in range(absmat.shape[1]):
            v = absmat[p, q]
            if v == 0.0:
                continue
            for b in range(npow):
                val = WQ[b, q] * v
                if val > rowmax[b, p]:
                    rowmax[b, p] = val
    out = np.zeros((npow, npow))
    for a in range(npow):
        for b in range(npow):
            for p in range(absmat.shape[0]):
                val = WP[a, p] * rowmax[b, p]
                if val > out[a, b]:
                    out[a, b] = val
    return out


def _weighted_sup_np(absmat, WP, WQ):
    # weights are non-negative, so the sup factorises: max_p wp^i max_q wq^j |m|
    rowmax = np.stack([np.max(absmat * w[None, :], axis=1) for w in WQ])
    return np.max(WP[:, None, :] * rowmax[None, :, :], axis=2)


def weighted_sup_norms(mat, wp, wq, powers):
    """``sup |wp(p)^i wq(q)^j mat[p, q]|`` for all ``i, j`` in ``powers``."""
    absmat = np.ascontiguousarray(np.abs(mat), dtype=np.float64)
    wp = np.ascontiguousarray(np.abs(wp), dtype=np.float64)
    wq = np.ascontiguousarray(np.abs(wq), dtype=np.float64)
    powers = np.asarray(powers, dtype=np.float64)
    WP = np.ascontiguousarray(wp[None, :] ** powers[:, None])
    WQ = np.ascontiguousarray(wq[None, :] ** powers[:, None])
    if numba_enabled():
        return _weighted_sup_nb(absmat, WP, WQ)
    return _weighted_sup_np(absmat, WP, WQ)
