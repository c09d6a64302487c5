"""Sobolev norms on the grid.

``H^s`` is realised by the Fourier weight ``(1 + k^2 + tau^2)^{s/2}`` over
the discrete frequencies of the whole grid (periodic in t). Sections are
required to vanish in the truncation margin, which makes the periodic
t-transform a faithful stand-in for the transform on the line.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, svds

from .geometry import CylinderGrid, GridError, PartitionOfUnity, partition_for_grid, rho


def _freqs(grid: CylinderGrid):
    k = grid.link.k
    om = 2 * np.pi * np.fft.fftfreq(grid.n_t, d=grid.h_t)
    return om[:, None], k[None, :]


def weight_symbol(grid: CylinderGrid, s: float) -> np.ndarray:
    """``(1 + k^2 + tau^2)^{s/2}`` on the ``(n_t, n_x)`` frequency grid."""
    om, k = _freqs(grid)
    return (1.0 + k * k + om * om) ** (s / 2.0)


def apply_weight(u: np.ndarray, grid: CylinderGrid, s: float) -> np.ndarray:
    """``W_s u`` for ``u`` of shape ``(..., n_t, n_x)``."""
    if s == 0:
        return np.array(u, copy=True)
    U = np.fft.fft2(u, axes=(-2, -1))
    out = np.fft.ifft2(U * weight_symbol(grid, s), axes=(-2, -1))
    if not np.iscomplexobj(u):
        out = out.real
    return out


def l2_norm(u: np.ndarray, grid) -> float:
    return float(np.sqrt(np.sum(np.abs(u) ** 2) * grid.cell))


def _check_margin(u, grid: CylinderGrid, tol: float = 0.0):
    mask = ~grid.interior_mask()
    if np.max(np.abs(np.asarray(u)[..., mask, :]), initial=0.0) > tol:
        raise GridError("section does not vanish in the truncation margin")


def sobolev_norm(u: np.ndarray, grid: CylinderGrid, s: float, check: bool = True) -> float:
    """Fourier-weight norm ``||W_s u||_{L^2}``."""
    if check:
        _check_margin(u, grid)
    return l2_norm(apply_weight(u, grid, s), grid)


def covariant_norm(u: np.ndarray, grid: CylinderGrid, k: int) -> float:
    """``(sum_{j<=k} ||nabla^j u||^2)^{1/2}`` with spectral derivatives.

    For the flat connection ``|nabla^j u|^2`` summed over all index
    orderings has Fourier multiplier ``(k^2 + tau^2)^j``.
    """
    if k < 0 or int(k) != k:
        raise ValueError("k must be a non-negative integer")
    _check_margin(u, grid)
    om, kk = _freqs(grid)
    U = np.fft.fft2(u, axes=(-2, -1))
    lap = kk * kk + om * om
    tot = 0.0
    n = grid.size
    for j in range(int(k) + 1):
        tot += np.sum(lap ** j * np.abs(U) ** 2) / n
    return float(np.sqrt(tot * grid.cell))


def _band_norm(v: np.ndarray, grid: CylinderGrid, m: float, lo: float, hi: float) -> float:
    """H^m norm of ``v`` (supported in ``[lo, hi]``) on a zero-padded window."""
    width = hi - lo
    a = lo - 1.5 * width
    b = hi + 1.5 * width  # window of 4 band widths
    rows = np.nonzero((grid.t >= a) & (grid.t < b))[0]
    seg = v[..., rows, :]
    nt = seg.shape[-2]
    om = 2 * np.pi * np.fft.fftfreq(nt, d=grid.h_t)[:, None]
    kk = grid.link.k[None, :]
    U = np.fft.fft2(seg, axes=(-2, -1))
    w = (1.0 + kk * kk + om * om) ** m
    return float(np.sqrt(np.sum(w * np.abs(U) ** 2) / (nt * grid.n_x) * grid.cell))


def partition_norm(u: np.ndarray, grid: CylinderGrid, m: float, R: float | None = None,
                   pu: PartitionOfUnity | None = None) -> float:
    """``(||phi_0^2 u||^2_{H^m} + sum_k ||phi_k^2 u||^2_{H^m(band)})^{1/2}``."""
    _check_margin(u, grid)
    pu = pu or partition_for_grid(grid, None if R is None else int(R))
    t = grid.t
    core = pu.core_sq(t)[:, None] * u
    tot = sobolev_norm(core, grid, m, check=False) ** 2
    for end in ("left", "right"):
        for kk, c in enumerate(pu.centres(end), start=1):
            prof = pu.band_sq(t, end, kk)
            if not np.any(prof > 0):
                continue
            v = prof[:, None] * u
            if not np.any(v):
                continue
            tot += _band_norm(v, grid, m, c - 1.0, c + 1.0) ** 2
    return float(np.sqrt(tot))


def weighted_norm(u: np.ndarray, grid: CylinderGrid, k: int, s: float) -> float:
    """``||rho^{-k} u||_{H^s}``."""
    r = rho(grid.t)[:, None]
    return sobolev_norm(u * r ** (-k), grid, s)


# ---------------------------------------------------------------------------
# operator norms
# ---------------------------------------------------------------------------


def _weight_matrix_cols(grid: CylinderGrid, s: float, rank: int, cols: np.ndarray) -> np.ndarray:
    """Dense columns of ``W_s`` (rank-blocked) for the flat indices ``cols``."""
    m = grid.size
    out = np.zeros((rank * m, cols.size))
    for c in range(rank):
        sel = (cols // m) == c
        if not np.any(sel):
            continue
        loc = cols[sel] % m
        E = np.zeros((loc.size, grid.n_t, grid.n_x))
        E[np.arange(loc.size), loc // grid.n_x, loc % grid.n_x] = 1.0
        W = apply_weight(E, grid, s).reshape(loc.size, m)
        out[c * m:(c + 1) * m, np.nonzero(sel)[0]] = W.T
    return out


def _apply_weight_rows(A: np.ndarray, grid: CylinderGrid, s: float, rank: int) -> np.ndarray:
    """``W_s @ A`` for a (rank*size, n) matrix."""
    if s == 0:
        return A
    m = grid.size
    out = np.empty_like(A, dtype=np.result_type(A, float))
    for c in range(rank):
        blk = A[c * m:(c + 1) * m].T.reshape(-1, grid.n_t, grid.n_x)
        W = apply_weight(blk, grid, s)
        out[c * m:(c + 1) * m] = W.reshape(-1, m).T
    return out


def largest_singular_value(A: np.ndarray) -> float:
    n = min(A.shape)
    if n <= 400:
        return float(np.linalg.norm(A, 2))
    try:
        s = svds(A, k=1, return_singular_vectors=False, tol=1e-10, maxiter=5000)
        return float(s[0])
    except Exception:  # pragma: no cover - fallback
        return float(np.linalg.norm(A, 2))


def valid_columns(grid: CylinderGrid, chain_eps: float, rank: int = 1) -> np.ndarray:
    """Flat indices of points whose rows stay exact through a chain of reach ``chain_eps``.

    A section supported in these t-rows, pushed through operators whose
    support radii add to ``chain_eps``, never meets a row cut by the
    truncation boundary.
    """
    lo = grid.t_min + chain_eps + grid.h_t
    hi = grid.t_max - chain_eps - grid.h_t
    rows = np.nonzero((grid.t >= lo) & (grid.t <= hi))[0]
    if rows.size == 0:
        raise GridError(f"no grid rows survive a support chain of length {chain_eps}")
    base = (rows[:, None] * grid.n_x + np.arange(grid.n_x)[None, :]).ravel()
    m = grid.size
    return np.concatenate([c * m + base for c in range(rank)])


def restricted_norm(E: np.ndarray, grid: CylinderGrid, cols: np.ndarray, s_in: float = 0.0,
                    s_out: float = 0.0, rank: int = 1) -> float:
    """``max ||W_{s_out} E u|| / ||W_{s_in} u||`` over ``u`` supported in ``cols``."""
    A = _apply_weight_rows(E[:, cols], grid, s_out, rank)
    if s_in == 0:
        return largest_singular_value(A)
    G = _weight_matrix_cols(grid, s_in, rank, cols)
    gram = G.T @ G
    Lc = np.linalg.cholesky(gram)
    B = sla.solve_triangular(Lc, A.conj().T, lower=True).conj().T
    return largest_singular_value(B)


def mapping_property_check(P, s: float, order: float | None = None, chain: float | None = None) -> float:
    """Largest singular value of ``W_{s-m} P W_s^{-1}`` on sections that avoid the margin."""
    grid = P.grid
    m = P.order if order is None else order
    reach = P.eps if chain is None else chain
    if not np.isfinite(reach):
        reach = grid.margin
    cols = valid_columns(grid, max(reach, grid.margin), P.rank)
    return restricted_norm(P.mat, grid, cols, s, s - m, P.rank)


def dense_weight(grid: CylinderGrid, s: float) -> np.ndarray:
    """Dense ``W_s`` (real, symmetric) for small grids."""
    n = grid.size
    E = np.eye(n).reshape(n, grid.n_t, grid.n_x)
    return apply_weight(E, grid, s).reshape(n, n).T


def weighted_operator_ratio(P, u: np.ndarray, k: int, s: float) -> float:
    """``||P u||_{rho^k H^{s-m}} / ||u||_{rho^k H^s}``."""
    grid = P.grid
    v = P.apply(u)
    num = weighted_norm(v, grid, k, s - P.order)
    den = weighted_norm(u, grid, k, s)
    return num / den


def membership_ratio(Lam, u: np.ndarray, s: float) -> float:
    """``||Lambda_s u||_{L^2} / ||u||_{H^s}``; bounded above and below iff the norms agree."""
    grid = Lam.grid
    return l2_norm(Lam.apply(u), grid) / sobolev_norm(u, grid, s)


def random_band_limited(grid: CylinderGrid, rng, k_max: int | None = None,
                        tau_frac: float = 0.5, support: float | None = None) -> np.ndarray:
    """Random smooth section with limited link and t frequencies, vanishing in the margin."""
    from .geometry import smooth_step

    k_max = grid.n_x // 4 if k_max is None else k_max
    om_max = tau_frac * grid.tau_nyquist
    X, T = grid.mesh()
    nk = 2 * k_max + 1
    n_om = 12
    ks = (np.arange(nk) - k_max) * 2 * np.pi / grid.L
    oms = rng.uniform(-om_max, om_max, n_om)
    amp = rng.normal(size=(nk, n_om)) + 1j * rng.normal(size=(nk, n_om))
    u = np.einsum("ab,ab...->...", amp, np.exp(1j * (ks[:, None, None, None] * X + oms[None, :, None, None] * T)))
    half = (grid.t_max - grid.t_min) / 2 - grid.margin - 1.0 if support is None else support
    win = smooth_step((np.abs(T) - (half - 4.0)) / 4.0)
    return (u * win).real
