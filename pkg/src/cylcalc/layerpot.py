"""Single and double layer potentials on vertical submanifolds.

Both are restrictions of the kernel of ``P^{-1}``: the single layer takes
it as is, the double layer takes its normal derivative in the second
variable. For operators that are invariant in ``x`` and ``t`` there is a
second route through the link Fourier modes, which handles links with
thousands of points; the two routes are cross-checked on small grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .calculus import CalculusError, LimitOperator, limit_operator
from .fredholm import fredholm_verdict, invert_and_verify
from .geometry import CylinderGrid, LineGrid, Submanifold, chi_offset, vertical_line
from .quantize import (KernelFitError, OperatorMatrix, OrderError, fd_weights,
                       kernel_asymptotics_fit, restrict_kernel)
from .symbols import FullSymbol, is_elliptic

__all__ = ["Submanifold", "vertical_line", "LayerOperator", "single_layer", "double_layer",
           "single_layer_fourier", "restrict_limit", "layer_pipeline", "PipelineReport"]


class PVDivergence(CalculusError):
    pass


@dataclass
class LayerOperator:
    op: OperatorMatrix
    kind: str  # "single" or "double"
    source_order: float
    codim: int = 1
    checks: dict = field(default_factory=dict)

    @property
    def order(self) -> float:
        return self.op.order

    def tau_symbol(self, taus, row_t: float = 0.0) -> np.ndarray:
        """``sum_l S[j0, j0 + l] e^{i tau l h}`` at the row nearest ``row_t`` (first line)."""
        g = self.op.grid
        ns = g.n_sites
        j0 = int(np.argmin(np.abs(g.t - row_t)))
        row = self.op.mat[j0 * ns].reshape(g.n_t, ns)[:, 0]
        l = np.arange(g.n_t) - j0
        taus = np.asarray(taus, dtype=float)
        return np.exp(1j * np.outer(taus, l * g.h_t)) @ row

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.op.mat)))


# ---------------------------------------------------------------------------
# limit restriction
# ---------------------------------------------------------------------------


def restrict_limit(T: LimitOperator, N: Submanifold, grid: CylinderGrid) -> LimitOperator:
    """``In(P)|_{N_inf x R}`` in the weights used by :func:`restrict_kernel`."""
    idx = np.asarray(N.points_inf, dtype=int)
    r = T.rank
    full = np.concatenate([c * grid.n_x + idx for c in range(r)])
    st = {l: B[np.ix_(full, full)] / grid.h_x for l, B in T.stencil_form().items()}
    return LimitOperator(T.end, idx.size, r, T.h_t, st, {}, None, T.order + N.codim, T.kind,
                         T.cauchy_gap)


# ---------------------------------------------------------------------------
# single layer
# ---------------------------------------------------------------------------


def single_layer(P: OperatorMatrix, N: Submanifold, inverse: OperatorMatrix | None = None,
                 check_limits: bool = True, fit: bool = True) -> LayerOperator:
    """``S_P`` = restriction of the kernel of ``P^{-1}`` to ``N x N``."""
    q = N.codim
    if not P.order > q:
        raise OrderError(f"single layer needs order > codim = {q}, got {P.order:g}")
    if inverse is None:
        inverse, _ = invert_and_verify(P, atkinson=False)
    S = restrict_kernel(inverse, N)
    checks = {}
    if check_limits:
        lims = getattr(inverse, "limits", None) or {}
        gaps = {}
        for e, Te in lims.items():
            mine = restrict_limit(Te, N, P.grid)
            W = max(abs(l) for l in Te.stencil) * P.grid.h_t
            c = Te.center
            try:
                got = limit_operator(S, e, tol=1e-4, window=W, center=c)
            except CalculusError as exc:
                gaps[e] = float("inf")
                checks[f"limit_error_{e}"] = str(exc)
                continue
            gaps[e] = got.distance(mine, stencil_only=True) / max(mine.scale(), 1e-300)
        checks["limit_gap"] = gaps
    checks["self_adjoint_source"] = bool(np.max(np.abs(P.mat - P.mat.conj().T)) <= 1e-12 *
                                         np.max(np.abs(P.mat)))
    if checks["self_adjoint_source"]:
        checks["symmetry_gap"] = float(np.max(np.abs(S.mat - S.mat.conj().T)) /
                                       np.max(np.abs(S.mat)))
    if fit:
        try:
            kf = kernel_asymptotics_fit(S.replace(tag="inv", R=S.R), m=S.order, invariance_probe=False)
            checks["kernel_fit_residual"] = kf.residual
        except KernelFitError as exc:
            checks["kernel_fit_residual"] = exc.fit.residual if exc.fit is not None else float("inf")
    return LayerOperator(S, "single", P.order, q, checks)


def fourier_stencils(a: FullSymbol, grid: CylinderGrid):
    """Per link mode ``k`` the t-stencil of ``q(a)``; returns ``(stencils (n_x, 2J+1), J)``.

    Needs a scalar symbol that depends on neither ``x`` nor ``t``; the
    discretisation matches :func:`cylcalc.quantize.quantize`.
    """
    if a.rank != 1 or a.x_dependent or (a.t_dependent and a.R > 0):
        raise CalculusError("link-Fourier route needs a scalar x- and t-invariant symbol")
    h = grid.h_t
    J = int(np.floor(grid.eps_outer / h + 1e-9))
    k = grid.link.k.astype(float)
    nyq = grid.n_x // 2

    def sym(kv, tau):
        v = np.asarray(a(0.0, 0.0, kv, tau), dtype=complex)
        return v

    out = np.zeros((grid.n_x, 2 * J + 1), dtype=complex)
    if a.tau_degree is not None and a.tau_degree <= min(4, 2 * J):
        d = int(a.tau_degree)
        nodes = np.array([0.0] + [s * v for v in range(1, d + 1) for s in (1, -1)])[: d + 1]
        Vinv = np.linalg.inv(np.vander(nodes, d + 1, increasing=True))
        vals = sym(k[:, None], nodes[None, :])
        vals[nyq] = 0.5 * (vals[nyq] + sym(-k[nyq], nodes))
        coef = vals @ Vinv.T  # (n_k, p)
        for p in range(d + 1):
            w = fd_weights(J, p) * (-1j) ** p / h ** p
            out += coef[:, p:p + 1] * w[None, :]
    else:
        M_t = max(512, 2 * grid.n_t)
        om = 2 * np.pi * np.fft.fftfreq(M_t, d=h)
        S = sym(k[:, None], om[None, :])
        S[nyq] = 0.5 * (S[nyq] + sym(-k[nyq], om))
        Kt = np.fft.ifft(S, axis=1)
        offs = np.arange(-J, J + 1)
        chi = chi_offset(offs * h, grid.eps_inner, grid.eps_outer)
        out = Kt[:, (-offs) % M_t] * chi[None, :]
    if np.max(np.abs(out.imag)) <= 1e-13 * np.max(np.abs(out.real)):
        out = out.real
    return out, J


def _banded(stencil, n_t, J):
    M = np.zeros((n_t, n_t), dtype=stencil.dtype)
    for li, w in enumerate(stencil):
        l = li - J
        if w != 0:
            idx = np.arange(max(0, -l), min(n_t, n_t - l))
            M[idx, idx + l] = w
    return M


def single_layer_fourier(a: FullSymbol, grid: CylinderGrid, site: int = 0) -> LayerOperator:
    """Single layer on the vertical line through ``site`` via link Fourier blocks.

    ``S = (1/n_x) sum_k P_k^{-1} / h_x``, each ``P_k`` an ``n_t x n_t`` banded
    matrix; equal blocks (``k`` and ``-k`` for even symbols) are inverted once.
    """
    if not a.order > 1:
        raise OrderError(f"single layer needs order > 1, got {a.order:g}")
    st, J = fourier_stencils(a, grid)
    acc = np.zeros((grid.n_t, grid.n_t), dtype=complex if np.iscomplexobj(st) else float)
    cache = {}
    for kidx in range(grid.n_x):
        key = st[kidx].tobytes()
        inv = cache.get(key)
        if inv is None:
            inv = sla.inv(_banded(st[kidx], grid.n_t, J))
            cache[key] = inv
        acc += inv
    # all modes share the same site phase on the diagonal x = y
    S = acc / grid.n_x / grid.h_x
    N = vertical_line(grid, site)
    line = LineGrid(N)
    op = OperatorMatrix(S, line, -a.order + 1, np.inf, grid.R_inv, "ess", 1, None, None, None,
                        f"S[{a.name}]")
    return LayerOperator(op, "single", a.order, 1, {"route": "link-fourier", "distinct_blocks": len(cache)})


# ---------------------------------------------------------------------------
# double layer
# ---------------------------------------------------------------------------


def _shift_cols(K: np.ndarray, grid: CylinderGrid, cols_flat: np.ndarray, di: int, dj: int):
    """Columns of ``K`` at the points ``cols`` shifted by ``(di, dj)`` grid steps."""
    j = cols_flat // grid.n_x + dj
    i = (cols_flat % grid.n_x + di) % grid.n_x
    valid = (j >= 0) & (j < grid.n_t)
    jj = np.clip(j, 0, grid.n_t - 1)
    out = K[:, jj * grid.n_x + i]
    out[:, ~valid] = np.nan
    return out


def double_layer(P: OperatorMatrix, N: Submanifold, inverse: OperatorMatrix | None = None,
                 pv_tol: float = 1e-8, single: LayerOperator | None = None) -> LayerOperator:
    """``K_P``: normal derivative in ``y`` of the kernel of ``P^{-1}``, restricted to ``N x N``.

    ``d_nu = nu_x d_x + nu_t d_t`` with centred differences at steps
    ``h`` and ``2h`` combined by Richardson extrapolation. The diagonal
    cell is omitted and row sums are accumulated over symmetric shells;
    three consecutive shells changing the sum by less than ``pv_tol``
    (relative) declare the principal value converged.
    """
    if N.codim != 1:
        raise CalculusError("double layer needs codimension 1")
    if abs(P.order - 2) > 1e-12:
        raise OrderError(f"double layer needs an order-2 operator, got {P.order:g}")
    if P.rank != 1:
        raise CalculusError("double layer is implemented for scalar operators")
    g = P.grid
    if inverse is None:
        inverse, _ = invert_and_verify(P, atkinson=False)
    Kfull = inverse.mat / g.cell
    rows = N.flat_indices().reshape(-1)
    nu = np.asarray(N.normal, dtype=float).reshape(-1, 2)
    if nu.shape[0] == 1:
        nu = np.repeat(nu, rows.size, axis=0)
    Kr = Kfull[rows]

    def central(di, dj, step):
        plus = _shift_cols(Kr, g, rows, di, dj)
        minus = _shift_cols(Kr, g, rows, -di, -dj)
        return (plus - minus) / (2 * step)

    dx1 = central(1, 0, g.h_x)
    dx2 = central(2, 0, 2 * g.h_x)
    dt1 = central(0, 1, g.h_t)
    dt2 = central(0, 2, 2 * g.h_t)
    dx = (4 * dx1 - dx2) / 3
    dt = (4 * dt1 - dt2) / 3
    D = nu[None, :, 0] * dx + nu[None, :, 1] * dt
    D = np.nan_to_num(D, nan=0.0)
    np.fill_diagonal(D, 0.0)  # omitted diagonal cell
    w = N.arc_weights().reshape(-1)
    mat = D * w[None, :]
    # principal value: symmetric shells about the diagonal, row sums
    line = LineGrid(N)
    n_t, nl = g.n_t, N.n_lines
    scale = max(float(np.max(np.abs(mat))), 1e-300)
    gaps = []
    for r0 in range(0, rows.size, max(1, rows.size // 16)):
        j0 = r0 // nl
        rowv = mat[r0].reshape(n_t, nl)
        partial = []
        s = 0.0
        for sh in range(1, n_t):
            for jj in (j0 - sh, j0 + sh):
                if 0 <= jj < n_t:
                    s += rowv[jj].sum()
            partial.append(s)
        partial = np.array(partial)
        ref = max(np.max(np.abs(partial)), scale)
        tail = np.abs(np.diff(partial[-4:])) / ref if partial.size >= 4 else np.array([0.0])
        gaps.append(float(np.max(tail)))
    pv_gap = max(gaps) if gaps else 0.0
    if pv_gap > pv_tol:
        raise PVDivergence(f"principal-value shells do not settle (change {pv_gap:.2e})")
    op = OperatorMatrix(mat, line, -P.order + N.codim + 1, np.inf, inverse.R, "ess", 1, None, None,
                        None, f"K[{P.name}]")
    checks = {"pv_gap": pv_gap, "sup": float(np.max(np.abs(mat)))}
    if single is not None:
        rel = checks["sup"] / max(single.sup_norm(), 1e-300)
        checks["relative_to_single"] = rel
        # leading restricted singularity vanishes -> order drops by one
        checks["order_improved"] = bool(rel <= 1e-6)
        if checks["order_improved"]:
            op = op.replace(order=op.order - 1)
    return LayerOperator(op, "double", P.order, 1, checks)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineReport:
    stages: list
    halted_at: str | None
    ok: bool

    def to_dict(self):
        return {"ok": self.ok, "halted_at": self.halted_at,
                "stages": [{"stage": n, "ok": o, "report": r} for n, o, r in self.stages]}


def layer_pipeline(P, N: Submanifold | None = None, m: float = 0.0, tau_points: int = 257,
                   tol_inv: float | None = None, double: bool = True) -> PipelineReport:
    """Ellipticity, Fredholm verdict, inversion, then the layer operators."""
    stages = []
    N = N or vertical_line(P.grid if not hasattr(P, "to_operator") else P.grid)
    fr = fredholm_verdict(P, m, tau_points=tau_points, tol_inv=tol_inv)
    stages.append(("ellipticity", fr.adn_elliptic, {"adn_min_det": fr.adn_min_det}))
    if not fr.adn_elliptic:
        return PipelineReport(stages, "ellipticity", False)
    stages.append(("fredholm", fr.verdict, fr.to_dict()))
    if not fr.verdict:
        return PipelineReport(stages, "fredholm", False)
    op = P.to_operator() if hasattr(P, "to_operator") else P
    try:
        inv, mem = invert_and_verify(op, m, fredholm=fr, atkinson=False)
    except CalculusError as exc:
        stages.append(("invert", False, {"error": str(exc)}))
        return PipelineReport(stages, "invert", False)
    stages.append(("invert", mem.verdict, mem.to_dict()))
    try:
        S = single_layer(op, N, inverse=inv)
    except (CalculusError, OrderError) as exc:
        stages.append(("single_layer", False, {"error": str(exc)}))
        return PipelineReport(stages, "single_layer", False)
    stages.append(("single_layer", True, {"order": S.order, "sup": S.sup_norm(), **_plain(S.checks)}))
    if double:
        try:
            K = double_layer(op, N, inverse=inv, single=S)
            stages.append(("double_layer", True, {"order": K.order, **_plain(K.checks)}))
        except (CalculusError, OrderError) as exc:
            stages.append(("double_layer", False, {"error": str(exc)}))
            return PipelineReport(stages, "double_layer", False)
    return PipelineReport(stages, None, True)


def _plain(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out[k] = _plain(v)
        elif isinstance(v, (np.floating, np.integer, np.bool_)):
            out[k] = v.item()
        else:
            out[k] = v
    return out
