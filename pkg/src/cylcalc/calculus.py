"""Algebra of the two calculi: products, adjoints, limit operators, s_0.

Limit operators are stored as t-stencils of link blocks,
``(Tu)(t) = sum_l B_l u(t + l h)``, optionally plus an exact differential
part ``sum_p A_p D_t^p`` for operators that are differential in t at the
end. The indicial family is ``T^(tau) = sum_p A_p tau^p + sum_l B_l e^{i tau l h}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CylinderGrid, eta_end, rho, rho_slope
from .quantize import (OperatorMatrix, QuantizationError, fd_weights, kernel_t_extent,
                       quantize)
from .sobolev import restricted_norm, valid_columns
from .symbols import FullSymbol, bessel_symbol, inverse_symbol, is_elliptic


class CalculusError(ValueError):
    pass


class MarginError(CalculusError):
    pass


class NotInCalculus(CalculusError):
    pass


class InsufficientDecay(CalculusError):
    pass


class NotElliptic(CalculusError):
    pass


ENDS = ("left", "right")


# ---------------------------------------------------------------------------
# limit operators
# ---------------------------------------------------------------------------


@dataclass
class LimitOperator:
    """Translation-invariant operator on ``link x R`` attached to one end."""

    end: str
    n_sites: int
    rank: int
    h_t: float
    stencil: dict = field(default_factory=dict)
    diff: dict = field(default_factory=dict)
    fd_J: int | None = None
    order: float = 0.0
    kind: str = "exact"  # "exact" (finite support) or "window" (truncated decaying kernel)
    cauchy_gap: float = 0.0
    link_L: float | None = None
    center: float | None = None  # t of the row a window was read at

    @property
    def dim(self) -> int:
        return self.rank * self.n_sites

    @property
    def radius(self) -> int:
        """Largest stencil offset (in t-steps), counting the realised differential part."""
        r = max((abs(l) for l in self.stencil), default=0)
        if any(p > 0 for p in self.diff):
            r = max(r, self.fd_J or 0)
        return r

    @property
    def eps(self) -> float:
        return np.inf if self.kind == "window" else self.radius * self.h_t

    def _zero(self):
        return np.zeros((self.dim, self.dim))

    def stencil_form(self) -> dict:
        """Pure stencil, with ``D_t^p`` realised by the grid stencils."""
        out = {l: B.copy() for l, B in self.stencil.items()}
        for p, A in self.diff.items():
            if p == 0:
                out[0] = out.get(0, 0) + A
                continue
            if self.fd_J is None:
                raise CalculusError("differential part without a stencil radius")
            w = fd_weights(self.fd_J, p) * (-1j) ** p / self.h_t ** p
            if p % 2 == 0:
                w = w.real
            for li, wl in enumerate(w):
                if wl != 0:
                    l = li - self.fd_J
                    out[l] = out.get(l, 0) + wl * A
        return out

    def hat(self, tau, exact: bool = True) -> np.ndarray:
        """Indicial family at each ``tau``; shape ``(n_tau, dim, dim)``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        out = np.zeros((tau.size, self.dim, self.dim), dtype=complex)
        if exact:
            for p, A in self.diff.items():
                out += (tau ** p)[:, None, None] * A
            st = self.stencil
        else:
            st = self.stencil_form()
        for l, B in st.items():
            out += np.exp(1j * tau * l * self.h_t)[:, None, None] * B
        return out

    def scale(self) -> float:
        vals = [np.max(np.abs(B)) for B in self.stencil.values()]
        vals += [np.max(np.abs(A)) for A in self.diff.values()]
        return float(max(vals, default=0.0))

    def distance(self, other: "LimitOperator", stencil_only: bool = False) -> float:
        """Max entry difference of stencils and differential coefficients."""
        a = self.stencil_form() if stencil_only else self.stencil
        b = other.stencil_form() if stencil_only else other.stencil
        d = 0.0
        for l in set(a) | set(b):
            d = max(d, float(np.max(np.abs(a.get(l, 0) - b.get(l, 0)))))
        if not stencil_only:
            for p in set(self.diff) | set(other.diff):
                d = max(d, float(np.max(np.abs(self.diff.get(p, 0) - other.diff.get(p, 0)))))
        return d

    def norm_estimate(self, n_tau: int = 257) -> float:
        """``sup_tau ||T^(tau)||`` over the Nyquist band of the stencil."""
        taus = np.linspace(-np.pi / self.h_t, np.pi / self.h_t, n_tau)
        H = self.hat(taus, exact=False)
        return float(max(np.linalg.norm(M, 2) for M in H)) if self.dim else 0.0

    # algebra --------------------------------------------------------------
    def _like(self, stencil, diff=None, kind=None, order=None, J=None):
        return LimitOperator(self.end, self.n_sites, self.rank, self.h_t, stencil, diff or {},
                             self.fd_J if J is None else J, self.order if order is None else order,
                             kind or self.kind, self.cauchy_gap, self.link_L)

    def __add__(self, other):
        st = {l: self.stencil.get(l, 0) + other.stencil.get(l, 0) for l in set(self.stencil) | set(other.stencil)}
        df = {p: self.diff.get(p, 0) + other.diff.get(p, 0) for p in set(self.diff) | set(other.diff)}
        kind = "window" if "window" in (self.kind, other.kind) else "exact"
        return self._like(st, df, kind, max(self.order, other.order), self.fd_J or other.fd_J)

    def __sub__(self, other):
        return self + other * (-1.0)

    def __mul__(self, c):
        return self._like({l: c * B for l, B in self.stencil.items()},
                          {p: c * A for p, A in self.diff.items()})

    __rmul__ = __mul__

    def __matmul__(self, other: "LimitOperator") -> "LimitOperator":
        """Composition; for truncated windows only fully determined offsets are kept."""
        if self.dim != other.dim:
            raise CalculusError("dimension mismatch")
        only_diff = not self.stencil and not other.stencil
        if only_diff and (self._pure_mult() or other._pure_mult()):
            df = {}
            for p, A in self.diff.items():
                for q, B in other.diff.items():
                    df[p + q] = df.get(p + q, 0) + A @ B
            J = self.fd_J if any(p > 0 for p in self.diff) else other.fd_J
            return self._like({}, df, "exact", self.order + other.order, J)
        a = self.stencil_form()
        b = other.stencil_form()
        out = {}
        for la, A in a.items():
            for lb, B in b.items():
                out[la + lb] = out.get(la + lb, 0) + A @ B
        kind = "window" if "window" in (self.kind, other.kind) else "exact"
        if kind == "window":
            ra = max(abs(l) for l in a) if a else 0
            rb = max(abs(l) for l in b) if b else 0
            if self.kind == "window" and other.kind == "window":
                keep = min(ra, rb)
            elif self.kind == "window":
                keep = ra - rb
            else:
                keep = rb - ra
            out = {l: B for l, B in out.items() if abs(l) <= keep}
        res = self._like(out, {}, kind, self.order + other.order)
        res.cauchy_gap = max(self.cauchy_gap, other.cauchy_gap)
        return res

    def _pure_mult(self) -> bool:
        return set(self.diff) <= {0} and not self.stencil

    def adjoint(self) -> "LimitOperator":
        st = {-l: B.conj().T for l, B in self.stencil.items()}
        df = {p: A.conj().T for p, A in self.diff.items()}
        return self._like(st, df)

    def commutator_t(self) -> "LimitOperator":
        """``[t, T]``: stencil ``-l h B_l``; ``[t, A D^p] = i p A D^{p-1}``."""
        st = {l: (-l * self.h_t) * B for l, B in self.stencil.items() if l != 0}
        df = {p - 1: (1j * p) * A for p, A in self.diff.items() if p > 0}
        return self._like(st, df, order=self.order - 1)

    def identity_like(self) -> "LimitOperator":
        return self._like({}, {0: np.eye(self.dim)}, "exact", 0.0, 0)

    def realize(self, grid, end: str | None = None, cut: bool = True) -> np.ndarray:
        """Dense ``eta T eta`` (``cut``) or plain ``T`` on the rows of ``grid``."""
        from ._accel import assemble_stencil

        st = self.stencil_form()
        J = max((abs(l) for l in st), default=0)
        nl = 2 * J + 1
        dtype = complex if any(np.iscomplexobj(B) for B in st.values()) else float
        blocks = np.zeros((1, nl, self.dim, self.dim), dtype=dtype)
        for l, B in st.items():
            blocks[0, l + J] = B
        n_t = grid.n_t
        mat = assemble_stencil(blocks, np.zeros(n_t, dtype=np.int64), self.rank, n_t, self.n_sites, J,
                               dtype=dtype)
        if cut:
            e = eta_end(grid.t, end or self.end)
            ev = np.tile(np.repeat(e, self.n_sites), self.rank)
            mat = ev[:, None] * mat * ev[None, :]
        return mat

    @staticmethod
    def identity(n_sites: int, rank: int, h_t: float, end: str = "left") -> "LimitOperator":
        return LimitOperator(end, n_sites, rank, h_t, {}, {0: np.eye(rank * n_sites)}, 0, 0.0)

    @staticmethod
    def from_symbol(a: FullSymbol, grid: CylinderGrid, end: str = "left") -> "LimitOperator":
        """Limit operator of ``q(a)``; exact differential part for tau-polynomial symbols."""
        return limit_operator(quantize(a, grid), end)


def _rows(mat, j, r, n_t, ns, J):
    """Link blocks ``B_l`` of row ``j`` for ``l = -J..J``."""
    m6 = mat.reshape(r, n_t, ns, r, n_t, ns)
    out = {}
    for l in range(-J, J + 1):
        jj = j + l
        if 0 <= jj < n_t:
            out[l] = m6[:, j, :, :, jj, :].reshape(r * ns, r * ns).copy()
    return out


def _probe_rows(grid, end, s):
    t = grid.t
    target = -s if end == "left" else s
    j = int(np.argmin(np.abs(t - target)))
    return j


def limit_operator(P: OperatorMatrix, end: str, tol: float | None = None,
                   window: float | None = None, center: float | None = None,
                   R_eff: float | None = None) -> LimitOperator:
    """``In(P)`` on one end, by comparing two translated probe rows.

    For ``inv`` operators the rows at ``s1 = R_P + eps_P + 2h`` and
    ``s1 + 4h`` must agree to ``1e-10``. For ``ess`` operators a window of
    the kernel is read at two depths and the Cauchy gap must stay below
    ``tol`` (default ``1e-6`` relative).
    """
    if end not in ENDS:
        raise CalculusError(f"unknown end {end!r}")
    if P.tag not in ("inv", "ess", "comp", "smoothing_S"):
        raise NotInCalculus(f"operator tag {P.tag!r} has no limit operator")
    g = P.grid
    h = g.h_t
    r, n_t, ns = P.rank, g.n_t, g.n_sites
    sgn = -1 if end == "left" else 1
    if P.tag == "comp":
        return LimitOperator(end, ns, r, h, {}, {}, None, P.order, "exact", 0.0)
    if P.tag == "inv":
        if not (np.isfinite(P.R) and np.isfinite(P.eps)):
            raise NotInCalculus("inv operator without finite radii")
        J = int(np.ceil(P.eps / h - 1e-9))
        s1 = P.R + P.eps + 2 * h
        j1 = _probe_rows(g, end, s1)
        j2 = j1 + sgn * 4
        if min(j1, j2) - J < 0 or max(j1, j2) + J >= n_t:
            raise MarginError(f"probe rows for the {end} end do not fit inside the grid")
        b1 = _rows(P.mat, j1, r, n_t, ns, J)
        b2 = _rows(P.mat, j2, r, n_t, ns, J)
        scale = max((np.max(np.abs(B)) for B in b1.values()), default=0.0)
        gap = max(float(np.max(np.abs(b1[l] - b2[l]))) for l in b1)
        tol_inv = 1e-10 if tol is None else tol
        if gap > tol_inv * max(scale, 1.0):
            raise NotInCalculus(f"operator is not translation invariant on the {end} end "
                                f"(probe gap {gap:.3e})")
        st = {l: B for l, B in b1.items() if np.any(B != 0)}
        diff = {}
        fdJ = None
        if P.exact_limits is not None:
            diff = {p: np.array(A) for p, A in P.exact_limits[end].items()}
            fdJ = P.fd_J
            probe = LimitOperator(end, ns, r, h, {}, diff, fdJ, P.order)
            fd = probe.stencil_form()
            st = {l: st.get(l, 0) - fd.get(l, 0) for l in set(st) | set(fd)}
            thr = 1e-13 * max(scale, 1.0)
            st = {l: B for l, B in st.items() if np.max(np.abs(B)) > thr}
        return LimitOperator(end, ns, r, h, st, diff, fdJ, P.order, "exact", gap,
                             getattr(g, "L", None))
    # ess / smoothing_S: read a window at two depths
    t = g.t
    Reff = g.R_inv if R_eff is None else R_eff
    a = g.t_min if end == "left" else Reff
    b = -Reff if end == "left" else g.t_max
    length = b - a
    if length <= 8 * h:
        raise MarginError("end region too short for a window read")
    c = 0.5 * (a + b) if center is None else center
    W = 0.5 * length - 4 * h if window is None else window
    Jw = int(np.floor(W / h))
    jc = int(np.argmin(np.abs(t - c)))
    j1, j2 = jc - 2, jc + 2
    if min(j1, j2) - Jw < 0 or max(j1, j2) + Jw >= n_t:
        raise MarginError("window does not fit inside the grid")
    b1 = _rows(P.mat, j1, r, n_t, ns, Jw)
    b2 = _rows(P.mat, j2, r, n_t, ns, Jw)
    scale = max(np.max(np.abs(B)) for B in b1.values())
    gap = max(float(np.max(np.abs(b1[l] - b2[l]))) for l in b1) / max(scale, 1e-300)
    tol_ess = 1e-6 if tol is None else tol
    if gap > tol_ess:
        raise NotInCalculus(f"limit does not settle on the {end} end (Cauchy gap {gap:.3e})")
    return LimitOperator(end, ns, r, h, b1, {}, None, P.order, "window", gap,
                         getattr(g, "L", None), float(t[j1]))


def invariance_radius(P: OperatorMatrix, tol: float = 1e-12) -> float:
    """Measured radius beyond which the rows of ``P`` are exact translates.

    Rows whose stencil is cut by the truncation boundary are skipped.
    Never exceeds the declared ``P.R``.
    """
    g = P.grid
    if not (np.isfinite(P.eps) and np.isfinite(P.R)):
        return P.R
    J = int(np.ceil(P.eps / g.h_t - 1e-9))
    r, n_t, ns = P.rank, g.n_t, g.n_sites
    m6 = P.mat.reshape(r, n_t, ns, r, n_t, ns)
    scale = max(float(np.max(np.abs(P.mat))), 1e-300)

    def row(j):
        return m6[:, j, :, :, j - J:j + J + 1, :]

    out = 0.0
    for e in ENDS:
        j0 = J if e == "left" else n_t - 1 - J
        step = 1 if e == "left" else -1
        ref = row(j0)
        j = j0
        while 0 <= j + step - J and j + step + J < n_t:
            if np.max(np.abs(row(j + step) - ref)) > tol * scale:
                break
            j += step
        tj = g.t[j]
        out = max(out, -tj if e == "left" else tj)
    return float(min(max(out, 0.0), P.R))


def s0_extend(T: LimitOperator, grid, end: str | None = None) -> OperatorMatrix:
    """``eta T eta`` on the grid, for the end ``T`` is attached to."""
    end = end or T.end
    if T.n_sites != grid.n_sites:
        raise CalculusError("limit operator and grid have different link sizes")
    if T.kind == "exact" and T.eps >= grid.margin:
        raise MarginError(f"support radius {T.eps} is too large for the end region "
                          f"(margin {grid.margin})")
    mat = T.realize(grid, end)
    tag = "inv" if T.kind == "exact" else "ess"
    eps = T.eps
    R = 2.0 + eps if np.isfinite(eps) else np.inf
    other = "right" if end == "left" else "left"
    lim = None
    if T.kind == "exact":
        lim = {end: {p: A.copy() for p, A in T.diff.items()}, other: {}}
    return OperatorMatrix(mat, grid, T.order, eps, R, tag, T.rank, None, lim, T.fd_J, f"s0({end})")


@dataclass
class Decomposition:
    invariant: OperatorMatrix
    compact: OperatorMatrix
    limits: dict
    t_extent: tuple
    support_radius: float


def decompose(P: OperatorMatrix) -> Decomposition:
    """``P = s0(In_left P) + s0(In_right P) + (compactly supported rest)``."""
    if P.tag != "inv":
        raise NotInCalculus("decompose needs an inv-tagged operator")
    lims = {e: limit_operator(P, e) for e in ENDS}
    S = s0_extend(lims["left"], P.grid) + s0_extend(lims["right"], P.grid, "right")
    S = S.replace(order=P.order)
    rest = OperatorMatrix(P.mat - S.mat, P.grid, P.order, P.eps, 0.0, "comp", P.rank, name="compact part")
    ext = kernel_t_extent(rest)
    rad = float(max(abs(ext[0]), abs(ext[1])))
    return Decomposition(S, rest, lims, ext, rad)


# ---------------------------------------------------------------------------
# indicial families
# ---------------------------------------------------------------------------


@dataclass
class IndicialFamily:
    taus: np.ndarray
    mats: np.ndarray
    end: str
    tail_symbol: object = None

    def to_csv(self, path):
        from .io import write_indicial_csv

        write_indicial_csv(path, self.taus, self.mats)


def indicial_family(T: LimitOperator, taus, exact: bool = True, decay_tol: float = 1e-10,
                    tail_symbol=None) -> IndicialFamily:
    """``T^(tau)`` on a grid of ``tau``; windows must have decayed at their edge."""
    if T.kind == "window" and T.stencil:
        J = max(abs(l) for l in T.stencil)
        edge = max(np.max(np.abs(T.stencil[l])) for l in (-J, J) if l in T.stencil)
        if edge > decay_tol * T.scale():
            raise InsufficientDecay(f"kernel at the window edge is {edge / T.scale():.2e} of its "
                                    f"maximum (needs <= {decay_tol:g})")
    taus = np.asarray(taus, dtype=float)
    return IndicialFamily(taus, T.hat(taus, exact), T.end, tail_symbol)


# ---------------------------------------------------------------------------
# products, adjoints, commutators
# ---------------------------------------------------------------------------


def _prod_tag(a, b):
    if "none" in (a, b):
        return "none"
    if "smoothing_S" in (a, b):
        return "smoothing_S"
    if "ess" in (a, b):
        return "ess"
    if "comp" in (a, b):
        return "comp"
    return "inv"


def compose(P: OperatorMatrix, Q: OperatorMatrix) -> OperatorMatrix:
    """``P Q`` with calculus bookkeeping."""
    if P.grid is not Q.grid and P.grid != Q.grid:
        raise CalculusError("operators live on different grids")
    if P.rank != Q.rank:
        raise CalculusError("rank mismatch")
    if np.isfinite(P.eps) and np.isfinite(Q.eps) and P.eps + Q.eps > P.grid.margin + 1e-12:
        raise MarginError(f"combined support radius {P.eps + Q.eps} exceeds the margin "
                          f"{P.grid.margin}")
    eps = P.eps + Q.eps
    R = max(P.R, Q.R) + eps
    lim = None
    if P.exact_limits is not None and Q.exact_limits is not None:
        pm = all(set(d) <= {0} for d in P.exact_limits.values())
        qm = all(set(d) <= {0} for d in Q.exact_limits.values())
        if pm or qm:
            lim = {}
            for e in ENDS:
                d = {}
                for p, A in P.exact_limits[e].items():
                    for q, B in Q.exact_limits[e].items():
                        d[p + q] = d.get(p + q, 0) + A @ B
                lim[e] = d
    J = Q.fd_J if (P.fd_J in (None, 0)) else P.fd_J
    return OperatorMatrix(P.mat @ Q.mat, P.grid, P.order + Q.order, eps, R, _prod_tag(P.tag, Q.tag),
                          P.rank, None, lim, J, f"({P.name})({Q.name})")


def adjoint(P: OperatorMatrix) -> OperatorMatrix:
    """Adjoint for the grid's uniform quadrature (plain conjugate transpose)."""
    lim = None
    if P.exact_limits is not None:
        lim = {e: {p: A.conj().T for p, A in d.items()} for e, d in P.exact_limits.items()}
    return OperatorMatrix(P.mat.conj().T.copy(), P.grid, P.order, P.eps, P.R, P.tag, P.rank, None,
                          lim, P.fd_J, f"({P.name})*")


@dataclass
class Commutator:
    op: OperatorMatrix
    order_drop_bound: float
    limit_gap: dict


def rho_vector(grid, rank: int = 1) -> np.ndarray:
    return np.tile(np.repeat(rho(grid.t), grid.n_sites), rank)


def commutator_with_rho(P: OperatorMatrix, check: bool = True) -> Commutator:
    """``[rho, P]`` with its order drop and limit-operator identity checked."""
    if P.tag not in ("inv", "ess"):
        raise NotInCalculus("commutator needs an inv or ess operator")
    rv = rho_vector(P.grid, P.rank)
    mat = rv[:, None] * P.mat - P.mat * rv[None, :]
    R = max(P.R, 1.0) if np.isfinite(P.R) else P.R
    C = OperatorMatrix(mat, P.grid, P.order - 1, P.eps, R, P.tag, P.rank, None, None, P.fd_J,
                       f"[rho,{P.name}]")
    bound = np.nan
    gaps = {}
    if check:
        from .sobolev import mapping_property_check

        s = max(P.order - 1, 0.0)
        bound = mapping_property_check(C, s)
        if P.tag == "inv":
            for e in ENDS:
                In_P = limit_operator(P, e)
                In_C = limit_operator(C, e)
                ref = In_P.commutator_t()
                if e == "right":  # rho = -t there
                    ref = ref * (-1.0)
                d = In_C.distance(ref, stencil_only=True)
                gaps[e] = d / max(ref.scale(), 1.0)
    return Commutator(C, float(bound), gaps)


# ---------------------------------------------------------------------------
# parametrix and order reduction
# ---------------------------------------------------------------------------


def discrete_symbol(P: OperatorMatrix) -> FullSymbol:
    """Symbol actually realised by ``P``: ``tau^p`` replaced by the stencil symbol of ``D_t^p``."""
    a = P.symbol
    if a is None:
        raise CalculusError("operator carries no symbol")
    if P.fd_J is None or a.tau_degree is None:
        return a
    d = int(a.tau_degree)
    J = P.fd_J
    h = P.grid.h_t
    nodes = np.array([0.0] + [s * v for v in range(1, d + 1) for s in (1, -1)])[: d + 1]
    Vinv = np.linalg.inv(np.vander(nodes, d + 1, increasing=True))
    from .quantize import fd_symbol

    def f(x, t, xi, tau):
        tau = np.asarray(tau, float)
        vals = [a.matrix(x, t, xi, nv) for nv in nodes]
        out = 0
        for p in range(d + 1):
            cp = sum(Vinv[p, n] * vals[n] for n in range(d + 1))
            fs = fd_symbol(J, p, tau, h)
            if p % 2 == 0:
                fs = fs.real
            out = out + cp * np.asarray(fs)[..., None, None]
        return out[..., 0, 0] if a.rank == 1 else out

    return FullSymbol(f, a.order, a.R, a.rank, None, a.x_dependent, a.t_dependent,
                      name=f"disc({a.name})")


@dataclass
class Parametrix:
    Q: OperatorMatrix
    residual_left: float  # ||1 - QP|| on sections avoiding the margin chain
    residual_right: float
    history: list
    limit_residual: dict


def _op_norm_on(E: np.ndarray, grid, chain: float, rank: int) -> float:
    cols = valid_columns(grid, chain, rank)
    return restricted_norm(E, grid, cols, rank=rank)


def parametrix(P: OperatorMatrix, N_order: int = 3, symbol: FullSymbol | None = None,
               track: bool = False) -> Parametrix:
    """Elliptic parametrix: ``q(1/sigma)`` refined by ``(1 + R + ... + R^{N-1})Q``.

    ``sigma`` is the symbol the grid actually realises (see
    :func:`discrete_symbol`), so the first residual is already small.
    With ``track`` the left residual is recorded after every Neumann step.
    """
    a = symbol or P.symbol
    if a is None:
        raise CalculusError("parametrix needs the symbol of P")
    ok, Cst = is_elliptic(a, grid=P.grid)
    if not ok:
        raise NotElliptic(f"symbol is not elliptic (min |a_m| = {Cst:.3e})")
    if P.tag not in ("inv", "ess"):
        raise NotInCalculus("parametrix needs an inv or ess operator")
    g = P.grid
    ap = P.replace(symbol=a) if P.symbol is None else P
    b = inverse_symbol(discrete_symbol(ap))
    Q0 = quantize(b, g)
    I = np.eye(P.N)
    n_q = max(1, int(N_order))
    Rm = I - Q0.mat @ P.mat
    acc = Q0.mat.copy()
    S = Q0.mat
    hist = []
    for k in range(1, n_q + 1):
        if track or k == n_q:
            chain = Q0.eps + (k - 1) * (Q0.eps + P.eps) + P.eps
            E = I - acc @ P.mat
            hist.append((k, _op_norm_on(E, g, chain, P.rank)))
        if k < n_q:
            S = Rm @ S
            acc = acc + S
    eps_q = Q0.eps + (n_q - 1) * (Q0.eps + P.eps)
    Q = OperatorMatrix(acc, g, -P.order, eps_q, max(P.R, Q0.R) + eps_q, P.tag, P.rank, None,
                       None, None, "parametrix")
    chain = eps_q + P.eps
    resl = hist[-1][1]
    resr = _op_norm_on(I - P.mat @ Q.mat, g, chain, P.rank)
    # In(Q) follows from multiplicativity of In: sum_k In(R)^k In(Q0)
    lim_res = {}
    for e in ENDS:
        try:
            IP = limit_operator(P, e)
            IQ0 = limit_operator(Q0, e)
        except CalculusError:
            lim_res[e] = np.nan
            continue
        IR = IQ0.identity_like() - IQ0 @ IP
        IQ = IQ0
        term = IQ0
        for _ in range(n_q - 1):
            term = IR @ term
            IQ = IQ + term
        prod = IQ @ IP
        lim_res[e] = _stencil_gap(prod)
    return Parametrix(Q, resl, resr, hist, lim_res)


def _stencil_gap(T: LimitOperator) -> float:
    """``sup_tau ||T^(tau) - 1||`` over the stencil's Nyquist band."""
    D = T - T.identity_like()
    return D.norm_estimate()


@dataclass
class OrderReduction:
    Lambda: OperatorMatrix
    Lambda_neg: OperatorMatrix
    s: float
    t0: float
    residual_left: float  # ||Lambda_s Lambda_-s - 1||_{L^2 -> L^2}
    residual_right: float | None  # ||Lambda_-s Lambda_s - 1||_{H^s -> H^s}
    certified: bool


def _reduction_residual(L, Ln, grid):
    E = L.mat @ Ln.mat - np.eye(L.N)
    return _op_norm_on(E, grid, L.eps + Ln.eps, L.rank)


def order_reduction(s: float, t0: float, grid: CylinderGrid, check_right: bool = True) -> OrderReduction:
    """``Lambda_s = q((t0^2 + |zeta|^2)^{s/2})`` with its invertibility certificate."""
    L = quantize(bessel_symbol(s, t0), grid)
    Ln = quantize(bessel_symbol(-s, t0), grid)
    if s == 0:
        return OrderReduction(L, Ln, s, t0, 0.0, 0.0, True)
    rl = _reduction_residual(L, Ln, grid)
    rr = None
    if check_right:
        E = Ln.mat @ L.mat - np.eye(L.N)
        cols = valid_columns(grid, L.eps + Ln.eps, L.rank)
        rr = restricted_norm(E, grid, cols, s, s, L.rank)
    cert = rl < 1 and (rr is None or rr < 1)
    if not cert:
        raise CalculusError(f"t0={t0} too small: residuals {rl:.3f}, {rr}")
    return OrderReduction(L, Ln, s, t0, rl, rr, cert)


def calibrate_t0(s: float, grid: CylinderGrid, target: float = 0.5, lo: float = 0.25,
                 hi: float = 16.0, iters: int = 8) -> tuple[float, float]:
    """Bisection for the smallest ``t0`` with ``||Lambda_s Lambda_-s - 1|| <= target``."""
    def res(t0):
        L = quantize(bessel_symbol(s, t0), grid)
        Ln = quantize(bessel_symbol(-s, t0), grid)
        return _reduction_residual(L, Ln, grid)

    r_hi = res(hi)
    if r_hi > target:
        raise CalculusError(f"residual {r_hi:.3f} at t0={hi} still above {target}")
    r_lo = res(lo)
    if r_lo <= target:
        return lo, r_lo
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        r = res(mid)
        if r <= target:
            hi, r_hi = mid, r
        else:
            lo = mid
    return hi, r_hi


def block_order_reduction(ts, t0: float, grid: CylinderGrid) -> OperatorMatrix:
    """Block-diagonal ``S_{t_1..t_k} = diag(Lambda_{t_i})``."""
    k = len(ts)
    n = grid.size
    mat = np.zeros((k * n, k * n), dtype=complex)
    eps = 0.0
    R = 0.0
    for i, ti in enumerate(ts):
        L = quantize(bessel_symbol(ti, t0), grid)
        mat[i * n:(i + 1) * n, i * n:(i + 1) * n] = L.mat
        eps, R = max(eps, L.eps), max(R, L.R)
    if not np.any(mat.imag):
        mat = mat.real
    return OperatorMatrix(mat, grid, max(ts), eps, R, "inv", k, None, None, None, "S_t")


# ---------------------------------------------------------------------------
# joint lift (In, sigma)
# ---------------------------------------------------------------------------


def joint_lift(T_lim: dict, a: FullSymbol, grid: CylinderGrid) -> OperatorMatrix:
    """Operator with prescribed limit operators and symbol.

    ``Q = q(a)`` already has the right symbol; the defect
    ``In(Q) - T`` is of lower order and is removed by ``s0`` on each end.
    """
    Q = quantize(a, grid)
    out = Q
    for e, T in T_lim.items():
        D = limit_operator(Q, e) - T
        out = out - s0_extend(D, grid, e)
    return out.replace(symbol=a, order=a.order)


# ---------------------------------------------------------------------------
# ADN systems
# ---------------------------------------------------------------------------


@dataclass
class ADNSystem:
    """``k x k`` block operator with orders ``s_i + t_j`` (``None`` blocks are zero)."""

    blocks: list
    spec: "ADNOrderSpec"
    grid: object
    name: str = "system"

    def __post_init__(self):
        k = self.spec.k
        if len(self.blocks) != k or any(len(row) != k for row in self.blocks):
            raise CalculusError(f"expected a {k}x{k} block layout")
        for i in range(k):
            for j in range(k):
                b = self.blocks[i][j]
                if b is None:
                    continue
                if b.rank != 1:
                    raise CalculusError("ADN blocks must be scalar operators")
                if b.order > self.spec.block_order(i, j) + 1e-12:
                    raise CalculusError(f"block ({i},{j}) has order {b.order:g} above "
                                        f"s_i+t_j = {self.spec.block_order(i, j):g}")

    @property
    def k(self) -> int:
        return self.spec.k

    def block(self, i, j) -> OperatorMatrix:
        from .quantize import zero_operator

        b = self.blocks[i][j]
        return zero_operator(self.grid) if b is None else b

    def symbol_matrix(self):
        from .symbols import adn_symbol_matrix

        syms = []
        for row in self.blocks:
            r = []
            for b in row:
                if b is not None and b.symbol is None:
                    raise CalculusError(f"block {b.name!r} carries no symbol")
                r.append(None if b is None else b.symbol)
            syms.append(r)
        return adn_symbol_matrix(syms, self.spec)

    def exact_limits(self):
        """Link blocks ``{p: A_p}`` per end for the assembled system, when every block has them."""
        k, ns = self.k, self.grid.n_sites
        out = {}
        for e in ENDS:
            d = {}
            for i in range(k):
                for j in range(k):
                    b = self.blocks[i][j]
                    if b is None:
                        continue
                    if b.exact_limits is None:
                        return None
                    for p, A in b.exact_limits[e].items():
                        M = d.setdefault(p, np.zeros((k * ns, k * ns), dtype=complex))
                        M[i * ns:(i + 1) * ns, j * ns:(j + 1) * ns] += A
            out[e] = {p: (M.real if not np.any(M.imag) else M) for p, M in d.items()}
        return out

    def fd_J(self):
        Js = {b.fd_J for row in self.blocks for b in row
              if b is not None and b.fd_J and b.exact_limits is not None
              and any(p > 0 for d in b.exact_limits.values() for p in d)}
        if len(Js) > 1:
            return None
        return Js.pop() if Js else 0

    def to_operator(self) -> OperatorMatrix:
        """Assembled operator acting on component-major sections (rank ``k``)."""
        k, n = self.k, self.grid.size
        present = [b for row in self.blocks for b in row if b is not None]
        dtype = complex if any(np.iscomplexobj(b.mat) for b in present) else float
        mat = np.zeros((k * n, k * n), dtype=dtype)
        for i in range(k):
            for j in range(k):
                b = self.blocks[i][j]
                if b is not None:
                    mat[i * n:(i + 1) * n, j * n:(j + 1) * n] = b.mat
        tags = {b.tag for b in present}
        tag = "inv" if tags <= {"inv", "comp"} else ("ess" if tags <= {"inv", "comp", "ess", "smoothing_S"} else "none")
        eps = max((b.eps for b in present), default=0.0)
        R = max((b.R for b in present), default=0.0)
        J = self.fd_J()
        lim = self.exact_limits() if J is not None else None
        order = max(self.spec.s) + max(self.spec.t)
        return OperatorMatrix(mat, self.grid, order, eps, R, tag, k, None, lim, J or None, self.name)


def block_identity(spec_s, grid) -> ADNSystem:
    """Identity system with orders ``(s, -s)``."""
    from .quantize import identity_operator
    from .symbols import ADNOrderSpec

    k = len(spec_s)
    blocks = [[identity_operator(grid).replace(symbol=_unit_symbol()) if i == j else None
               for j in range(k)] for i in range(k)]
    return ADNSystem(blocks, ADNOrderSpec(tuple(spec_s), tuple(-v for v in spec_s)), grid, "identity")


def _unit_symbol():
    from .symbols import constant_symbol

    return constant_symbol(1.0)


def adn_compose(Q: ADNSystem, P: ADNSystem) -> ADNSystem:
    """Blockwise ``(QP)_ij = sum_l Q_il P_lj``; requires ``t(Q) = -s(P)``."""
    from .symbols import ADNOrderSpec, symbol_product

    if Q.k != P.k:
        raise CalculusError("systems of different size")
    if not np.allclose(Q.spec.t, [-v for v in P.spec.s]):
        raise CalculusError(f"order mismatch: t(Q) = {Q.spec.t} but -s(P) = "
                            f"{tuple(-v for v in P.spec.s)}")
    k = Q.k
    blocks = []
    for i in range(k):
        row = []
        for j in range(k):
            acc = None
            sym = None
            for l in range(k):
                a, b = Q.blocks[i][l], P.blocks[l][j]
                if a is None or b is None:
                    continue
                c = compose(a, b)
                ps = None
                if a.symbol is not None and b.symbol is not None:
                    ps = symbol_product(a.symbol, b.symbol)
                if acc is None:
                    acc, sym = c, ps
                else:
                    acc = acc + c
                    sym = _sum_symbols(sym, ps)
            if acc is not None:
                acc = acc.replace(order=Q.spec.s[i] + P.spec.t[j], symbol=sym)
            row.append(acc)
        blocks.append(row)
    return ADNSystem(blocks, ADNOrderSpec(Q.spec.s, P.spec.t), Q.grid, f"({Q.name})({P.name})")


def _sum_symbols(a, b):
    if a is None or b is None:
        return None
    order = max(a.order, b.order)

    def f(x, t, xi, tau):
        return a(x, t, xi, tau) + b(x, t, xi, tau)

    deg = None
    if a.tau_degree is not None and b.tau_degree is not None:
        deg = max(a.tau_degree, b.tau_degree)
    return FullSymbol(f, order, max(a.R, b.R), 1, deg, a.x_dependent or b.x_dependent,
                      a.t_dependent or b.t_dependent, name=f"{a.name}+{b.name}")


def adn_adjoint(P: ADNSystem) -> ADNSystem:
    """``(P*)_ij = (P_ji)*``; the roles of ``s`` and ``t`` swap."""
    from .symbols import ADNOrderSpec

    k = P.k
    blocks = []
    for i in range(k):
        row = []
        for j in range(k):
            b = P.blocks[j][i]
            if b is None:
                row.append(None)
                continue
            bs = adjoint(b)
            if b.symbol is not None:
                bs = bs.replace(symbol=_conj_symbol(b.symbol))
            row.append(bs)
        blocks.append(row)
    return ADNSystem(blocks, ADNOrderSpec(P.spec.t, P.spec.s), P.grid, f"({P.name})*")


def _conj_symbol(a: FullSymbol) -> FullSymbol:
    def f(x, t, xi, tau):
        return np.conj(a(x, t, xi, tau))

    return FullSymbol(f, a.order, a.R, a.rank, a.tau_degree, a.x_dependent, a.t_dependent,
                      name=f"conj({a.name})")
