"""Fredholm verdicts, compactness and the inverse-membership verifier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import svds

from ._accel import offset_profile, weighted_sup_norms
from .calculus import (ENDS, ADNSystem, CalculusError, LimitOperator, NotInCalculus,
                       compose, invariance_radius, limit_operator, parametrix,
                       s0_extend)
from .geometry import rho
from .quantize import OperatorMatrix, QuantizationError, oscillatory_symbol_extract, \
    top_alias_free_scale
from .symbols import ADNOrderSpec, SymbolError, is_adn_elliptic


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EndReport:
    end: str
    indicial_ok: bool
    min_sv: float
    argmin_tau: float
    min_sv_raw: float
    tol: float
    singular_taus: list
    tau_max: float
    tau_step: float
    large_tau_certificate: float
    hand_off_radius: float
    scan_covers_hand_off: bool

    def to_dict(self):
        return {"end": self.end, "indicial_ok": self.indicial_ok, "min_sv": self.min_sv,
                "argmin_tau": self.argmin_tau, "min_sv_raw": self.min_sv_raw, "tol": self.tol,
                "singular_taus": list(self.singular_taus), "tau_max": self.tau_max,
                "tau_step": self.tau_step, "large_tau_certificate": self.large_tau_certificate,
                "hand_off_radius": self.hand_off_radius,
                "scan_covers_hand_off": self.scan_covers_hand_off}


@dataclass
class FredholmReport:
    adn_elliptic: bool
    adn_min_det: float
    per_end: list
    verdict: bool
    sobolev_shift: float
    notes: list = field(default_factory=list)

    @property
    def indicial_ok(self) -> bool:
        return all(e.indicial_ok for e in self.per_end)

    @property
    def min_sv(self) -> float:
        return min((e.min_sv for e in self.per_end), default=float("nan"))

    @property
    def argmin_tau(self) -> float:
        if not self.per_end:
            return float("nan")
        return min(self.per_end, key=lambda e: e.min_sv).argmin_tau

    def to_dict(self):
        return {"verdict": self.verdict, "adn_elliptic": self.adn_elliptic,
                "adn_min_det": self.adn_min_det, "indicial_ok": self.indicial_ok,
                "min_sv": self.min_sv, "argmin_tau": self.argmin_tau,
                "sobolev_shift": self.sobolev_shift,
                "per_end": [e.to_dict() for e in self.per_end], "notes": list(self.notes)}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def as_system(P, s=None, t=None) -> ADNSystem:
    """Wrap a scalar operator as a ``1 x 1`` system with orders ``(0, m)``."""
    if isinstance(P, ADNSystem):
        return P
    if P.rank != 1:
        raise CalculusError("only scalar operators can be wrapped; build an ADNSystem")
    spec = ADNOrderSpec((0.0 if s is None else s,), (P.order if t is None else t,))
    return ADNSystem([[P]], spec, P.grid, P.name)


def _link_dft(n_x: int) -> np.ndarray:
    return np.fft.fft(np.eye(n_x), axis=0, norm="ortho")


class _WeightedFamily:
    """``tau -> D_out(tau) F T^(tau) F^* D_in(tau)`` with link-Fourier Sobolev weights."""

    def __init__(self, T: LimitOperator, spec: ADNOrderSpec, m: float, grid, exact: bool = True):
        self.T = T
        self.exact = exact
        k = spec.k
        nx = T.n_sites
        F = _link_dft(nx)
        self.F = np.kron(np.eye(k), F)
        self.kk = np.tile(grid.link.k, k) ** 2
        self.s_out = np.repeat(np.array([m - v for v in spec.s]), nx)
        self.s_in = np.repeat(np.array([m + v for v in spec.t]), nx)

    def raw(self, tau):
        return self.T.hat([tau], self.exact)[0]

    def weighted(self, tau):
        M = self.F @ self.raw(tau) @ self.F.conj().T
        w = 1.0 + self.kk + tau * tau
        return (w ** (self.s_out / 2))[:, None] * M * (w ** (-self.s_in / 2))[None, :]

    def smin(self, tau, weighted=True):
        M = self.weighted(tau) if weighted else self.raw(tau)
        return float(np.linalg.svd(M, compute_uv=False)[-1])

    def smax(self, tau):
        return float(np.linalg.svd(self.weighted(tau), compute_uv=False)[0])


def _large_tau_certificate(S, n=64) -> float:
    """Smallest singular value of the principal symbol matrix at ``(xi, tau) = (0, +-1)``."""
    vals = []
    for sg in (1.0, -1.0):
        M = S(0.0, 0.0, np.array([0.0]), np.array([sg]))[0]
        vals.append(np.linalg.svd(M, compute_uv=False)[-1])
    return float(min(vals))


# ---------------------------------------------------------------------------
# Fredholm verdict
# ---------------------------------------------------------------------------


def fredholm_verdict(sys, m: float = 0.0, tau_grid=None, tau_max: float | None = None,
                     tau_points: int = 257, tol_ell: float | None = None,
                     tol_inv: float | None = None) -> FredholmReport:
    """Ellipticity plus invertibility of the indicial family on every end.

    Never raises on a mathematical failure; the report carries the reason.
    """
    system = as_system(sys)
    notes = []
    try:
        S = system.symbol_matrix()
        ell, mind = is_adn_elliptic(S, tol=tol_ell, grid=system.grid)
    except (SymbolError, CalculusError) as exc:
        return FredholmReport(False, 0.0, [], False, m, [f"symbol: {exc}"])
    P = system.to_operator()
    grid = system.grid
    cert = _large_tau_certificate(S)
    m_growth = max(min(a + b for a, b in zip(system.spec.s, system.spec.t)), 1e-12)
    ends = []
    for e in ENDS:
        try:
            T = limit_operator(P, e)
        except CalculusError as exc:
            notes.append(f"{e}: {exc}")
            ends.append(EndReport(e, False, 0.0, float("nan"), 0.0, 0.0, [], 0.0, 0.0, cert,
                                  float("inf"), False))
            continue
        fam = _WeightedFamily(T, system.spec, m, grid)
        if tau_grid is not None:
            taus = np.asarray(tau_grid, dtype=float)
        else:
            tmax = 4.0 * grid.link.k_nyquist if tau_max is None else float(tau_max)
            if T.stencil:
                # a stencil symbol is periodic in tau; past Nyquist it only repeats
                tmax = min(tmax, grid.tau_nyquist)
            taus = np.linspace(-tmax, tmax, int(tau_points))
        step = float(taus[1] - taus[0]) if taus.size > 1 else 0.0
        sv = np.array([fam.smin(tv) for tv in taus])
        smax = max(fam.smax(tv) for tv in taus[:: max(1, taus.size // 16)])
        tol = 1e-8 * smax if tol_inv is None else tol_inv * smax
        # refine every local minimum
        cands = []
        for i in range(taus.size):
            lo = sv[i - 1] if i > 0 else np.inf
            hi = sv[i + 1] if i + 1 < taus.size else np.inf
            if sv[i] <= lo and sv[i] <= hi:
                a = taus[max(i - 1, 0)]
                b = taus[min(i + 1, taus.size - 1)]
                if b > a:
                    r = minimize_scalar(fam.smin, bounds=(a, b), method="bounded",
                                        options={"xatol": 1e-13 * max(1.0, abs(taus[i]))})
                    tv, val = (float(r.x), float(r.fun)) if r.fun < sv[i] else (float(taus[i]), float(sv[i]))
                else:
                    tv, val = float(taus[i]), float(sv[i])
                cands.append((val, tv))
        val, tmin = min(cands) if cands else (float(sv.min()), float(taus[np.argmin(sv)]))
        sing = sorted({round(tv, 12) for v, tv in cands if v <= tol})
        raw_min = min(fam.smin(tv, weighted=False) for tv in [tmin] + list(taus))
        # hand-off: growth cert * |tau|^m exceeds twice the scanned minimum
        reach = float(np.max(np.abs(taus)))
        if cert > 0 and m_growth > 1e-6:
            hand = float(np.exp(np.log(2.0 * raw_min / cert) / m_growth)) if raw_min > 0 else 0.0
        elif cert > 0:
            # no growth: the weighted family tends to the degree-0 weighted
            # principal symbol, so hand off where the scan stays above cert/2
            low = np.nonzero(sv < 0.5 * cert)[0]
            hand = 0.0 if low.size == 0 else float(np.max(np.abs(taus[low])))
            if hand >= reach - 0.1 * reach:
                hand = float("inf")
        else:
            hand = float("inf")
        # without tau^p terms (p > 0) the family is periodic in tau (constant
        # when there is no stencil), so one full period is a complete scan
        periodic = set(T.diff) <= {0} and (not T.stencil or reach >= grid.tau_nyquist * (1 - 1e-12))
        covers = hand <= reach + 1e-12 or periodic
        ok = bool(val > tol and covers)
        if not covers:
            notes.append(f"{e}: scan radius {np.max(np.abs(taus)):.3g} below hand-off {hand:.3g}")
        ends.append(EndReport(e, ok, val, tmin, raw_min, tol, [float(x) for x in sing],
                              float(np.max(np.abs(taus))), step, cert, float(hand), covers))
    verdict = bool(ell and all(r.indicial_ok for r in ends))
    return FredholmReport(bool(ell), float(mind), ends, verdict, m, notes)


# ---------------------------------------------------------------------------
# compactness
# ---------------------------------------------------------------------------


@dataclass
class CompactnessReport:
    symbol_exponent: float
    symbol_top: float
    limit_norms: dict
    sv_tail: list
    verdict: bool

    def to_dict(self):
        return {"verdict": self.verdict, "symbol_exponent": self.symbol_exponent,
                "symbol_top": self.symbol_top, "limit_norms": dict(self.limit_norms),
                "sv_tail": list(self.sv_tail)}


def _sv_tail(P: OperatorMatrix, frac: float) -> float:
    """Singular value at a fixed fraction of the rank of ``P`` on its nonzero rows and columns.

    For a compact operator this index tracks a frequency that grows with
    the resolution, so the value falls when the grid is refined.
    """
    M = P.mat
    rows = np.nonzero(np.any(M != 0, axis=1))[0]
    cols = np.nonzero(np.any(M != 0, axis=0))[0]
    if rows.size == 0:
        return 0.0
    s = np.linalg.svd(M[np.ix_(rows, cols)], compute_uv=False)
    return float(s[min(int(frac * s.size), s.size - 1)])


def compactness_check(P: OperatorMatrix, refined: OperatorMatrix | None = None, tol: float = 1e-6,
                      tail_frac: float = 0.25) -> CompactnessReport:
    """Compact iff the order-0 symbol and both limit operators vanish.

    The symbol signal is the fitted exponent of oscillatory samples at
    three depths: an exponent below ``-1/2`` (or vanishing samples) means
    ``sigma_0 = 0``. With ``refined`` (same operator on a finer t-grid)
    the singular value at the fraction ``tail_frac`` of the spectrum must
    fall.
    """
    if P.tag not in ("inv", "ess", "comp", "smoothing_S"):
        raise NotInCalculus(f"tag {P.tag!r} is outside the calculus")
    if P.order > 0:
        raise CalculusError("compactness_check needs order <= 0")
    g = P.grid
    scale = float(np.max(np.abs(P.mat), initial=0.0))
    expo, top = -np.inf, 0.0
    if scale > 0:
        d = (0.6, 0.8)
        smax = top_alias_free_scale(g, d)
        scales = smax * np.array([0.25, 0.5, 1.0])
        worst = -np.inf
        for tc in (g.t_min / 2, 0.0, g.t_max / 2):
            smp = oscillatory_symbol_extract(P, (0.0, tc), d, scales)
            mag = np.abs(smp.values) if P.rank == 1 else np.linalg.norm(smp.values, axis=(1, 2))
            top = max(top, float(mag[-1]))
            if mag[-1] > 1e-12 * max(1.0, scale):
                worst = max(worst, smp.exponent)
        expo = worst
    sym_zero = not (expo > -0.5)
    lim = {}
    for e in ENDS:
        if P.tag == "comp":
            lim[e] = 0.0
            continue
        try:
            T = limit_operator(P, e)
            lim[e] = T.norm_estimate()
        except CalculusError:
            lim[e] = float("inf")
    lim_zero = all(v <= tol * max(1.0, scale) for v in lim.values())
    tail = [_sv_tail(P, tail_frac)]
    tail_ok = True
    if refined is not None:
        tail.append(_sv_tail(refined, tail_frac))
        tail_ok = tail[1] < tail[0] or tail[0] == 0.0
    verdict = bool(sym_zero and lim_zero and tail_ok) if scale > 0 else True
    return CompactnessReport(float(expo), top, lim, tail, verdict)


# ---------------------------------------------------------------------------
# inverse membership
# ---------------------------------------------------------------------------


@dataclass
class CalculusMembershipReport:
    inv_part_residual: float
    conv_kernel_decay_exponents: dict
    conv_kernel_weighted_sup: dict
    schwartz_remainder_decay: dict
    remainder_weighted_sup: list
    closure_residual: float
    limit_inverse_residual: dict
    atkinson_residual: float | None
    smallest_sv: float
    largest_sv: float
    index_estimate: tuple
    decay_threshold: float
    verdict: bool
    finite_support: dict = field(default_factory=dict)

    @property
    def decay_exponents(self) -> list:
        out = []
        for e in ENDS:
            out.extend(self.conv_kernel_decay_exponents.get(e, []))
        return out

    def to_dict(self):
        return {"verdict": self.verdict, "inv_part_residual": self.inv_part_residual,
                "decay_exponents": self.decay_exponents,
                "conv_kernel_decay_exponents": {e: list(v) for e, v in self.conv_kernel_decay_exponents.items()},
                "conv_kernel_weighted_sup": {e: list(v) for e, v in self.conv_kernel_weighted_sup.items()},
                "schwartz_remainder_decay": dict(self.schwartz_remainder_decay),
                "remainder_weighted_sup": [list(r) for r in self.remainder_weighted_sup],
                "closure_residual": self.closure_residual,
                "limit_inverse_residual": dict(self.limit_inverse_residual),
                "atkinson_residual": self.atkinson_residual, "smallest_sv": self.smallest_sv,
                "largest_sv": self.largest_sv, "index_estimate": list(self.index_estimate),
                "decay_threshold": self.decay_threshold,
                "finite_support": dict(self.finite_support)}


def loglog_slopes(u: np.ndarray, c: np.ndarray, n_windows: int = 6) -> list:
    """Decay slopes ``-d log c / d log u`` fitted on consecutive windows."""
    edges = np.linspace(u.min(), u.max(), n_windows + 1)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (u >= a - 1e-12) & (u <= b + 1e-12) & (c > 0)
        if np.count_nonzero(sel) < 2:
            continue
        A = np.vstack([np.ones(sel.sum()), np.log(u[sel])]).T
        sol, *_ = np.linalg.lstsq(A, np.log(c[sel]), rcond=None)
        out.append(float(-sol[1]))
    return out


def far_field_profile(T: LimitOperator, floor_rel: float = 1e-11):
    """``(u, max_{x,y} |C(u)|)`` on the outer half of the resolvable offsets.

    An offset is resolvable while the kernel stays above ``floor_rel`` and
    ten times the Cauchy gap of the read (both relative to the peak).
    """
    floor_rel = max(floor_rel, 10.0 * T.cauchy_gap)
    st = T.stencil
    offs = np.array(sorted(l for l in st if l > 0))
    mags = np.array([max(np.max(np.abs(st[l])), np.max(np.abs(st[-l])) if -l in st else 0.0)
                     for l in offs])
    peak = max(np.max(np.abs(B)) for B in st.values())
    alive = np.nonzero(mags > floor_rel * peak)[0]
    if alive.size == 0:
        return np.array([]), np.array([])
    l_hi = offs[alive[-1]]
    sel = (offs >= l_hi / 2) & (offs <= l_hi)
    return offs[sel] * T.h_t, mags[sel]


def _remainder_profile(Rm: np.ndarray, grid, rank, excl: float):
    """Max ``|R(p, q)|`` grouped by ``max(|t_p|, |t_q|)``, skipping the margin zones."""
    t = grid.t
    tj = grid.point_t_index(rank)
    tabs = np.abs(t)
    keep_t = (t >= grid.t_min + excl) & (t <= grid.t_max - excl)
    keep = keep_t[tj]
    A = np.abs(Rm)[np.ix_(keep, keep)]
    d = np.maximum(tabs[tj[keep]][:, None], tabs[tj[keep]][None, :])
    nb = 24
    edges = np.linspace(0.0, d.max() + 1e-9, nb + 1)
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, nb - 1)
    prof = np.zeros(nb)
    np.maximum.at(prof, idx.ravel(), A.ravel())
    mids = 0.5 * (edges[:-1] + edges[1:])
    return mids, prof


def invert_and_verify(T, m: float = 0.0, tol_inv: float = 1e-8, decay_threshold: float = 4.0,
                      atkinson: bool = True, window: float | None = None, tol_cauchy: float = 1e-4,
                      fredholm: FredholmReport | None = None, neumann_depth: int = 2):
    """Dense inverse and its calculus-membership report.

    Returns ``(T_inv, report)``. The inverse is split into the
    ``s0`` extensions of its limit convolution kernels and a remainder;
    the kernels must decay superpolynomially (log-log slopes increasing and
    above ``decay_threshold``) and the remainder must decay away from the
    core.
    """
    system = as_system(T)
    P = system.to_operator() if isinstance(T, ADNSystem) else T
    if isinstance(T, ADNSystem) and not system.spec.nonnegative():
        raise CalculusError("invert_and_verify needs s_i, t_j >= 0")
    if fredholm is None:
        fredholm = fredholm_verdict(system, m)
    if not fredholm.verdict:
        raise CalculusError("operator is not Fredholm: " + "; ".join(fredholm.notes or
                                                                   [f"min sv {fredholm.min_sv:.3e}"]))
    g = P.grid
    n = P.N
    lu = sla.lu_factor(P.mat)
    Tinv = sla.lu_solve(lu, np.eye(n))
    smax = float(svds(P.mat, k=1, return_singular_vectors=False)[0]) if n > 400 else \
        float(np.linalg.norm(P.mat, 2))
    inv_norm = float(svds(Tinv, k=1, return_singular_vectors=False)[0]) if n > 400 else \
        float(np.linalg.norm(Tinv, 2))
    smin = 1.0 / inv_norm
    if smin <= tol_inv * smax:
        raise CalculusError(f"matrix is numerically singular (smallest sv {smin:.3e})")
    index = (0, 0)  # invertible on the grid: kernel and cokernel both empty
    Iop = OperatorMatrix(Tinv, g, -P.order, np.inf, P.R, "ess", P.rank, None, None, None,
                         f"({P.name})^-1")
    closure = float(np.max(np.abs(Tinv @ P.mat - np.eye(n))))
    # limit kernels
    R_eff = invariance_radius(P) if P.tag == "inv" else g.R_inv
    lims, decay, wsup, lim_res, finite = {}, {}, {}, {}, {}
    gaps = []
    for e in ENDS:
        Te = limit_operator(Iop, e, tol=tol_cauchy, window=window, R_eff=min(R_eff, g.R_inv))
        lims[e] = Te
        gaps.append(Te.cauchy_gap)
        u, c = far_field_profile(Te)
        decay[e] = loglog_slopes(u, c) if u.size else []
        # nothing off the diagonal above the floor: finitely supported kernel
        finite[e] = u.size == 0
        # weighted sups of the convolution kernel: sup |u^i d_u^j C(u)|
        offs = np.array(sorted(Te.stencil))
        C = np.array([np.max(np.abs(Te.stencil[l])) for l in offs])
        dC = np.abs(np.gradient(np.array([Te.stencil[l] for l in offs]), g.h_t, axis=0)).max(axis=(1, 2))
        uu = np.abs(offs) * g.h_t
        wsup[e] = [float(np.max(uu ** i * C)) for i in (0, 2, 4, 6)] + \
                  [float(np.max(uu ** i * dC)) for i in (0, 2, 4, 6)]
        try:
            In_T = limit_operator(P, e)
            prod = Te @ In_T
            lim_res[e] = prod.distance(prod.identity_like(), stencil_only=True)
        except CalculusError:
            lim_res[e] = float("nan")
    # remainder after removing both convolution parts
    S = s0_extend(lims["left"], g, "left").mat + s0_extend(lims["right"], g, "right").mat
    Rm = Tinv - S
    W = max(max(abs(l) for l in lims[e].stencil) for e in ENDS) * g.h_t
    mids, prof = _remainder_profile(Rm, g, P.rank, excl=g.margin)
    floor = 10 * max(np.max(np.abs(lims[e].stencil[max(lims[e].stencil)])) for e in ENDS) + \
        1e-11 * np.max(np.abs(Tinv))
    live = prof > floor
    rem = {"floor": float(floor), "window": float(W)}
    if np.any(live):
        last = np.nonzero(live)[0][-1]
        d_hi = mids[last]
        sel = (mids >= d_hi / 2) & (mids <= d_hi) & live & (mids > 0)
        slopes = loglog_slopes(mids[sel], prof[sel], n_windows=min(3, max(1, sel.sum() // 2)))
        rem.update(radius=float(d_hi), slopes=slopes)
    else:
        rem.update(radius=0.0, slopes=[])
    rv = np.tile(np.repeat(np.abs(rho(g.t)), g.n_sites), P.rank)
    keep = np.tile(np.repeat((g.t >= g.t_min + g.margin) & (g.t <= g.t_max - g.margin), g.n_sites), P.rank)
    ws = weighted_sup_norms(Rm[np.ix_(keep, keep)], rv[keep], rv[keep], np.array([0.0, 1.0, 2.0]))
    atk = None
    if atkinson and P.symbol is not None:
        try:
            atk = parametrix(P, neumann_depth).residual_left
        except CalculusError:
            atk = None
    decay_ok = all(finite[e] or (decay[e] and min(decay[e]) >= decay_threshold) for e in ENDS)
    increasing = all(np.all(np.diff(decay[e]) > 0) for e in ENDS if len(decay[e]) > 1)
    rem_slopes = rem.get("slopes", [])
    rem_ok = (not rem_slopes) or min(rem_slopes) >= decay_threshold
    verdict = bool(decay_ok and increasing and rem_ok
                   and max(gaps) <= tol_cauchy and closure <= 1e-8)
    rep = CalculusMembershipReport(float(max(gaps)), decay, wsup, rem, ws.tolist(), closure,
                                   lim_res, atk, smin, smax, index, decay_threshold, verdict,
                                   finite)
    Iop.limits = lims  # type: ignore[attr-defined]
    return Iop, rep


# ---------------------------------------------------------------------------
# joint map
# ---------------------------------------------------------------------------


@dataclass
class JointRecord:
    limits: dict
    symbol_samples: dict
    compatibility: dict
    both_vanish: bool
    membership_ok: bool | None

    def to_dict(self):
        return {"compatibility": dict(self.compatibility), "both_vanish": self.both_vanish,
                "membership_ok": self.membership_ok}


def in_sigma_joint(T: OperatorMatrix, depth: float | None = None) -> JointRecord:
    """``(In(T), sigma(T))`` with ``sigma^R(In T) = R_inf(sigma T)`` sampled on rays.

    The symbol of ``T`` is read deep in each end and compared with the
    symbol of ``s0(In T)`` at the same point and covectors.
    """
    if T.tag not in ("inv", "ess"):
        raise NotInCalculus("in_sigma_joint needs an inv or ess operator")
    g = T.grid
    lims = {e: limit_operator(T, e) for e in ENDS}
    samples, comp = {}, {}
    dirs = [(0.0, 1.0), (0.6, 0.8), (1.0, 0.0), (-0.6, 0.8)]
    sym_mag, lim_mag = 0.0, 0.0
    for e in ENDS:
        S0 = s0_extend(lims[e], g, e)
        d0 = depth if depth is not None else 0.5 * (g.R_inv + g.t_max - g.margin)
        tc = -d0 if e == "left" else d0
        worst = 0.0
        vals = []
        for d in dirs:
            top = top_alias_free_scale(g, d)
            a = oscillatory_symbol_extract(T, (0.0, tc), d, [top], fit=False).values[0]
            b = oscillatory_symbol_extract(S0, (0.0, tc), d, [top], fit=False).values[0]
            sc = max(np.max(np.abs(a)), 1e-300)
            worst = max(worst, float(np.max(np.abs(a - b)) / sc))
            sym_mag = max(sym_mag, float(np.max(np.abs(a))))
            vals.append((a, b))
        samples[e] = vals
        comp[e] = worst
        lim_mag = max(lim_mag, lims[e].scale())
    vanish = sym_mag < 1e-10 and lim_mag < 1e-10
    mem = None
    if vanish:
        mem = bool(np.max(np.abs(T.mat), initial=0.0) < 1e-8 or T.tag in ("comp", "ess"))
    return JointRecord(lims, samples, comp, vanish, mem)
