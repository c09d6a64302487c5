"""Quantization of symbols into grid operators and the way back.

Two discretisations are used, chosen per symbol:

* symbols polynomial in ``tau`` are split as ``sum_p c_p(x, t, xi) tau^p``;
  each ``D_t^p`` becomes a maximal-order centred difference stencil of
  radius ``J = floor(eps/h_t)`` and ``c_p`` is applied spectrally on the
  link. This is exact for ``a == 1`` and accurate to ~1e-11 for
  ``|tau| h_t <= 1``.
* every other symbol goes through its kernel: an inverse DFT over link
  frequencies and a covering t-frequency grid, multiplied by the
  near-diagonal cutoff ``chi`` in the t-offset.

The link is compact, so ``chi`` only cuts the t-offset; the support
radius reported for a quantized operator is the t-radius ``eps``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _accel
from .geometry import CylinderGrid, GridError, LineGrid, Submanifold, chi_offset
from .symbols import FullSymbol

TAGS = ("inv", "ess", "smoothing_S", "comp", "none")


class QuantizationError(ValueError):
    pass


class KernelFitError(RuntimeError):
    """Kernel does not have the claimed classical expansion."""

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class OrderError(ValueError):
    pass


# ---------------------------------------------------------------------------
# finite-difference weights
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def fd_weights(J: int, p: int) -> np.ndarray:
    """Centred weights on offsets ``-J..J`` for ``d^p/dt^p`` (unit spacing).

    Exact rational Fornberg recursion, so the moment conditions
    ``sum_l w_l l^q = p! delta_{pq}`` hold for ``q <= 2J`` to rounding.
    """
    if p == 0:
        w = np.zeros(2 * J + 1)
        w[J] = 1.0
        return w
    if p > 2 * J:
        raise QuantizationError(f"stencil radius {J} too small for derivative order {p}")
    nodes = [Fraction(l) for l in range(-J, J + 1)]
    n = len(nodes)
    c = [[[Fraction(0)] * n for _ in range(n)] for _ in range(p + 1)]
    c[0][0][0] = Fraction(1)
    c1 = Fraction(1)
    for i in range(1, n):
        c2 = Fraction(1)
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            for m in range(min(i, p), -1, -1):
                prev = c[m][i - 1][j]
                prevm = c[m - 1][i - 1][j] if m > 0 else Fraction(0)
                c[m][i][j] = (nodes[i] * prev - m * prevm) / c3
        for m in range(min(i, p), -1, -1):
            prevm = c[m - 1][i - 1][i - 1] if m > 0 else Fraction(0)
            c[m][i][i] = c1 / c2 * (m * prevm - nodes[i - 1] * c[m][i - 1][i - 1])
        c1 = c2
    return np.array([float(v) for v in c[p][n - 1]])


def fd_symbol(J: int, p: int, tau, h: float):
    """Symbol of the stencil for ``D_t^p = (-i d/dt)^p`` at frequency ``tau``."""
    w = fd_weights(J, p)
    l = np.arange(-J, J + 1)
    tau = np.asarray(tau, dtype=float)
    ph = np.exp(1j * np.multiply.outer(tau, l) * h)
    return (-1j) ** p * (ph @ w) / h ** p


# ---------------------------------------------------------------------------
# operator container
# ---------------------------------------------------------------------------


@dataclass
class OperatorMatrix:
    """Dense grid operator with calculus metadata.

    ``mat[p, q]`` acts on grid values, so ``(Pu)(p) = sum_q mat[p, q] u(q)``;
    the kernel is ``mat`` divided by the quadrature weight of ``q``.
    ``exact_limits`` holds, for operators that are differential in ``t``
    at the ends, the link coefficients ``{p: A_p}`` of ``sum_p A_p D_t^p``
    per end; ``fd_J`` is the stencil radius used to realise ``D_t^p``.
    """

    mat: np.ndarray
    grid: object
    order: float
    eps: float = np.inf
    R: float = np.inf
    tag: str = "none"
    rank: int = 1
    symbol: FullSymbol | None = None
    exact_limits: dict | None = None
    fd_J: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown calculus tag {self.tag!r}")
        n = self.rank * self.grid.n_t * self.grid.n_sites
        if self.mat.shape != (n, n):
            raise ValueError(f"matrix shape {self.mat.shape} does not match grid size {n}")

    # ------------------------------------------------------------------
    @property
    def N(self) -> int:
        return self.mat.shape[0]

    @property
    def weight(self) -> float:
        return self.grid.site_weight * self.grid.h_t

    def apply(self, u):
        """Apply to a grid function of shape ``(r, n_t, n_sites)`` or a flat vector."""
        u = np.asarray(u)
        flat = u.reshape(-1)
        out = self.mat @ flat
        return out.reshape(u.shape)

    def replace(self, **kw) -> "OperatorMatrix":
        return replace(self, **kw)

    def is_real(self) -> bool:
        return not np.iscomplexobj(self.mat)

    def _combine(self, other, mat):
        tag = _sum_tag(self.tag, other.tag)
        lim = None
        J = _merged_J(self, other)
        if self.exact_limits is not None and other.exact_limits is not None and J is not False:
            lim = {}
            for end in ("left", "right"):
                a, b = self.exact_limits[end], other.exact_limits[end]
                lim[end] = {p: a.get(p, 0) + b.get(p, 0) for p in set(a) | set(b)}
        return OperatorMatrix(mat, self.grid, max(self.order, other.order), max(self.eps, other.eps),
                              max(self.R, other.R), tag, self.rank, None, lim,
                              J if lim is not None else None)

    def __add__(self, other):
        return self._combine(other, self.mat + other.mat)

    def __sub__(self, other):
        neg = other * -1.0
        return self._combine(neg, self.mat - other.mat)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, c):
        lim = None
        if self.exact_limits is not None:
            lim = {e: {p: c * A for p, A in d.items()} for e, d in self.exact_limits.items()}
        return replace(self, mat=self.mat * c, symbol=None, exact_limits=lim)

    __rmul__ = __mul__


def _diff_J(P):
    """Stencil radius that matters for ``P.exact_limits`` (None: only order-0 terms)."""
    if P.exact_limits is None:
        return None
    if any(p > 0 for d in P.exact_limits.values() for p in d):
        return P.fd_J
    return None


def _merged_J(P, Q):
    a, b = _diff_J(P), _diff_J(Q)
    if a is None:
        return b if b is not None else 0
    if b is None or a == b:
        return a
    return False


def _sum_tag(a, b):
    if a == b:
        return a
    s = {a, b}
    if "none" in s:
        return "none"
    if "ess" in s or "smoothing_S" in s:
        return "ess"
    if s == {"inv", "comp"}:
        return "inv"
    return "none"


def identity_operator(grid, rank: int = 1) -> OperatorMatrix:
    n = rank * grid.n_t * grid.n_sites
    eye = np.eye(rank * grid.n_sites)
    lim = {"left": {0: eye}, "right": {0: eye.copy()}}
    return OperatorMatrix(np.eye(n), grid, 0.0, 0.0, 0.0, "inv", rank, None, lim, 0, "identity")


def zero_operator(grid, rank: int = 1) -> OperatorMatrix:
    n = rank * grid.n_t * grid.n_sites
    return OperatorMatrix(np.zeros((n, n)), grid, -np.inf, 0.0, 0.0, "comp", rank, name="zero")


def multiplication_operator(f, grid, R: float | None = None, rank: int = 1) -> OperatorMatrix:
    """Multiplication by a grid function ``f`` of shape ``(n_t, n_sites)``.

    ``R`` is the radius beyond which ``f`` is t-independent; it is
    verified, and inferred from the data when omitted.
    """
    f = np.asarray(f)
    if f.shape != (grid.n_t, grid.n_sites):
        raise ValueError("multiplier must have shape (n_t, n_sites)")
    t = grid.t
    if R is None:
        dl = np.nonzero(np.max(np.abs(f - f[:1]), axis=1) > 1e-12)[0]
        dr = np.nonzero(np.max(np.abs(f - f[-1:]), axis=1) > 1e-12)[0]
        R_left = -t[dl[0] - 1] if dl.size else 0.0
        R_right = t[dr[-1] + 1] if dr.size else 0.0
        R = float(max(0.0, R_left, R_right))
    left = t <= -R
    right = t >= R
    if np.any(np.abs(f[left] - f[left][:1]) > 1e-12) or np.any(np.abs(f[right] - f[right][-1:]) > 1e-12):
        raise GridError(f"multiplier is not t-independent beyond R={R}")
    diag = np.tile(f.reshape(-1), rank)
    lim = {"left": {0: np.diag(np.tile(f[left][0], rank))},
           "right": {0: np.diag(np.tile(f[right][-1], rank))}}
    return OperatorMatrix(np.diag(diag), grid, 0.0, 0.0, float(R), "inv", rank, None, lim, 0,
                          "multiplication")


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


def _row_classes(a: FullSymbol, grid: CylinderGrid):
    t = grid.t
    if not a.t_dependent or a.R <= 0:
        return np.zeros(grid.n_t, dtype=np.int64), np.array([0.0]), {"left": 0, "right": 0}
    inner = np.nonzero(np.abs(t) < a.R)[0]
    reps = [-a.R - 1.0] + [float(t[j]) for j in inner] + [a.R + 1.0]
    cls = np.empty(grid.n_t, dtype=np.int64)
    cls[t <= -a.R] = 0
    cls[t >= a.R] = len(reps) - 1
    cls[inner] = np.arange(1, inner.size + 1)
    return cls, np.array(reps), {"left": 0, "right": len(reps) - 1}


def _check_invariance(a: FullSymbol, tol=1e-12):
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 7, 6)
    xi = rng.normal(0, 3, 6)
    tau = rng.normal(0, 3, 6)
    for sgn in (-1, 1):
        v1 = a.matrix(x, sgn * (a.R + 0.25), xi, tau)
        v2 = a.matrix(x, sgn * (a.R + 3.7), xi, tau)
        scale = max(1.0, float(np.max(np.abs(v1))))
        if np.max(np.abs(v1 - v2)) > tol * scale:
            raise QuantizationError(f"symbol {a.name} varies in t beyond its radius R={a.R}")


def _link_kernel(coef):
    """``K[i, i'] = (1/n) sum_k c(x_i, k) e^{i k (x_i - x_i')}`` per component.

    coef: (n_x(i), n_x(k), r, r) -> (r*n_x, r*n_x) ordered (c, i), (c', i').
    """
    n = coef.shape[0]
    r = coef.shape[-1]
    K = np.fft.ifft(coef, axis=1)  # (i, z, r, r)
    z = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    B = K[np.arange(n)[:, None], z]  # (i, i', r, r)
    return B.transpose(2, 0, 3, 1).reshape(r * n, r * n)


def _eval_link_symbol(a, grid, t_val, tau_vals, xs):
    """Symbol on ``(x_i, k, tau)`` with the link Nyquist mode averaged over +-k_N.

    Returns shape (n_xs, n_k, n_tau, r, r).
    """
    k = grid.link.k
    nyq = grid.n_x // 2
    X = xs[:, None, None]
    K = k[None, :, None]
    T = np.asarray(tau_vals)[None, None, :]
    vals = a.matrix(X, t_val, K, T).astype(complex)
    vn = a.matrix(X, t_val, -K[:, nyq:nyq + 1, :], T)
    vals[:, nyq] = 0.5 * (vals[:, nyq] + vn[:, 0])
    return vals


def quantize(a: FullSymbol, grid: CylinderGrid, eps_inner: float | None = None,
             eps_outer: float | None = None, M_t: int | None = None) -> OperatorMatrix:
    """Matrix of ``q(a)`` on the grid (left quantization, cut near the diagonal)."""
    ei = grid.eps_inner if eps_inner is None else float(eps_inner)
    eo = grid.eps_outer if eps_outer is None else float(eps_outer)
    if a.R + eo >= grid.R_inv:
        raise QuantizationError(
            f"symbol radius R={a.R} plus cutoff radius {eo} reaches R_inv={grid.R_inv}")
    _check_invariance(a)
    h = grid.h_t
    J = int(np.floor(eo / h + 1e-9))
    if J < 1:
        raise QuantizationError("cutoff radius is below one t-spacing")
    r = a.rank
    n = grid.n_x
    cls, reps, end_cls = _row_classes(a, grid)
    xs = grid.x if a.x_dependent else grid.x[:1]
    nl = 2 * J + 1
    blocks = np.zeros((reps.size, nl, r * n, r * n), dtype=complex)
    use_fd = a.tau_degree is not None and a.tau_degree <= min(4, 2 * J)
    coeff_store = []
    if use_fd:
        d = int(a.tau_degree)
        nodes = np.array([0.0] + [s * v for v in range(1, d + 1) for s in (1, -1)])[: d + 1]
        V = np.vander(nodes, d + 1, increasing=True)
        Vinv = np.linalg.inv(V)
        probe = np.array([0.37, -1.9, 2.6])
        for c_i, tv in enumerate(reps):
            vals = _eval_link_symbol(a, grid, tv, nodes, xs)  # (nxs, k, node, r, r)
            coef = np.einsum("pn,iknab->pikab", Vinv, vals)
            chk = _eval_link_symbol(a, grid, tv, probe, xs)
            pw = probe[:, None] ** np.arange(d + 1)[None, :]
            rec = np.einsum("qp,pikab->ikqab", pw, coef)
            scale = max(1.0, float(np.max(np.abs(chk))))
            if np.max(np.abs(rec - chk)) > 1e-9 * scale:
                raise QuantizationError(f"symbol {a.name} is not a polynomial of degree {d} in tau")
            if not a.x_dependent:
                coef = np.broadcast_to(coef, (d + 1, n) + coef.shape[2:])
            links = {p: _link_kernel(coef[p]) for p in range(d + 1)}
            coeff_store.append(links)
            for p, Kp in links.items():
                w = fd_weights(J, p) * (-1j) ** p / h ** p
                for li in range(nl):
                    if w[li] != 0:
                        blocks[c_i, li] += w[li] * Kp
    else:
        if M_t is None:
            M_t = max(512, 2 * grid.n_t)
        M_t += M_t % 2
        om = 2 * np.pi * np.fft.fftfreq(M_t, d=h)
        nyq_t = M_t // 2
        offs = np.arange(-J, J + 1)
        chi = chi_offset(offs * h, ei, eo)
        zt = (-offs) % M_t
        zi = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        for c_i, tv in enumerate(reps):
            S = _eval_link_symbol(a, grid, tv, om, xs)  # (nxs, k, om, r, r)
            Sn = _eval_link_symbol(a, grid, tv, np.array([-om[nyq_t]]), xs)
            S[:, :, nyq_t] = 0.5 * (S[:, :, nyq_t] + Sn[:, :, 0])
            K = np.fft.ifft2(S, axes=(1, 2))  # (nxs, z_x, z_t, r, r)
            Kz = K[:, :, zt] * chi[None, None, :, None, None]  # (nxs, z_x, l, r, r)
            if a.x_dependent:
                B = Kz[np.arange(n)[:, None], zi]  # (i, i', l, r, r)
            else:
                B = Kz[0][zi]  # (i, i', l, r, r)
            blocks[c_i] = B.transpose(2, 3, 0, 4, 1).reshape(nl, r * n, r * n)
    dtype = complex
    if np.max(np.abs(blocks.imag)) <= 1e-13 * max(np.max(np.abs(blocks.real)), 1e-300):
        blocks = blocks.real.copy()
        dtype = float
    mat = _accel.assemble_stencil(blocks, cls, r, grid.n_t, n, J, dtype=dtype)
    exact = None
    if use_fd:
        exact = {}
        for end in ("left", "right"):
            links = coeff_store[end_cls[end]]
            exact[end] = {p: (A.real.copy() if dtype is float else A) for p, A in links.items()}
    return OperatorMatrix(mat, grid, a.order, J * h, a.R + J * h, "inv", r, a, exact,
                          J if use_fd else None, a.name)


# ---------------------------------------------------------------------------
# symbol extraction
# ---------------------------------------------------------------------------


@dataclass
class SymbolSamples:
    """Oscillatory samples ``e^{-i<p,eta>}(P e_eta)(p)`` along one ray."""

    eta: np.ndarray  # (n, 2) actual covectors used
    scales: np.ndarray  # |eta|
    values: np.ndarray  # (n,) or (n, r, r)
    alias_free: np.ndarray  # bool mask
    exponent: float
    coefficient: complex

    @property
    def top(self):
        idx = np.nonzero(self.alias_free)[0][-1]
        return self.eta[idx], self.values[idx]


def plane_wave(grid: CylinderGrid, eta) -> np.ndarray:
    X, T = grid.mesh()
    return np.exp(1j * (eta[0] * X + eta[1] * T))


def _rows_of_point(grid, point, r):
    j = grid.t_index(point[1])
    i = int(round(point[0] / grid.h_x)) % grid.n_x
    base = j * grid.n_x + i
    return [c * grid.n_t * grid.n_x + base for c in range(r)], (grid.x[i], grid.t[j])


def oscillatory_symbol_extract(P, point, direction, scales: Sequence[float],
                               fit: bool = True) -> SymbolSamples:
    """Sample the symbol of ``P`` (or of a product ``P[0] @ P[1] @ ...``) on a ray.

    The link component of each covector is snapped to the nearest link
    frequency. A scale is alias-free when ``|eta_x| <= k_N/2`` and
    ``|eta_t| <= tau_N/2``.
    """
    ops = list(P) if isinstance(P, (list, tuple)) else [P]
    grid = ops[0].grid
    r = ops[0].rank
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    dk = 2 * np.pi / grid.L
    rows, (px, pt) = _rows_of_point(grid, point, r)
    etas, vals = [], []
    for s in scales:
        ex = np.round(s * d[0] / dk) * dk
        et = s * d[1]
        eta = np.array([ex, et])
        e = plane_wave(grid, eta).reshape(-1)
        phase = np.exp(-1j * (ex * px + et * pt))
        out = np.zeros((r, r), dtype=complex)
        for c in range(r):
            vec = np.zeros(r * e.size, dtype=complex)
            vec[c * e.size:(c + 1) * e.size] = e
            w = vec
            for op in reversed(ops[1:]):
                w = op.mat @ w
            row = ops[0].mat[rows] @ w
            out[:, c] = row * phase
        etas.append(eta)
        vals.append(out[0, 0] if r == 1 else out)
    etas = np.array(etas)
    sc = np.linalg.norm(etas, axis=1)
    ok = (np.abs(etas[:, 0]) <= grid.link.k_nyquist / 2 + 1e-12) & \
         (np.abs(etas[:, 1]) <= grid.tau_nyquist / 2 + 1e-12)
    if not np.any(ok):
        raise QuantizationError("all requested scales are aliased on this grid")
    vals = np.array(vals)
    expo, coef = np.nan, complex(np.nan)
    if fit:
        mag = np.abs(vals) if r == 1 else np.linalg.norm(vals, axis=(1, 2))
        good = ok & (sc > 0) & (mag > 0)
        if np.count_nonzero(good) >= 2:
            A = np.vstack([np.ones(good.sum()), np.log(sc[good])]).T
            sol, *_ = np.linalg.lstsq(A, np.log(mag[good]), rcond=None)
            expo = float(sol[1])
            top = np.nonzero(good)[0][-1]
            v = vals[top] if r == 1 else vals[top][0, 0]
            coef = complex(v / sc[top] ** expo)
    return SymbolSamples(etas, sc, vals, ok, expo, coef)


def top_alias_free_scale(grid: CylinderGrid, direction) -> float:
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    lim = []
    if abs(d[0]) > 1e-12:
        lim.append(grid.link.k_nyquist / 2 / abs(d[0]))
    if abs(d[1]) > 1e-12:
        lim.append(grid.tau_nyquist / 2 / abs(d[1]))
    return float(min(lim))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@dataclass
class KernelField:
    """Kernel values ``k(p, q) = mat[p, q] / w(q)`` and the near-diagonal mask."""

    values: np.ndarray
    weight: float
    diagonal_mask: np.ndarray
    meta: dict = field(default_factory=dict)


def kernel_of(P: OperatorMatrix) -> KernelField:
    w = P.weight
    g = P.grid
    tj = g.point_t_index(P.rank)
    n = P.N
    same_t = tj[:, None] == tj[None, :]
    mask = same_t & np.eye(n, dtype=bool)
    if P.rank > 1:
        m = g.n_t * g.n_sites
        loc = np.arange(n) % m
        mask = loc[:, None] == loc[None, :]
    meta = dict(order=P.order, eps=P.eps, R=P.R, tag=P.tag, rank=P.rank, grid=g,
                symbol=P.symbol, exact_limits=P.exact_limits, fd_J=P.fd_J, name=P.name)
    return KernelField(P.mat / w, w, mask, meta)


def operator_from_kernel(K: KernelField, meta: dict | None = None) -> OperatorMatrix:
    m = dict(K.meta)
    if meta:
        m.update(meta)
    return OperatorMatrix(K.values * K.weight, m["grid"], m["order"], m.get("eps", np.inf),
                          m.get("R", np.inf), m.get("tag", "none"), m.get("rank", 1),
                          m.get("symbol"), m.get("exact_limits"), m.get("fd_J"), m.get("name", ""))


def kernel_support_radius(P: OperatorMatrix, rel_tol: float = 1e-14) -> float:
    """Largest t-offset carrying a kernel entry above ``rel_tol * max``."""
    a = np.abs(P.mat)
    mx = a.max(initial=0.0)
    if mx == 0:
        return 0.0
    tj = P.grid.point_t_index(P.rank)
    p, q = np.nonzero(a > rel_tol * mx)
    return float(np.max(np.abs(tj[p] - tj[q])) * P.grid.h_t)


def kernel_t_extent(P: OperatorMatrix, rel_tol: float = 1e-14) -> tuple[float, float]:
    """Range of ``t`` over rows and columns carrying kernel mass."""
    a = np.abs(P.mat)
    mx = a.max(initial=0.0)
    if mx == 0:
        return (0.0, 0.0)
    tj = P.grid.point_t_index(P.rank)
    p, q = np.nonzero(a > rel_tol * mx)
    t = P.grid.t
    idx = np.concatenate([tj[p], tj[q]])
    return float(t[idx.min()]), float(t[idx.max()])


# ---------------------------------------------------------------------------
# kernel asymptotics
# ---------------------------------------------------------------------------


@dataclass
class KernelAsymptotics:
    exponents: list
    coefficients: np.ndarray  # (n_rays, n_power_terms)
    log_coefficients: np.ndarray  # (n_rays, n_log_terms) may be empty
    smooth_coefficients: np.ndarray  # (n_rays, n_smooth)
    smooth_degrees: list
    log_degrees: list
    residual: float
    rays: list
    window: tuple
    condition: float
    warnings: list
    invariance_gap: float = np.nan


def _ray_samples_cyl(P, base, ray, lo, hi):
    g = P.grid
    a, b = ray
    step = np.hypot(a * g.h_x, b * g.h_t)
    j0 = base // g.n_x
    i0 = base % g.n_x
    ds, ks = [], []
    n = 1
    while n * step <= hi + 1e-12:
        if n * step > lo + 1e-12:
            j = j0 + n * b
            i = (i0 + n * a) % g.n_x
            if not 0 <= j < g.n_t:
                break
            ds.append(n * step)
            ks.append(P.mat[base, j * g.n_x + i] / P.weight)
        n += 1
    return np.array(ds), np.array(ks)


def _ray_samples_line(P, base, ray, lo, hi):
    g = P.grid
    b = int(np.sign(ray[1]) or 1)
    j0 = base // g.n_sites
    a0 = base % g.n_sites
    ds, ks = [], []
    n = 1
    while n * g.h_t <= hi + 1e-12:
        if n * g.h_t > lo + 1e-12:
            j = j0 + n * b
            if not 0 <= j < g.n_t:
                break
            ds.append(n * g.h_t)
            ks.append(P.mat[base, j * g.n_sites + a0] / P.weight)
        n += 1
    return np.array(ds), np.array(ks)


def _basis(m, n_dim, N_fit, dmax):
    exps = [-n_dim - m + j for j in range(N_fit + 1)]
    integer_case = float(-m).is_integer() and -m > 0
    cols, names = [], []
    log_deg = []
    for e in exps:
        cols.append(("pow", e))
    if integer_case:
        for j in range(N_fit + 1):
            deg = -n_dim - m + j
            if deg >= 0:
                cols.append(("log", deg))
                log_deg.append(deg)
    smooth = [q for q in range(0, int(np.floor(dmax)) + 1)
              if not any(abs(q - e) < 1e-12 for e in exps)]
    for q in smooth:
        cols.append(("smooth", q))
    return exps, log_deg, smooth, cols


def kernel_asymptotics_fit(P: OperatorMatrix, m: float | None = None, rays=None, N_fit: int = 1,
                           point=None, window=None, tol: float = 0.05,
                           invariance_probe: bool = True) -> KernelAsymptotics:
    """Least-squares fit of ``k(p, p + d*ray)`` to the classical expansion.

    Basis: ``d^{-n-m+j}`` for ``j <= N_fit``, ``d^{deg} ln d`` terms when
    ``-m`` is a positive integer, and the smooth monomials ``d^q`` up to
    the largest fitted power (the smooth part of the kernel).
    """
    m = P.order if m is None else float(m)
    if not m < 0:
        raise KernelFitError(f"kernel fit needs negative order, got {m}")
    g = P.grid
    is_line = isinstance(g, LineGrid)
    n_dim = 1 if is_line else 2
    if rays is None:
        rays = [(0, 1), (0, -1)] if is_line else [(0, 1), (1, 0), (0, -1), (-1, 0), (1, 1), (-1, 2)]
    if is_line:
        h = g.h_t
        L = g.parent.L
        r_inj = min(L, g.t_max)  # periodic images of a vertical line sit at distance >= L
        npt = g.n_sites
    else:
        h = max(g.h_x, g.h_t)
        r_inj = min(g.L / 2, g.t_max)
        npt = g.n_x
    if window is None:
        hi = r_inj / 2
        if P.tag == "inv" and P.fd_J is None and np.isfinite(P.eps):
            # the diagonal cut alters the kernel beyond its inner radius
            hi = min(hi, (g.parent if is_line else g).eps_inner)
        lo = 2 * h
    else:
        lo, hi = window
    if point is None:
        base = g.t_index(0.0) * npt if not is_line else (np.argmin(np.abs(g.t))) * npt
    else:
        base = int(point)
    sampler = _ray_samples_line if is_line else _ray_samples_cyl
    exps, log_deg, smooth, cols = _basis(m, n_dim, N_fit, -n_dim - m + N_fit)
    coefs, logc, smc = [], [], []
    worst, cond = 0.0, 0.0
    warns = []

    def fit_at(b):
        res_c, res_l, res_s, wres, cnd = [], [], [], 0.0, 0.0
        for ray in rays:
            d, k = sampler(P, b, ray, lo, hi)
            if d.size < len(cols) + 1:
                raise KernelFitError(f"ray {ray}: only {d.size} samples for {len(cols)} basis terms")
            A = np.empty((d.size, len(cols)))
            for c, (kind, e) in enumerate(cols):
                if kind == "log":
                    A[:, c] = d ** e * np.log(d)
                else:
                    A[:, c] = d ** e
            colscale = np.linalg.norm(A, axis=0)
            As = A / colscale
            sol, *_ = np.linalg.lstsq(As, k, rcond=None)
            sol = sol / colscale
            fitv = A @ sol
            nrm = np.linalg.norm(k)
            rel = np.linalg.norm(k - fitv) / nrm if nrm > 0 else 0.0
            wres = max(wres, rel)
            cnd = max(cnd, np.linalg.cond(As))
            kinds = [kd for kd, _ in cols]
            res_c.append([sol[i] for i, kd in enumerate(kinds) if kd == "pow"])
            res_l.append([sol[i] for i, kd in enumerate(kinds) if kd == "log"])
            res_s.append([sol[i] for i, kd in enumerate(kinds) if kd == "smooth"])
        return np.array(res_c), np.array(res_l), np.array(res_s), wres, cnd

    coefs, logc, smc, worst, cond = fit_at(base)
    if log_deg:
        warns.append("log and power terms of equal degree are not uniquely separated; "
                     "both are reported")
    if cond > 1e10:
        warns.append(f"ill-conditioned fit (condition {cond:.2e})")
    gap = np.nan
    if invariance_probe and np.isfinite(P.R) and P.tag == "inv":
        t_far = -(P.R + min(P.eps, 4.0) + 2 * g.h_t)
        if t_far - hi > g.t_min + 2 * g.h_t:
            j1 = int(round((t_far - g.t_min) / g.h_t))
            j2 = j1 - 4
            c1, l1, s1, *_ = fit_at(j1 * npt + base % npt)
            c2, l2, s2, *_ = fit_at(j2 * npt + base % npt)
            scale = max(np.max(np.abs(c1), initial=0), np.max(np.abs(s1), initial=0), 1e-300)
            gap = float(max(np.max(np.abs(c1 - c2), initial=0), np.max(np.abs(s1 - s2), initial=0),
                            np.max(np.abs(l1 - l2), initial=0) if l1.size else 0.0) / scale)
    fit = KernelAsymptotics(exps, coefs, logc, smc, smooth, log_deg, float(worst), list(rays),
                            (lo, hi), float(cond), warns, gap)
    if worst > tol:
        raise KernelFitError(f"kernel residual {worst:.3e} exceeds {tol:g}: not classical of "
                             f"order {m:g} on the sampled rays", fit)
    return fit


# ---------------------------------------------------------------------------
# restriction to a submanifold
# ---------------------------------------------------------------------------


def restrict_kernel(P: OperatorMatrix, N: Submanifold) -> OperatorMatrix:
    """Operator on ``N`` with kernel ``k_P`` restricted to ``N x N``."""
    q = N.codim
    if not P.order < -q:
        raise OrderError(f"restriction to codimension {q} needs order < {-q}, got {P.order:g}")
    g = P.grid
    if N.grid is not g and N.grid != g:
        raise GridError("submanifold lives on a different grid")
    idx = N.flat_indices()
    m = g.n_t * g.n_x
    full = np.concatenate([c * m + idx for c in range(P.rank)])
    w = np.tile(N.arc_weights().reshape(-1), P.rank)
    mat = P.mat[np.ix_(full, full)] / g.cell * w[None, :]
    R = max(P.R, g.R_inv) if np.isfinite(P.R) else P.R
    return OperatorMatrix(mat, LineGrid(N), P.order + q, P.eps, R, P.tag, P.rank, None, None,
                          None, f"{P.name}|N")
