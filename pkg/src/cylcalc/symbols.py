"""Symbols on the cotangent bundle of the model cylinder.

A symbol is a callable ``a(x, t, xi, tau)`` that broadcasts over numpy
arrays. Scalar symbols return arrays of the broadcast shape; rank-r
symbols return ``shape + (r, r)``. ``xi`` is the link covariable and
``tau`` the covariable dual to ``t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import smooth_step


class SymbolError(ValueError):
    pass


def _excise(r):
    """0 for ``|zeta| <= 1/2``, 1 for ``|zeta| >= 1``."""
    return smooth_step(2.0 * (1.0 - np.asarray(r, dtype=float)))


def _as_matrix(val, rank, shape):
    val = np.asarray(val)
    if rank == 1:
        val = np.broadcast_to(val, shape)
        return val[..., None, None]
    return np.broadcast_to(val, shape + (rank, rank))


class FullSymbol:
    """Symbol of order ``m`` that is independent of ``t`` for ``|t| >= R``.

    Parameters
    ----------
    func : callable
        ``func(x, t, xi, tau)``; numpy-broadcasting.
    order : float
    R : float
        Invariance radius.
    rank : int
    tau_degree : int or None
        Degree when ``func`` is a polynomial in ``tau``; enables the exact
        finite-difference route in :func:`cylcalc.quantize.quantize`.
    x_dependent, t_dependent : bool
        Hints used to share work during quantization. Defaults are the
        safe choice.
    """

    def __init__(self, func: Callable, order: float, R: float = 0.0, rank: int = 1,
                 tau_degree: int | None = None, x_dependent: bool = True,
                 t_dependent: bool = True, derivative_depth: int = 0,
                 name: str | None = None):
        self.func = func
        self.order = float(order)
        self.R = float(R)
        self.rank = int(rank)
        self.tau_degree = tau_degree
        self.x_dependent = bool(x_dependent)
        self.t_dependent = bool(t_dependent)
        self.derivative_depth = int(derivative_depth)
        self.name = name or getattr(func, "__name__", "symbol")

    # evaluation ----------------------------------------------------------
    def __call__(self, x, t, xi, tau):
        return self.func(x, t, xi, tau)

    def matrix(self, x, t, xi, tau):
        """Always return ``shape + (r, r)``."""
        shape = np.broadcast_shapes(np.shape(x), np.shape(t), np.shape(xi), np.shape(tau))
        return _as_matrix(self(x, t, xi, tau), self.rank, shape)

    def principal(self, x, t, xi, tau):
        """Homogeneous leading part, by Richardson extrapolation of ``a(lam*z)/lam^m``."""
        xi = np.asarray(xi, dtype=float)
        tau = np.asarray(tau, dtype=float)
        lam = 1e4
        f1 = self.matrix(x, t, lam * xi, lam * tau) / lam ** self.order
        f2 = self.matrix(x, t, 2 * lam * xi, 2 * lam * tau) / (2 * lam) ** self.order
        out = 2 * f2 - f1
        return out[..., 0, 0] if self.rank == 1 else out

    def is_classical(self) -> bool:
        return False

    def __repr__(self):
        return f"{type(self).__name__}({self.name}, order={self.order:g}, R={self.R:g}, rank={self.rank})"


class ClassicalSymbol(FullSymbol):
    """Finite classical expansion ``sum_j a_{m-j}`` of homogeneous components.

    Each component is a callable homogeneous of degree ``m - j`` in
    ``(xi, tau)`` away from zero. Below ``|zeta| = 1`` the component is
    replaced by its value at ``zeta/|zeta|`` times a smooth excision.
    """

    def __init__(self, components: Sequence[Callable], order: float, R: float = 0.0,
                 rank: int = 1, x_dependent: bool = True, t_dependent: bool = True,
                 name: str | None = None, check: bool = True):
        if len(components) == 0:
            raise SymbolError("a classical symbol needs at least one component")
        self.components = list(components)
        m = float(order)

        def func(x, t, xi, tau):
            xi = np.asarray(xi, dtype=float)
            tau = np.asarray(tau, dtype=float)
            r = np.hypot(xi, tau)
            inner = r < 1.0
            rs = np.where(inner, np.where(r > 0, r, 1.0), 1.0)
            # evaluate on the unit circle inside, on the point itself outside
            sx = np.where(inner, np.where(r > 0, xi / rs, 1.0), xi)
            st = np.where(inner, np.where(r > 0, tau / rs, 0.0), tau)
            w = np.where(inner, _excise(r), 1.0)
            total = 0.0
            for c in self.components:
                v = np.asarray(c(x, t, sx, st))
                if rank > 1:
                    total = total + v * w[..., None, None]
                else:
                    total = total + v * w
            return total

        super().__init__(func, m, R, rank, None, x_dependent, t_dependent, 0, name)
        if check:
            self.check_homogeneity()

    def is_classical(self) -> bool:
        return True

    @property
    def n_terms(self) -> int:
        return len(self.components)

    def component(self, j: int) -> Callable:
        return self.components[j]

    def principal(self, x, t, xi, tau):
        return self.components[0](x, t, np.asarray(xi, float), np.asarray(tau, float))

    def check_homogeneity(self, n_rays: int = 100, tol: float = 1e-10, seed: int = 0):
        """Verify ``a_{m-j}(lam w) = lam^{m-j} a_{m-j}(w)`` on random rays."""
        rng = np.random.default_rng(seed)
        th = rng.uniform(0, 2 * np.pi, n_rays)
        rad = rng.uniform(1.0, 3.0, n_rays)
        lam = rng.uniform(1.0, 5.0, n_rays)
        x = rng.uniform(0, 2 * np.pi, n_rays)
        t = rng.uniform(-3, 3, n_rays)
        xi, tau = rad * np.cos(th), rad * np.sin(th)
        worst = 0.0
        for j, c in enumerate(self.components):
            d = self.order - j
            a1 = np.asarray(c(x, t, lam * xi, lam * tau))
            a0 = np.asarray(c(x, t, xi, tau))
            lamb = lam if a0.ndim == 1 else lam[:, None, None]
            ref = lamb ** d * a0
            scale = np.max(np.abs(ref), initial=0.0)
            err = np.max(np.abs(a1 - ref), initial=0.0)
            if scale > 0:
                worst = max(worst, err / scale)
            elif err > tol:
                worst = max(worst, err)
            if err > tol * max(scale, 1e-300) and err > 1e-300:
                raise SymbolError(f"component j={j} is not homogeneous of degree {d:g} "
                                  f"(relative error {err / max(scale, 1e-300):.2e})")
        if not np.any(np.abs(np.asarray(self.components[0](x, t, xi, tau))) > 0):
            raise SymbolError("leading component vanishes identically")
        return worst


# ---------------------------------------------------------------------------
# constructors for the symbols used throughout
# ---------------------------------------------------------------------------


def constant_symbol(c: complex = 1.0, rank: int = 1) -> FullSymbol:
    if rank == 1:
        f = lambda x, t, xi, tau: np.full(np.broadcast_shapes(np.shape(x), np.shape(t), np.shape(xi), np.shape(tau)), c)  # noqa: E731
    else:
        eye = np.eye(rank) * c

        def f(x, t, xi, tau):
            shape = np.broadcast_shapes(np.shape(x), np.shape(t), np.shape(xi), np.shape(tau))
            return np.broadcast_to(eye, shape + (rank, rank)).copy()

    return FullSymbol(f, 0.0, 0.0, rank, tau_degree=0, x_dependent=False, t_dependent=False,
                      name=f"const({c})")


def bessel_symbol(s: float, t0: float = 1.0) -> FullSymbol:
    """``(t0^2 + xi^2 + tau^2)^(s/2)``."""
    s = float(s)
    deg = int(s) if (s >= 0 and float(s).is_integer() and int(s) % 2 == 0) else None

    def f(x, t, xi, tau):
        xi = np.asarray(xi, float)
        tau = np.asarray(tau, float)
        return (t0 * t0 + xi * xi + tau * tau) ** (s / 2)

    return FullSymbol(f, s, 0.0, 1, tau_degree=deg, x_dependent=False, t_dependent=False,
                      name=f"bessel(s={s:g},t0={t0:g})")


def laplace_symbol(c: float = 0.0) -> FullSymbol:
    """``xi^2 + tau^2 + c``: symbol of the shifted cylinder Laplacian."""
    def f(x, t, xi, tau):
        return np.asarray(xi, float) ** 2 + np.asarray(tau, float) ** 2 + c

    return FullSymbol(f, 2.0, 0.0, 1, tau_degree=2, x_dependent=False, t_dependent=False,
                      name=f"laplace(c={c:g})")


def dt_symbol() -> FullSymbol:
    """``i tau``: the symbol of ``d/dt``."""
    def f(x, t, xi, tau):
        return 1j * np.asarray(tau, float) + 0 * np.asarray(xi, float)

    return FullSymbol(f, 1.0, 0.0, 1, tau_degree=1, x_dependent=False, t_dependent=False,
                      name="i*tau")


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------


def eval_symbol(a: FullSymbol, point, covector):
    """Value of ``a`` at base point ``(x, t)`` and covector ``(xi, tau)``."""
    x, t = point
    xi, tau = covector
    if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(tau))):
        raise SymbolError("covector must be finite")
    with np.errstate(over="raise", invalid="raise"):
        try:
            return a(x, t, xi, tau)
        except FloatingPointError as exc:
            raise SymbolError(f"numeric overflow evaluating {a!r}") from exc


def symbol_product(a: FullSymbol, b: FullSymbol) -> FullSymbol:
    """Pointwise (matrix) product; order and invariance radius add / max."""
    if a.rank != b.rank:
        raise SymbolError(f"rank mismatch {a.rank} vs {b.rank}")
    deg = None
    if a.tau_degree is not None and b.tau_degree is not None:
        deg = a.tau_degree + b.tau_degree
    rank = a.rank
    if isinstance(a, ClassicalSymbol) and isinstance(b, ClassicalSymbol):
        comps = []
        for l in range(a.n_terms + b.n_terms - 1):
            pairs = [(i, l - i) for i in range(a.n_terms) if 0 <= l - i < b.n_terms]

            def comp(x, t, xi, tau, pairs=pairs):
                tot = 0.0
                for i, j in pairs:
                    u = a.components[i](x, t, xi, tau)
                    v = b.components[j](x, t, xi, tau)
                    tot = tot + (u @ v if rank > 1 else u * v)
                return tot

            comps.append(comp)
        return ClassicalSymbol(comps, a.order + b.order, max(a.R, b.R), rank,
                               a.x_dependent or b.x_dependent, a.t_dependent or b.t_dependent,
                               name=f"({a.name})*({b.name})", check=False)

    def f(x, t, xi, tau):
        u = a(x, t, xi, tau)
        v = b(x, t, xi, tau)
        return u @ v if rank > 1 else u * v

    return FullSymbol(f, a.order + b.order, max(a.R, b.R), rank, deg,
                      a.x_dependent or b.x_dependent, a.t_dependent or b.t_dependent,
                      min(a.derivative_depth, b.derivative_depth), name=f"({a.name})*({b.name})")


def _ray_samples(n_angles=64, radii=None):
    th = 2 * np.pi * np.arange(n_angles) / n_angles
    radii = np.geomspace(1.0, 1e3, 25) if radii is None else np.asarray(radii)
    TH, RR = np.meshgrid(th, radii, indexing="ij")
    return RR * np.cos(TH), RR * np.sin(TH), RR


def asymptotic_sum(components: Sequence[FullSymbol], max_growth: float = 1e12) -> FullSymbol:
    """Borel-type sum ``sum_j psi(zeta/lam_j) a_{m-j}`` of decreasing-order terms.

    ``lam_j`` is chosen from the sampled seminorm ``C_j`` so that the
    j-th excised term is at most ``2^-j`` in the order ``m-j+1`` seminorm.
    """
    comps = list(components)
    if not comps:
        raise SymbolError("empty component list")
    m = comps[0].order
    R = comps[0].R
    rank = comps[0].rank
    for j, c in enumerate(comps):
        if abs(c.R - R) > 0:
            raise SymbolError(f"component j={j} has invariance radius {c.R}, expected {R}")
        if abs(c.order - (m - j)) > 1e-12:
            raise SymbolError(f"component j={j} has order {c.order}, expected {m - j}")
    if len(comps) == 1:
        return comps[0]
    xi, tau, rr = _ray_samples()
    lams = [1.0]
    for j in range(1, len(comps)):
        v = np.abs(comps[j](0.0, 0.0, xi, tau))
        if v.ndim > 2:
            v = v.max(axis=(-1, -2))
        with np.errstate(all="ignore"):
            Cj = float(np.max(v / (1.0 + rr) ** (m - j)))
        if not np.isfinite(Cj) or Cj > max_growth:
            raise SymbolError(f"seminorm of component j={j} diverges (sampled {Cj:.3e})")
        lams.append(max(1.0, 2.0 ** (j + 1) * Cj))

    def f(x, t, xi, tau):
        xi = np.asarray(xi, float)
        tau = np.asarray(tau, float)
        r = np.hypot(xi, tau)
        tot = comps[0](x, t, xi, tau)
        for j in range(1, len(comps)):
            w = _excise(r / lams[j])
            v = comps[j](x, t, xi, tau)
            tot = tot + (v * w[..., None, None] if rank > 1 else v * w)
        return tot

    sym = FullSymbol(f, m, R, rank, None, any(c.x_dependent for c in comps),
                     any(c.t_dependent for c in comps), name="asymptotic_sum")
    sym.excision_scales = lams
    return sym


def principal_matrix(a: FullSymbol, x, t, xi, tau):
    p = np.asarray(a.principal(x, t, xi, tau))
    shape = np.broadcast_shapes(np.shape(x), np.shape(t), np.shape(xi), np.shape(tau))
    return _as_matrix(p, a.rank, shape)


def _cosphere(n_angles):
    th = 2 * np.pi * np.arange(n_angles) / n_angles
    return np.cos(th), np.sin(th)


def _base_points(grid=None, a=None, n=6):
    if grid is None or a is None or not (a.x_dependent or a.t_dependent):
        return np.array([0.0]), np.array([0.0])
    xs = grid.x[:: max(1, grid.n_x // n)] if a.x_dependent else np.array([0.0])
    lim = max(a.R, 1.0) + 1.0
    ts = np.linspace(-lim, lim, 2 * n + 1) if a.t_dependent else np.array([0.0])
    X, T = np.meshgrid(xs, ts, indexing="ij")
    return X.ravel(), T.ravel()


def is_elliptic(a: FullSymbol, tol: float | None = None, n_angles: int = 512,
                grid=None) -> tuple[bool, float]:
    """Cosphere test ``min |det a_m|^{1/r} >= tol``.

    Returns the verdict and the measured constant ``C``. ``tol`` defaults
    to ``1e-8 * max |a_m|`` on the sample.
    """
    c, s = _cosphere(n_angles)
    X, T = _base_points(grid, a)
    XI = np.broadcast_to(c[None, :], (X.size, n_angles))
    TAU = np.broadcast_to(s[None, :], (X.size, n_angles))
    P = principal_matrix(a, X[:, None], T[:, None], XI, TAU)
    if P.shape[-1] != P.shape[-2]:
        raise SymbolError("principal symbol is not square")
    r = P.shape[-1]
    if r == 1:
        vals = np.abs(P[..., 0, 0])
    else:
        vals = np.abs(np.linalg.det(P)) ** (1.0 / r)
    amax = float(np.max(np.abs(P)))
    C = float(np.min(vals))
    thr = 1e-8 * amax if tol is None else tol
    return bool(C >= thr and C > 0), C


def inverse_symbol(a: FullSymbol) -> FullSymbol:
    """``a^{-1}`` as a symbol of order ``-m`` (caller checks ellipticity)."""
    rank = a.rank

    if isinstance(a, ClassicalSymbol):
        lead = a.components[0]

        def comp(x, t, xi, tau):
            v = lead(x, t, xi, tau)
            return np.linalg.inv(v) if rank > 1 else 1.0 / v

        return ClassicalSymbol([comp], -a.order, a.R, rank, a.x_dependent, a.t_dependent,
                               name=f"inv({a.name})", check=False)

    def f(x, t, xi, tau):
        v = a(x, t, xi, tau)
        return np.linalg.inv(v) if rank > 1 else 1.0 / v

    return FullSymbol(f, -a.order, a.R, rank, None, a.x_dependent, a.t_dependent,
                      name=f"inv({a.name})")


# ---------------------------------------------------------------------------
# ADN systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ADNOrderSpec:
    s: tuple
    t: tuple

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(v) for v in self.s))
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        if len(self.s) != len(self.t):
            raise SymbolError("s and t must have equal length")

    @property
    def k(self) -> int:
        return len(self.s)

    def block_order(self, i: int, j: int) -> float:
        return self.s[i] + self.t[j]

    def nonnegative(self) -> bool:
        return min(self.s) >= 0 and min(self.t) >= 0


@dataclass
class SymbolMatrix:
    """Principal symbol matrix ``[sigma_{s_i+t_j}(P_ij)]`` of an ADN system."""

    blocks: list
    spec: ADNOrderSpec
    scaling_error: float = field(default=0.0)

    def __call__(self, x, t, xi, tau):
        xi = np.asarray(xi, float)
        tau = np.asarray(tau, float)
        shape = np.broadcast_shapes(np.shape(x), np.shape(t), xi.shape, tau.shape)
        k = self.spec.k
        out = np.zeros(shape + (k, k), dtype=complex)
        for i in range(k):
            for j in range(k):
                b = self.blocks[i][j]
                if b is None:
                    continue
                if b.order < self.spec.block_order(i, j) - 1e-12:
                    continue  # lower order: no contribution to the principal matrix
                out[..., i, j] = np.broadcast_to(b.principal(x, t, xi, tau), shape)
        return out


def adn_symbol_matrix(blocks, spec: ADNOrderSpec) -> SymbolMatrix:
    """Assemble and check the principal symbol matrix of a block system."""
    k = spec.k
    if len(blocks) != k or any(len(row) != k for row in blocks):
        raise SymbolError(f"expected a {k}x{k} block layout")
    for i in range(k):
        for j in range(k):
            b = blocks[i][j]
            if b is None:
                continue
            if b.rank != 1:
                raise SymbolError("ADN blocks must be scalar symbols")
            if b.order > spec.block_order(i, j) + 1e-12:
                raise SymbolError(f"block ({i},{j}) has order {b.order:g} > s_i+t_j = "
                                  f"{spec.block_order(i, j):g}")
    S = SymbolMatrix(blocks, spec)
    # scaling identity on two sample lambdas
    c, s = _cosphere(16)
    base = S(0.0, 0.0, c, s)
    worst = 0.0
    for lam in (2.0, 3.5):
        lhs = S(0.0, 0.0, lam * c, lam * s)
        ls = lam ** np.array(spec.s)
        lt = lam ** np.array(spec.t)
        rhs = ls[:, None] * base * lt[None, :]
        scale = max(np.max(np.abs(rhs)), 1e-300)
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / scale))
    if worst > 1e-6:
        raise SymbolError(f"principal matrix violates the ADN scaling law (rel {worst:.2e})")
    S.scaling_error = worst
    return S


def is_adn_elliptic(S: SymbolMatrix, tol: float | None = None, n_angles: int = 512,
                    grid=None) -> tuple[bool, float]:
    """``min |det Symb(w)|`` over the cosphere and the verdict.

    The verdict is recomputed at a second scale ``|zeta| = 2`` (rescaled by
    ``2^{sum s + sum t}``) and must agree.
    """
    c, s = _cosphere(n_angles)
    dets = np.abs(np.linalg.det(S(0.0, 0.0, c, s)))
    if grid is not None:
        for a in (b for row in S.blocks for b in row if b is not None):
            X, T = _base_points(grid, a)
            if X.size > 1:
                M = S(X[:, None], T[:, None], c[None, :], s[None, :])
                dets = np.minimum(dets, np.abs(np.linalg.det(M)).min(axis=0))
                break
    mind = float(np.min(dets))
    thr = 1e-8 * max(float(np.max(dets)), 1e-300) if tol is None else tol
    verdict = mind >= thr and mind > 0
    deg = sum(S.spec.s) + sum(S.spec.t)
    d2 = np.abs(np.linalg.det(S(0.0, 0.0, 2 * c, 2 * s))) / 2.0 ** deg
    v2 = float(np.min(d2)) >= thr and float(np.min(d2)) > 0
    if v2 != verdict:
        raise SymbolError("ellipticity verdict depends on the sampling scale")
    return bool(verdict), mind
