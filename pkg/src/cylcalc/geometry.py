"""Discretised flat cylinder ``S^1(L) x [t_min, t_max]`` and its cutoffs.

The two ends are modelled by truncating the t-line. Every operator that
lives on a grid is assumed to be exactly translation invariant for
``|t| >= R_inv``; sections fed to operators must vanish within ``margin``
of the truncation boundary so that rows cut by the boundary never matter.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised for inconsistent grid parameters or section supports."""


# ---------------------------------------------------------------------------
# smooth building blocks
# ---------------------------------------------------------------------------


def _flat(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s):
    """C-infinity step: 1 for ``s <= 0``, 0 for ``s >= 1``.

    Satisfies ``smooth_step(s) + smooth_step(1 - s) == 1``.
    """
    s = np.asarray(s, dtype=float)
    a = _flat(1.0 - s)
    b = _flat(s)
    return a / (a + b)


def eta(t):
    """End cutoff: 1 for ``t <= -2``, 0 for ``t >= -1``."""
    return smooth_step(np.asarray(t, dtype=float) + 2.0)


def eta_end(t, end: str):
    """``eta`` for the left end, its mirror image for the right end."""
    t = np.asarray(t, dtype=float)
    if end == "left":
        return eta(t)
    if end == "right":
        return eta(-t)
    raise GridError(f"unknown end {end!r}")


def rho(t):
    """Negative weight function equal to ``-|t|`` for ``|t| >= 1``."""
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    beta = smooth_step(2.0 * (1.0 - a))  # 0 for |t|<=1/2, 1 for |t|>=1
    return -((1.0 - beta) * 0.5 * (1.0 + t * t) + beta * a)


def rho_slope(t):
    """Derivative of :func:`rho` (central difference, step 1e-6)."""
    t = np.asarray(t, dtype=float)
    e = 1e-6
    return (rho(t + e) - rho(t - e)) / (2 * e)


def chi_offset(dt, eps_inner: float, eps_outer: float):
    """Near-diagonal cutoff in the t-offset: 1 below ``eps_inner``, 0 beyond ``eps_outer``."""
    if not 0 < eps_inner < eps_outer:
        raise GridError("need 0 < eps_inner < eps_outer")
    s = (np.abs(np.asarray(dt, dtype=float)) - eps_inner) / (eps_outer - eps_inner)
    return smooth_step(s)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkGrid:
    """Uniform grid on the circle of circumference ``L``."""

    n_x: int
    L: float

    def __post_init__(self):
        if self.n_x < 4 or self.n_x % 2:
            raise GridError(f"n_x must be even and >= 4, got {self.n_x}")
        if not self.L > 0:
            raise GridError("L_circ must be positive")

    @property
    def h(self) -> float:
        return self.L / self.n_x

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_x) * self.h

    @property
    def k(self) -> np.ndarray:
        """Link frequencies in FFT order (Nyquist mode negative)."""
        return 2 * np.pi * np.fft.fftfreq(self.n_x, d=self.h)

    @property
    def k_nyquist(self) -> float:
        return np.pi / self.h

    def arc(self, x1, x2):
        d = np.mod(np.abs(np.asarray(x1) - np.asarray(x2)), self.L)
        return np.minimum(d, self.L - d)


@dataclass(frozen=True)
class CylinderGrid:
    """Tensor grid on the truncated cylinder.

    Points are ``(x_i, t_j)`` with ``t_j = t_min + j*h_t`` for
    ``j = 0..n_t-1``. Grid functions have shape ``(n_t, n_x)``; systems of
    rank ``r`` are stored component-major as ``(r, n_t, n_x)`` and flatten
    in C order.
    """

    link: LinkGrid
    n_t: int
    t_min: float
    t_max: float
    R_inv: float
    margin: float
    _t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_t < 8:
            raise GridError("n_t must be at least 8")
        if not (self.t_min < -2 and self.t_max > 2):
            raise GridError("t-extent must contain [-2, 2]")
        if self.R_inv < 2:
            raise GridError("R_inv must be at least 2")
        if self.margin <= 0:
            raise GridError("margin must be positive")
        reach = min(-self.t_min, self.t_max)
        if self.R_inv + self.margin >= reach:
            raise GridError(
                f"R_inv + margin = {self.R_inv + self.margin} does not fit inside "
                f"the t-extent [{self.t_min}, {self.t_max}]"
            )
        h = (self.t_max - self.t_min) / self.n_t
        object.__setattr__(self, "_t", self.t_min + h * np.arange(self.n_t))

    # basic geometry -------------------------------------------------------
    @property
    def n_x(self) -> int:
        return self.link.n_x

    @property
    def L(self) -> float:
        return self.link.L

    @property
    def h_x(self) -> float:
        return self.link.h

    @property
    def h_t(self) -> float:
        return (self.t_max - self.t_min) / self.n_t

    @property
    def t(self) -> np.ndarray:
        return self._t

    @property
    def x(self) -> np.ndarray:
        return self.link.x

    @property
    def size(self) -> int:
        return self.n_t * self.n_x

    @property
    def cell(self) -> float:
        """Quadrature weight of one grid point."""
        return self.h_x * self.h_t

    @property
    def n_sites(self) -> int:
        """Number of link points per t-row."""
        return self.n_x

    @property
    def site_weight(self) -> float:
        return self.h_x

    @property
    def link_is_periodic(self) -> bool:
        return True

    @property
    def tau_nyquist(self) -> float:
        return np.pi / self.h_t

    @property
    def eps_inner(self) -> float:
        return self.R_inv / 4.0

    @property
    def eps_outer(self) -> float:
        return self.R_inv / 2.0

    def mesh(self):
        """``(X, T)`` arrays of shape ``(n_t, n_x)``."""
        T, X = np.meshgrid(self.t, self.x, indexing="ij")
        return X, T

    def t_index(self, t: float) -> int:
        j = int(round((t - self.t_min) / self.h_t))
        if not 0 <= j < self.n_t:
            raise GridError(f"t={t} outside the grid")
        return j

    def point_t_index(self, r: int = 1) -> np.ndarray:
        """t-index of every flattened degree of freedom."""
        j = np.repeat(np.arange(self.n_t), self.n_x)
        return np.tile(j, r)

    def point_x_index(self, r: int = 1) -> np.ndarray:
        return np.tile(np.arange(self.n_x), self.n_t * r)

    def interior_mask(self, extra: float = 0.0) -> np.ndarray:
        """Boolean ``(n_t,)`` mask of rows at least ``margin + extra`` from the boundary."""
        lo = self.t_min + self.margin + extra
        hi = self.t_max - self.margin - extra
        return (self.t >= lo - 1e-12) & (self.t <= hi + 1e-12)

    def dist(self, p, q):
        """Flat distance between points ``p=(x,t)`` and ``q=(x',t')``."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        dx = self.link.arc(p[..., 0], q[..., 0])
        dt = p[..., 1] - q[..., 1]
        return np.hypot(dx, dt)

    def with_n_t(self, n_t: int) -> "CylinderGrid":
        return CylinderGrid(self.link, n_t, self.t_min, self.t_max, self.R_inv, self.margin)

    def describe(self) -> dict:
        return {
            "n_x": self.n_x,
            "L_circ": self.L,
            "n_t": self.n_t,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "R_inv": self.R_inv,
            "margin": self.margin,
        }


def build_grid(n_x: int = 16, L_circ: float = 2 * np.pi, n_t: int = 256,
               t_extent=32.0, R_inv: float = 8.0, margin: float = 8.0) -> CylinderGrid:
    """Build a cylinder grid.

    Parameters
    ----------
    t_extent : float or (float, float)
        Half-width ``T`` of a symmetric extent ``[-T, T]`` or an explicit pair.
    """
    if np.ndim(t_extent) == 0:
        t_min, t_max = -float(t_extent), float(t_extent)
    else:
        t_min, t_max = (float(v) for v in t_extent)
    return CylinderGrid(LinkGrid(int(n_x), float(L_circ)), int(n_t), t_min, t_max,
                        float(R_inv), float(margin))


# ---------------------------------------------------------------------------
# translations and limits
# ---------------------------------------------------------------------------


def _shift_steps(grid: CylinderGrid, s: float) -> int:
    n = s / grid.h_t
    ni = int(round(n))
    if abs(n - ni) > 1e-9:
        raise GridError(f"shift {s} is not a multiple of h_t={grid.h_t}")
    return ni


def translate_section(u: np.ndarray, s: float, grid: CylinderGrid,
                      tol: float = 0.0) -> np.ndarray:
    """``(Phi_s u)(x, t) = u(x, t + s)`` on the grid.

    ``u`` has shape ``(..., n_t, n_x)``. The section must vanish within
    ``|s| + margin`` of the boundary it is moved towards.
    """
    u = np.asarray(u)
    n = _shift_steps(grid, s)
    if n == 0:
        return u.copy()
    guard = int(np.ceil(grid.margin / grid.h_t - 1e-9)) + abs(n)
    if n > 0:
        band = u[..., :guard, :]
        lo, hi = grid.t[0], grid.t[min(guard, grid.n_t) - 1]
    else:
        band = u[..., grid.n_t - guard:, :]
        lo, hi = grid.t[grid.n_t - guard], grid.t[-1]
    if np.max(np.abs(band), initial=0.0) > tol:
        raise GridError(
            f"section is nonzero in t in [{lo:.6g}, {hi:.6g}]; shifting by {s} "
            f"would push it into the truncation margin"
        )
    out = np.zeros_like(u)
    if n > 0:
        out[..., : grid.n_t - n, :] = u[..., n:, :]
    else:
        out[..., -n:, :] = u[..., : grid.n_t + n, :]
    return out


def limit_section(u: np.ndarray, end: str, R_u: float, grid: CylinderGrid,
                  tol: float = 1e-12) -> np.ndarray:
    """Restriction at infinity of a section that is t-independent beyond ``R_u``."""
    u = np.asarray(u)
    t = grid.t
    if end == "left":
        rows = np.nonzero(t <= -R_u)[0]
    elif end == "right":
        rows = np.nonzero(t >= R_u)[0]
    else:
        raise GridError(f"unknown end {end!r}")
    if rows.size == 0:
        raise GridError(f"no grid rows beyond R_u={R_u} on the {end} end")
    block = u[..., rows, :]
    ref = block[..., :1, :]
    dev = np.max(np.abs(block - ref), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(ref), initial=0.0)))
    if dev > tol * scale:
        raise GridError(f"section varies in t beyond R_u={R_u} on the {end} end "
                        f"(deviation {dev:.3e})")
    return ref[..., 0, :].copy()


# ---------------------------------------------------------------------------
# partition of unity
# ---------------------------------------------------------------------------


def _hat_sq(u):
    """Square of a partition function on a band of width 2 centred at 0."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    left = (u > -1) & (u <= 0)
    right = (u > 0) & (u < 1)
    out[left] = 1.0 - smooth_step(u[left] + 1.0)
    out[right] = smooth_step(u[right])
    return out


@dataclass(frozen=True)
class PartitionOfUnity:
    """``phi_0^2 + sum_k phi_k^2 = 1`` with end bands of width 2, overlap 1.

    ``phi_0`` is supported in ``|t| < R``; the end bands are translates of a
    single profile centred at ``-R - k + 1`` and ``R + k - 1`` for k >= 1.
    """

    R: int
    n_bands: int  # per end

    def centres(self, end: str) -> np.ndarray:
        k = np.arange(1, self.n_bands + 1)
        c = -self.R - k + 1.0
        return c if end == "left" else -c

    def band_sq(self, t, end: str, k: int):
        c = self.centres(end)[k - 1]
        return _hat_sq(np.asarray(t, dtype=float) - c)

    def core_sq(self, t):
        t = np.asarray(t, dtype=float)
        tot = np.zeros_like(t)
        for end in ("left", "right"):
            for c in self.centres(end):
                tot = tot + _hat_sq(t - c)
        return np.clip(1.0 - tot, 0.0, 1.0)

    def all_sq(self, t):
        """List of ``phi^2`` profiles, core first."""
        out = [self.core_sq(t)]
        for end in ("left", "right"):
            out.extend(self.band_sq(t, end, k) for k in range(1, self.n_bands + 1))
        return out


def partition_for_grid(grid: CylinderGrid, R: int | None = None) -> PartitionOfUnity:
    """Partition whose bands cover the whole grid."""
    R = int(R if R is not None else np.floor(grid.R_inv))
    reach = max(-grid.t_min, grid.t_max)
    n = int(np.ceil(reach - R)) + 1
    return PartitionOfUnity(R, max(n, 1))


# ---------------------------------------------------------------------------
# vertical submanifolds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Submanifold:
    """Codimension-one submanifold made of grid points, one site per line and t-row.

    ``sites[j, a]`` is the link index of line ``a`` in row ``j``. Beyond
    ``R_inv`` every line must be vertical so that ``N`` is ``N_inf x R``
    there. ``normal[j, a]`` is the unit normal ``(nu_x, nu_t)``.
    """

    grid: CylinderGrid
    sites: np.ndarray
    normal: np.ndarray
    codim: int = 1

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=np.int64)
        if sites.ndim == 1:
            sites = np.broadcast_to(sites[None, :], (self.grid.n_t, sites.size)).copy()
        if sites.shape[0] != self.grid.n_t:
            raise GridError("sites must have one row per t-row")
        if np.any((sites < 0) | (sites >= self.grid.n_x)):
            raise GridError("site index outside the link grid")
        normal = np.asarray(self.normal, dtype=float)
        normal = np.broadcast_to(normal, sites.shape + (2,)).copy()
        nn = np.linalg.norm(normal, axis=-1)
        if np.any(np.abs(nn - 1) > 1e-12):
            raise GridError("normal field must have unit length")
        ends = np.abs(self.grid.t) >= self.grid.R_inv
        ref_l = sites[0]
        ref_r = sites[-1]
        left = self.grid.t <= -self.grid.R_inv
        right = self.grid.t >= self.grid.R_inv
        if np.any(sites[left] != ref_l) or np.any(sites[right] != ref_r) or np.any(ref_l != ref_r):
            raise GridError("submanifold must be a fixed set of vertical lines beyond R_inv")
        if np.any(normal[ends] != normal[0]):
            raise GridError("normal must be constant in t beyond R_inv")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "normal", normal)

    @property
    def points_inf(self) -> np.ndarray:
        return self.sites[0].copy()

    @property
    def n_lines(self) -> int:
        return self.sites.shape[1]

    def flat_indices(self) -> np.ndarray:
        """Flattened cylinder indices of N, ordered (t-row, line)."""
        j = np.arange(self.grid.n_t)[:, None]
        return (j * self.grid.n_x + self.sites).ravel()

    def arc_weights(self) -> np.ndarray:
        """Length element ``dt * sqrt(1 + (dx/dt)^2)`` per N point, shape (n_t, n_lines)."""
        x = self.sites * self.grid.h_x
        dxdt = np.gradient(x, self.grid.h_t, axis=0)
        return self.grid.h_t * np.sqrt(1.0 + dxdt ** 2)

    def is_straight(self) -> bool:
        return bool(np.all(self.sites == self.sites[0]))


def vertical_line(grid: CylinderGrid, site: int = 0, normal=(1.0, 0.0)) -> Submanifold:
    return Submanifold(grid, np.array([site]), np.asarray(normal, dtype=float))


@dataclass(frozen=True)
class LineGrid:
    """Grid on a submanifold ``N``: ``n_lines`` sites per t-row of the parent grid."""

    N: Submanifold

    @property
    def parent(self) -> CylinderGrid:
        return self.N.grid

    @property
    def n_t(self) -> int:
        return self.parent.n_t

    @property
    def t(self) -> np.ndarray:
        return self.parent.t

    @property
    def h_t(self) -> float:
        return self.parent.h_t

    @property
    def t_min(self) -> float:
        return self.parent.t_min

    @property
    def t_max(self) -> float:
        return self.parent.t_max

    @property
    def R_inv(self) -> float:
        return self.parent.R_inv

    @property
    def margin(self) -> float:
        return self.parent.margin

    @property
    def n_sites(self) -> int:
        return self.N.n_lines

    @property
    def site_weight(self) -> float:
        return 1.0

    @property
    def link_is_periodic(self) -> bool:
        return False

    @property
    def size(self) -> int:
        return self.n_t * self.n_sites

    @property
    def tau_nyquist(self) -> float:
        return np.pi / self.h_t

    def interior_mask(self, extra: float = 0.0) -> np.ndarray:
        return self.parent.interior_mask(extra)

    def point_t_index(self, r: int = 1) -> np.ndarray:
        return np.tile(np.repeat(np.arange(self.n_t), self.n_sites), r)
