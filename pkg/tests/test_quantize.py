import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import k0

from cylcalc.geometry import build_grid, vertical_line
from cylcalc.quantize import (KernelFitError, OrderError, QuantizationError, fd_symbol,
                              fd_weights, identity_operator, kernel_asymptotics_fit, kernel_of,
                              kernel_support_radius, operator_from_kernel,
                              oscillatory_symbol_extract, quantize, restrict_kernel,
                              top_alias_free_scale)
from cylcalc.symbols import FullSymbol, bessel_symbol, constant_symbol, dt_symbol, laplace_symbol

from conftest import windowed


def xsym(small_R=1.0):
    """x- and t-dependent order-1 symbol, invariant for |t| >= small_R."""
    def f(x, t, xi, tau):
        w = np.where(np.abs(t) < small_R, np.cos(np.pi * np.asarray(t) / (2 * small_R)) ** 2, 0.0)
        return (1 + 0.3 * np.sin(x) + 0.2 * w) * np.sqrt(1 + xi ** 2 + tau ** 2) + 0.5j * tau
    return FullSymbol(f, 1.0, small_R)


def test_fd_weights_exact_on_polynomials():
    for p in (1, 2):
        w = fd_weights(4, p)
        l = np.arange(-4, 5)
        for k in range(9):
            expect = 0.0 if k != p else float(np.prod(np.arange(1, p + 1)))
            assert np.sum(w * l ** k) == pytest.approx(expect, abs=1e-10)
    tau = np.linspace(-1, 1, 11)
    assert np.allclose(fd_symbol(16, 2, tau, 0.25), tau ** 2, atol=1e-12)


def test_identity_quantizes_to_identity(small):
    P = quantize(constant_symbol(1.0), small)
    assert np.max(np.abs(P.mat - np.eye(small.size))) <= 1e-14
    assert P.tag == "inv"


def test_dt_on_windowed_waves(grid):
    P = quantize(dt_symbol(), grid)
    inner = grid.interior_mask()
    for tau0 in (0.5, 1.3, 2.0):
        w = 4.0
        X, T = grid.mesh()
        u = windowed(grid, width=12.0, tau=tau0)
        # analytic derivative of the window times the wave
        from cylcalc.geometry import smooth_step
        e = 1e-5
        s = lambda tt: smooth_step(np.abs(tt) / 12.0)  # noqa: E731
        du = ((s(T + e) - s(T - e)) / (2 * e) + 1j * tau0 * s(T)) * np.exp(1j * tau0 * T)
        got = P.apply(u)
        err = np.max(np.abs(got - du)[inner]) / np.max(np.abs(du))
        assert err <= 1e-6, (tau0, err)
        del w


def test_product_laplacian(grid):
    P = quantize(laplace_symbol(0.0), grid)
    X, T = grid.mesh()
    for k in (0, 1, 3):
        f = np.exp(-T ** 2 / 8)
        fpp = (T ** 2 / 16 - 0.25) * f
        u = np.exp(1j * k * X) * f
        ref = k ** 2 * u - np.exp(1j * k * X) * fpp
        assert np.max(np.abs(P.apply(u) - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_quantize_rejects_large_radius(grid):
    a = FullSymbol(lambda x, t, xi, tau: 1 + 0 * xi, 0.0, R=5.0)
    with pytest.raises(QuantizationError):
        quantize(a, grid)


def test_linearity_kernel_route(small):
    a, b = xsym(), bessel_symbol(1.0, 2.0)
    ab = FullSymbol(lambda x, t, xi, tau: 2 * a(x, t, xi, tau) + 3 * b(x, t, xi, tau), 1.0, 1.0)
    lhs = quantize(ab, small).mat
    rhs = 2 * quantize(a, small).mat + 3 * quantize(b, small).mat
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))


def test_linearity_stencil_route(small):
    a, b = laplace_symbol(2.0), dt_symbol()
    ab = FullSymbol(lambda x, t, xi, tau: 2 * a(x, t, xi, tau) + 3 * b(x, t, xi, tau), 2.0, 0.0,
                    tau_degree=2, x_dependent=False, t_dependent=False)
    lhs = quantize(ab, small).mat
    rhs = 2 * quantize(a, small).mat + 3 * quantize(b, small).mat
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))


def test_support_and_invariance(small):
    P = quantize(xsym(), small)
    assert kernel_support_radius(P) <= small.eps_outer + 1e-12
    n_x = small.n_x
    M = P.mat.reshape(small.n_t, n_x, small.n_t, n_x)
    # k(x, t - h, y, s - h) = k(x, t, y, s) beyond R_P on both ends
    lo = small.t <= -P.R
    hi = small.t >= P.R
    jl = np.nonzero(lo)[0]
    jr = np.nonzero(hi)[0]
    J = int(small.eps_outer / small.h_t) + 1
    for j in jl[J + 1: -J]:
        a = M[j, :, j - J:j + J + 1]
        b = M[j - 1, :, j - 1 - J:j + J]
        assert np.max(np.abs(a - b)) <= 1e-10
    for j in jr[J + 1: -J - 1]:
        a = M[j, :, j - J:j + J + 1]
        b = M[j + 1, :, j + 1 - J:j + J + 2]
        assert np.max(np.abs(a - b)) <= 1e-10


def test_kernel_round_trip(small):
    P = quantize(xsym(), small)
    K = kernel_of(P)
    Q = operator_from_kernel(K)
    assert np.allclose(Q.mat, P.mat, rtol=1e-15, atol=0) and Q.order == P.order and Q.R == P.R
    Ki = kernel_of(identity_operator(small))
    assert np.allclose(Ki.values * Ki.weight, np.eye(small.size))
    assert np.all(Ki.values[Ki.diagonal_mask] == 1 / small.cell)


def test_extract_identity_and_laplacian(grid):
    I = identity_operator(grid)
    L = quantize(laplace_symbol(0.0), grid)
    for d in [(0.6, 0.8), (1.0, 0.0), (0.0, 1.0)]:
        sc = top_alias_free_scale(grid, d) * np.array([0.25, 0.5, 1.0])
        s = oscillatory_symbol_extract(I, (0.0, 0.0), d, sc)
        assert np.allclose(s.values, 1.0, atol=1e-14)
        s = oscillatory_symbol_extract(L, (0.0, 0.0), d, sc)
        assert s.exponent == pytest.approx(2.0, abs=1e-3)
        assert abs(s.coefficient - 1.0) <= 1e-3


def test_extract_bessel_closed_form(grid):
    B = quantize(bessel_symbol(1.0, 1.0), grid)
    d = (0.6, 0.8)
    sc = top_alias_free_scale(grid, d) * np.array([0.5, 1.0])
    s = oscillatory_symbol_extract(B, (0.0, 0.0), d, sc)
    exact = np.sqrt(1 + s.scales ** 2)
    assert np.max(np.abs(s.values - exact) / exact) <= 1e-3
    assert s.exponent == pytest.approx(np.log(exact[1] / exact[0]) / np.log(2), abs=1e-3)
    with pytest.raises(QuantizationError):
        oscillatory_symbol_extract(B, (0.0, 0.0), d, [10 * top_alias_free_scale(grid, d)])


def test_symbol_round_trip_random(grid):
    """Extracted symbol at the top alias-free scale recovers a on rays, rel 1e-2."""
    rng = np.random.default_rng(3)
    for _ in range(3):
        c = rng.uniform(0.5, 2.0, 3)
        a = FullSymbol(lambda x, t, xi, tau, c=c: c[0] * xi ** 2 + c[1] * tau ** 2 + c[2] + 0j,
                       2.0, 0.0, tau_degree=2, x_dependent=False, t_dependent=False)
        P = quantize(a, grid)
        for th in rng.uniform(0, 2 * np.pi, 3):
            d = (np.cos(th), np.sin(th))
            s = oscillatory_symbol_extract(P, (0.0, 3.0), d, [top_alias_free_scale(grid, d)], fit=False)
            eta = s.eta[0]
            ref = a(0.0, 3.0, eta[0], eta[1])
            assert abs(s.values[0] - ref) <= 1e-2 * abs(ref)


@pytest.fixture(scope="module")
def green(grid):
    P = quantize(laplace_symbol(1.0), grid)
    inv = P.replace(mat=np.linalg.inv(P.mat), order=-2.0, tag="ess", eps=np.inf, R=np.inf)
    return P, inv


def test_inverse_kernel_matches_bessel_series(grid, green):
    """Green kernel of 1 - Laplacian on the cylinder: periodized (1/2pi) K0."""
    _, inv = green
    K = kernel_of(inv).values
    j0 = grid.t_index(0.0)
    p = j0 * grid.n_x
    for dj in (4, 8, 12, 16, 24):
        for di in (0, 2, 4):
            q = (j0 + dj) * grid.n_x + di
            dt, dx = dj * grid.h_t, di * grid.h_x
            oracle = sum(k0(np.hypot(dt, dx + n * grid.L)) for n in range(-6, 7)) / (2 * np.pi)
            tol = 5e-3 if dt < 2 else 1e-4
            assert abs(K[p, q].real / oracle - 1) <= tol, (dj, di)


def test_kernel_fit_smooth_kernel(grid):
    """A smooth compactly supported kernel is classical of any low order."""
    X, T = grid.mesh()
    t = T.reshape(-1)
    f = np.exp(-(t[:, None] - t[None, :]) ** 2) * (np.abs(t)[:, None] < 6) * (np.abs(t)[None, :] < 6)
    P = identity_operator(grid).replace(mat=f * grid.cell, order=-5.0, tag="comp", eps=np.inf,
                                        R=np.inf, exact_limits=None, fd_J=None)
    fit = kernel_asymptotics_fit(P, m=-5.0, N_fit=0, rays=[(0, 1), (0, -1)], window=(0.25, 2.0))
    assert fit.residual <= 0.05
    # constant term of the smooth part is the on-diagonal value k(p, p) = 1
    assert fit.smooth_degrees[0] == 0
    assert fit.smooth_coefficients[0][0] == pytest.approx(1.0, rel=0.1)


def test_kernel_fit_rejects_positive_order(small):
    with pytest.raises(KernelFitError):
        kernel_asymptotics_fit(identity_operator(small), m=1.0)


def test_restrict_kernel(grid):
    P = quantize(bessel_symbol(-3.0, 1.0), grid)
    N = vertical_line(grid, 0)
    PN = restrict_kernel(P, N)
    assert PN.order == -2.0
    fit = kernel_asymptotics_fit(PN, m=-2.0)
    assert fit.residual <= 5e-2
    with pytest.raises(OrderError):
        restrict_kernel(quantize(bessel_symbol(-1.0, 1.0), grid), N)


def test_restrict_trivial_on_line_supported_kernel(grid):
    """Restricting a kernel already supported on N x N returns the same matrix (in N weights)."""
    N = vertical_line(grid, 5)
    idx = N.flat_indices()
    rng = np.random.default_rng(0)
    B = rng.normal(size=(idx.size, idx.size))
    M = np.zeros((grid.size, grid.size))
    M[np.ix_(idx, idx)] = B
    P = identity_operator(grid).replace(mat=M, order=-4.0, tag="none", exact_limits=None, fd_J=None)
    PN = restrict_kernel(P, N)
    assert np.allclose(PN.mat, B / grid.h_x)


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 5.0), s=st.sampled_from([-2.0, -1.0, 0.0, 2.0]))
def test_quantize_constant_coefficient_is_toeplitz(c, s):
    g = build_grid(n_x=8, n_t=64, t_extent=16, R_inv=4, margin=4)
    P = quantize(bessel_symbol(s, c), g)
    M = P.mat.reshape(g.n_t, g.n_x, g.n_t, g.n_x)
    # translation invariant everywhere: the row blocks are shifts of one another
    a = M[20, :, 16:25]
    b = M[40, :, 36:45]
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))
