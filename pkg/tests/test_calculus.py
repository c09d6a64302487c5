import numpy as np
import pytest

from cylcalc.calculus import (ADNSystem, CalculusError, LimitOperator, MarginError,
                              NotElliptic, NotInCalculus, adjoint, adn_adjoint, adn_compose,
                              block_identity, block_order_reduction, commutator_with_rho,
                              compose, decompose, indicial_family, joint_lift, limit_operator,
                              order_reduction, parametrix, s0_extend)
from cylcalc.geometry import eta, rho
from cylcalc.quantize import (identity_operator, multiplication_operator,
                              oscillatory_symbol_extract, quantize, top_alias_free_scale,
                              zero_operator)
from cylcalc.symbols import (ADNOrderSpec, FullSymbol, bessel_symbol, constant_symbol, dt_symbol,
                             laplace_symbol)

from conftest import windowed

ENDS = ("left", "right")


def xsym(R=1.0, c=0.3):
    def f(x, t, xi, tau):
        w = np.where(np.abs(t) < R, np.cos(np.pi * np.asarray(t) / (2 * R)) ** 2, 0.0)
        return (1 + c * np.sin(x) + 0.2 * w) * np.sqrt(1 + xi ** 2 + tau ** 2) + 0.5j * tau
    return FullSymbol(f, 1.0, R)


def random_limit(rng, grid, radius=3, end="left"):
    ns = grid.n_x
    st = {l: rng.normal(size=(ns, ns)) * 0.5 ** abs(l) for l in range(-radius, radius + 1)}
    return LimitOperator(end, ns, 1, grid.h_t, st, {}, None, 0.0)


def test_compose_with_identity(small):
    P = quantize(xsym(), small)
    Q = compose(P, identity_operator(small))
    assert np.array_equal(Q.mat, P.mat) and Q.order == P.order and Q.tag == "inv"
    with pytest.raises(MarginError):
        C = compose(P, P)
        compose(C, P)


def test_order_reduction_product_tends_to_one(grid):
    res = [order_reduction(2.0, t0, grid, check_right=False).residual_left for t0 in (1.0, 2.0, 4.0, 8.0)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] <= 0.5
    r = order_reduction(2.0, 8.0, grid)
    assert r.certified and r.residual_right < 1


def test_order_reduction_zero_and_small_t0(small):
    r = order_reduction(0.0, 1.0, small)
    assert r.certified and np.allclose(r.Lambda.mat, np.eye(small.size))
    with pytest.raises(CalculusError):
        order_reduction(4.0, 0.05, small)


def test_symbol_multiplicativity(grid):
    P = quantize(laplace_symbol(0.0), grid)
    Q = quantize(bessel_symbol(-2.0, 1.0), grid)
    PQ = compose(P, Q)
    for th in np.pi * (2 * np.arange(8) + 1) / 8:
        d = (np.cos(th), np.sin(th))
        s = oscillatory_symbol_extract(PQ, (0.0, 0.0), d, [top_alias_free_scale(grid, d)], fit=False)
        xi, tau = s.eta[0]
        ref = (xi ** 2 + tau ** 2) / (1 + xi ** 2 + tau ** 2)
        assert abs(s.values[0] - ref) <= 1e-2 * abs(ref)


def test_adjoint(small, rng):
    P = quantize(xsym(), small)
    Ps = adjoint(P)
    assert np.array_equal(adjoint(Ps).mat, P.mat)
    assert (Ps.order, Ps.eps, Ps.R, Ps.tag) == (P.order, P.eps, P.R, P.tag)
    u = rng.normal(size=small.size) + 1j * rng.normal(size=small.size)
    v = rng.normal(size=small.size) + 1j * rng.normal(size=small.size)
    lhs = np.vdot(v, P.mat @ u)
    rhs = np.vdot(Ps.mat @ v, u)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_adjoint_of_real_even_symbol_is_lower_order(grid):
    """P* - P for a real even symbol loses one order: its symbol is O(|eta|^0) against |eta|^1."""
    a = FullSymbol(lambda x, t, xi, tau: (1 + 0.3 * np.sin(x)) * np.sqrt(1 + xi ** 2 + tau ** 2),
                   1.0, 0.0, t_dependent=False)
    P = quantize(a, grid)
    D = adjoint(P) - P
    d = (0.6, 0.8)
    top = top_alias_free_scale(grid, d)
    ratios = []
    for sc in (top / 2, top):
        sp = oscillatory_symbol_extract(P, (1.0, 0.0), d, [sc], fit=False).values[0]
        sd = oscillatory_symbol_extract(D, (1.0, 0.0), d, [sc], fit=False).values[0]
        ratios.append(abs(sd) / abs(sp))
    assert ratios[0] < 0.1 and ratios[1] < ratios[0]


def test_commutator_with_multiplication_vanishes(small):
    f = np.broadcast_to(np.cos(small.x)[None, :], (small.n_t, small.n_x)).copy()
    M = multiplication_operator(f, small)
    C = commutator_with_rho(M)
    assert np.max(np.abs(C.op.mat)) == 0.0


def test_commutator_with_dt(grid):
    """[rho, d/dt] = -rho'(t); rho = -|t| for |t| >= 1, so the commutator is sign(t)."""
    P = quantize(dt_symbol(), grid)
    C = commutator_with_rho(P)
    assert C.op.order == 0.0
    assert max(C.limit_gap.values()) <= 1e-8
    X, T = grid.mesh()
    u = windowed(grid, width=20.0, k=1, tau=0.4)
    got = C.op.apply(u)
    e = 1e-6
    drho = (rho(T + e) - rho(T - e)) / (2 * e)
    ref = -drho * u
    # the stencil (reach 4) must not see the bend of rho inside |t| < 1
    mask = grid.interior_mask()[:, None] & (np.abs(T) >= 5.5)
    assert np.max(np.abs(got - ref)[mask]) <= 1e-6


def test_commutator_limit_identity_for_s0(small, rng):
    T = random_limit(rng, small, radius=2)
    C = commutator_with_rho(s0_extend(T, small))
    assert C.limit_gap["left"] <= 1e-8
    assert np.isfinite(C.order_drop_bound)


def test_limit_operator_examples(small, rng):
    T = random_limit(rng, small)
    assert limit_operator(s0_extend(T, small), "left").distance(T, stencil_only=True) <= 1e-12
    K = zero_operator(small)
    assert limit_operator(K, "right").scale() == 0.0
    f = np.broadcast_to((2 + np.sin(small.x))[None, :], (small.n_t, small.n_x)).copy()
    f = f * (1 + 0.5 * np.where(np.abs(small.t) < 2, np.cos(np.pi * small.t / 4) ** 2, 0))[:, None]
    M = multiplication_operator(f, small)
    for e in ENDS:
        L = limit_operator(M, e)
        assert np.allclose(L.stencil_form()[0], np.diag(2 + np.sin(small.x)))
    bad = identity_operator(small).replace(mat=np.diag(np.repeat(small.t, small.n_x)), R=2.0,
                                           exact_limits=None)
    with pytest.raises(NotInCalculus):
        limit_operator(bad, "left")


def test_s0_identity_and_linearity(small, rng):
    I = LimitOperator.identity(small.n_x, 1, small.h_t)
    S = s0_extend(I, small)
    assert np.allclose(S.mat, np.diag(np.repeat(eta(small.t) ** 2, small.n_x)))
    T1, T2 = random_limit(rng, small), random_limit(rng, small)
    assert np.allclose(s0_extend(T1 + T2, small).mat, s0_extend(T1, small).mat + s0_extend(T2, small).mat)


def test_decompose_examples(small, rng):
    T = random_limit(rng, small)
    P = s0_extend(T, small)
    D = decompose(P)
    assert np.max(np.abs(D.compact.mat)) <= 1e-14
    X, Tm = small.mesh()
    f = np.where(np.abs(Tm) < 2, np.cos(np.pi * Tm / 4) ** 2, 0.0)
    M = multiplication_operator(f, small)
    D = decompose(M)
    assert np.max(np.abs(D.invariant.mat)) == 0.0 and np.array_equal(D.compact.mat, M.mat)
    P = quantize(xsym(), small)
    D = decompose(P)
    assert np.max(np.abs(D.invariant.mat + D.compact.mat - P.mat)) <= 1e-14 * np.max(np.abs(P.mat))
    assert np.isfinite(D.support_radius) and D.support_radius < small.R_inv + small.eps_outer + 1


def test_indicial_family_examples(small):
    taus = np.linspace(-3, 3, 13)
    I = LimitOperator.identity(small.n_x, 1, small.h_t)
    fam = indicial_family(I, taus)
    assert np.allclose(fam.mats, np.eye(small.n_x)[None])
    c = 0.7
    T = limit_operator(quantize(laplace_symbol(c), small), "left")
    F = np.fft.fft(np.eye(small.n_x)) / np.sqrt(small.n_x)
    k = small.link.k
    for tau, M in zip(taus, indicial_family(T, taus).mats):
        D = F @ M @ F.conj().T
        # diagonal in link Fourier modes: discrete link Laplacian symbol + tau^2 + c
        assert np.max(np.abs(D - np.diag(np.diag(D)))) <= 1e-12 * np.max(np.abs(D))
        assert np.allclose(np.diag(D).real[np.abs(k) <= 1], (tau ** 2 + k ** 2 + c)[np.abs(k) <= 1],
                           rtol=1e-3)
    g = 2 + np.cos(small.x)
    f = np.broadcast_to(g[None, :], (small.n_t, small.n_x)).copy()
    L = limit_operator(multiplication_operator(f, small), "right")
    assert np.allclose(indicial_family(L, taus).mats, np.diag(g)[None])


def test_indicial_multiplicative(small, rng):
    A, B = random_limit(rng, small, 2), random_limit(rng, small, 2)
    taus = np.linspace(-2, 2, 7)
    lhs = indicial_family(A @ B, taus).mats
    rhs = indicial_family(A, taus).mats @ indicial_family(B, taus).mats
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(lhs))


def test_in_is_star_homomorphism(grid):
    P = quantize(xsym(c=0.3), grid)
    Q = quantize(xsym(c=-0.5), grid)
    PQ = compose(P, Q)
    for e in ENDS:
        IP, IQ = limit_operator(P, e), limit_operator(Q, e)
        gap = limit_operator(PQ, e).distance(IP @ IQ, stencil_only=True)
        assert gap <= 1e-8 * IP.scale() * IQ.scale()
        gap = limit_operator(adjoint(P), e).distance(IP.adjoint(), stencil_only=True)
        assert gap <= 1e-8 * IP.scale()


def test_parametrix_identity(small):
    I = identity_operator(small).replace(symbol=constant_symbol(1.0))
    par = parametrix(I, 2)
    assert np.allclose(par.Q.mat, np.eye(small.size)) and par.residual_left <= 1e-14


@pytest.mark.slow
def test_parametrix_laplacian(grid):
    P = quantize(laplace_symbol(1.0), grid)
    par = parametrix(P, 3, track=True)
    res = [r for _, r in par.history]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert par.residual_left <= 1e-3 and par.residual_right <= 1e-3
    # In(Q) is a parametrix of In(P); the sup over tau is a little above the matrix norm
    assert max(par.limit_residual.values()) <= 2 * par.residual_left


def test_parametrix_rejects_nonelliptic(small):
    a = FullSymbol(lambda x, t, xi, tau: xi * tau + 1.0 + 0j, 2.0, 0.0, tau_degree=1,
                   x_dependent=False, t_dependent=False)
    with pytest.raises(NotElliptic):
        parametrix(quantize(a, small))


def test_block_order_reduction(small):
    S = block_order_reduction([1.0, 2.0], 1.0, small)
    n = small.size
    assert np.allclose(S.mat[:n, :n], quantize(bessel_symbol(1.0, 1.0), small).mat)
    assert np.allclose(S.mat[n:, n:], quantize(bessel_symbol(2.0, 1.0), small).mat)
    assert np.max(np.abs(S.mat[:n, n:])) == 0


def _system(small):
    L = quantize(laplace_symbol(1.0), small).replace(symbol=laplace_symbol(1.0))
    d = quantize(dt_symbol(), small).replace(symbol=dt_symbol())
    one = identity_operator(small).replace(symbol=constant_symbol(1.0))
    return ADNSystem([[L, d], [d, one]], ADNOrderSpec((1, 0), (1, 0)), small)


def test_adn_compose_identity_and_symbols(small, grid):
    P = _system(small)
    Id = block_identity((1, 0), small)
    with pytest.raises(CalculusError):
        adn_compose(P, P)
    QP = adn_compose(Id, P)
    for i in range(2):
        for j in range(2):
            assert np.allclose(QP.blocks[i][j].mat, P.blocks[i][j].mat)
    Ps = adn_adjoint(P)
    assert Ps.spec.s == P.spec.t and Ps.spec.t == P.spec.s
    assert np.allclose(Ps.blocks[0][1].mat, P.blocks[1][0].mat.conj().T)


def test_adn_symbol_of_product(grid):
    """Symb(QP) = Symb(Q) Symb(P): extracted block symbols against the matrix product."""
    P = _system(grid)
    one = identity_operator(grid).replace(symbol=constant_symbol(1.0))
    d = quantize(dt_symbol(), grid).replace(symbol=dt_symbol())
    Q = ADNSystem([[one, d], [None, one]], ADNOrderSpec((1, 0), (-1, 0)), grid)
    QP = adn_compose(Q, P)
    assert QP.spec.s == (1.0, 0.0) and QP.spec.t == (1.0, 0.0)
    for th in (0.3, 1.2, 2.5, 4.0):
        dvec = (np.cos(th), np.sin(th))
        sc = [top_alias_free_scale(grid, dvec) / 2]
        vals = np.zeros((2, 2), complex)
        SQ = np.zeros((2, 2), complex)
        SP = np.zeros((2, 2), complex)
        for i in range(2):
            for j in range(2):
                for sys_, out in ((QP, vals), (Q, SQ), (P, SP)):
                    b = sys_.blocks[i][j]
                    if b is not None:
                        out[i, j] = oscillatory_symbol_extract(b, (0.0, 0.0), dvec, sc, fit=False).values[0]
        ref = SQ @ SP
        assert np.max(np.abs(vals - ref)) <= 1e-2 * np.max(np.abs(ref))


def test_joint_lift(small, rng):
    a = xsym()
    T = {e: limit_operator(quantize(a, small), e) for e in ENDS}
    # perturb the left limit by a lower-order invariant stencil
    T["left"] = T["left"] + random_limit(rng, small, 1) * 0.1
    Q = joint_lift(T, a, small)
    for e in ENDS:
        assert limit_operator(Q, e).distance(T[e], stencil_only=True) <= 1e-10
    assert Q.symbol is a


def _product_error(grid, P, Q, A, B, theta, point=(0.0, 0.0), corr=None):
    d = np.array([np.cos(theta), np.sin(theta)])
    smp = oscillatory_symbol_extract([P, Q], point, d, [top_alias_free_scale(grid, d)], fit=False)
    eta = smp.eta[0]
    ref = A(point[0], point[1], *eta) * B(point[0], point[1], *eta)
    if corr is not None:
        ref = ref + corr(point[0], point[1], *eta)
    return abs(smp.values[0] - ref) / abs(ref)


def test_multiplicativity_on_the_tau_axis(grid):
    # on the link-mode-0 axis the chi-cut remainder of negative orders is largest
    A = bessel_symbol(-1.0)
    P = quantize(A, grid)
    off = [_product_error(grid, P, P, A, A, th) for th in np.pi * np.array([1, 2, 3]) / 8]
    axis = _product_error(grid, P, P, A, A, np.pi / 2)
    assert max(off) <= 1e-4
    assert 10 * max(off) < axis <= 2e-2


def test_multiplicativity_with_x_dependence(grid):
    # sigma(PQ) = ab - i d_xi a d_x b + lower order; the first-order term is visible at |eta| ~ 5
    c = 0.3
    a = FullSymbol(lambda x, t, xi, tau: np.sqrt(1 + xi ** 2 + tau ** 2), 1.0, 0.0, x_dependent=False)
    b = FullSymbol(lambda x, t, xi, tau: 1 + c * np.cos(x) + 0 * xi, 0.0, 0.0)

    def corr(x, t, xi, tau):
        return -1j * xi / np.sqrt(1 + xi ** 2 + tau ** 2) * (-c * np.sin(x))

    P, Q = quantize(a, grid), quantize(b, grid)
    pt = (np.pi / 2, 0.0)
    for th in np.pi * np.array([1, 3, 5]) / 8:
        bare = _product_error(grid, P, Q, a, b, th, pt)
        fixed = _product_error(grid, P, Q, a, b, th, pt, corr)
        assert bare > 1e-2 and fixed <= 1e-3
