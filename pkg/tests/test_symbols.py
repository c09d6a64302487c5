import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylcalc.symbols import (ADNOrderSpec, ClassicalSymbol, FullSymbol, SymbolError,
                             adn_symbol_matrix, asymptotic_sum, bessel_symbol, constant_symbol,
                             eval_symbol, inverse_symbol, is_adn_elliptic, is_elliptic,
                             laplace_symbol, symbol_product)


def poly(f, order, deg=None):
    return FullSymbol(f, order, 0.0, tau_degree=deg, x_dependent=False, t_dependent=False)


def hom(f, order):
    return ClassicalSymbol([f], order, x_dependent=False, t_dependent=False)


R2 = lambda x, t, xi, tau: np.asarray(xi) ** 2 + np.asarray(tau) ** 2 + 0j * np.asarray(x)  # noqa: E731


def test_eval_examples():
    assert eval_symbol(constant_symbol(1.0), (0.3, 1.0), (5.0, -2.0)) == 1.0
    assert eval_symbol(laplace_symbol(), (0, 0), (1.0, 2.0)) == pytest.approx(5.0)
    assert eval_symbol(bessel_symbol(2, 1.0), (0, 0), (0.0, 0.0)) == pytest.approx(1.0)
    with pytest.raises(SymbolError):
        eval_symbol(laplace_symbol(), (0, 0), (np.inf, 0.0))


@settings(max_examples=40, deadline=None)
@given(s=st.floats(-3, 3), t0=st.floats(0.5, 4), xi=st.floats(-50, 50), tau=st.floats(-50, 50))
def test_bessel_product_is_one(s, t0, xi, tau):
    p = symbol_product(bessel_symbol(s, t0), bessel_symbol(-s, t0))
    assert p.order == pytest.approx(0.0, abs=1e-15)
    assert p(0.0, 0.0, xi, tau) == pytest.approx(1.0, rel=1e-12)


def test_product_examples():
    a = laplace_symbol()
    one = symbol_product(a, constant_symbol(1.0))
    xi, tau = np.random.default_rng(0).normal(size=(2, 50)) * 7
    assert np.allclose(one(0, 0, xi, tau), a(0, 0, xi, tau))
    sq = symbol_product(a, a)
    assert sq.order == 4 and sq.tau_degree == 4
    assert np.allclose(sq(0, 0, xi, tau), (xi ** 2 + tau ** 2) ** 2)
    with pytest.raises(SymbolError):
        symbol_product(a, constant_symbol(1.0, rank=2))


def test_product_radius_and_order():
    a = FullSymbol(lambda x, t, xi, tau: 1 + 0 * xi, 0.0, R=2.0)
    b = FullSymbol(lambda x, t, xi, tau: 1 + 0 * xi, 1.5, R=5.0)
    p = symbol_product(a, b)
    assert p.R == 5.0 and p.order == 1.5


def test_classical_homogeneity_checked():
    with pytest.raises(SymbolError):
        hom(lambda x, t, xi, tau: np.asarray(xi) ** 2 + np.asarray(tau) ** 2 + 1.0, 2.0)
    with pytest.raises(SymbolError):
        hom(lambda x, t, xi, tau: 0.0 * np.asarray(xi), 1.0)
    a = hom(R2, 2.0)
    assert a.check_homogeneity() < 1e-12


def test_classical_excision_inside_unit_ball():
    a = hom(R2, 2.0)
    # smooth at the origin, equal to the component for |zeta| >= 1
    assert np.isfinite(a(0, 0, 0.0, 0.0))
    assert a(0, 0, 3.0, 4.0) == pytest.approx(25.0)


def test_asymptotic_sum_single_and_polynomial():
    a = poly(lambda x, t, xi, tau: np.asarray(xi) ** 2 + np.asarray(tau) ** 2 + 0.0, 2.0)
    assert asymptotic_sum([a]) is a
    zero1 = poly(lambda x, t, xi, tau: 0 * np.asarray(xi), 1.0)
    zero0 = poly(lambda x, t, xi, tau: 0 * np.asarray(xi), 0.0)
    s = asymptotic_sum([a, zero1, zero0])
    xi, tau = 3.0 * np.cos(np.arange(10)), 3.0 * np.sin(np.arange(10))
    assert np.allclose(s(0, 0, xi, tau), 9.0)


def test_asymptotic_sum_neumann_tail():
    """Components of (1+r^2)^-1 = r^-2 - r^-4 + ... against the closed form."""
    def r2(xi, tau):
        return np.asarray(xi, float) ** 2 + np.asarray(tau, float) ** 2

    comps = []
    for j in range(5):
        order = -2 - j
        if j % 2 == 0:
            k = j // 2
            comps.append(poly(lambda x, t, xi, tau, k=k: (-1) ** k * r2(xi, tau) ** (-1 - k), order))
        else:
            comps.append(poly(lambda x, t, xi, tau: 0 * r2(xi, tau), order))
    s = asymptotic_sum(comps)
    th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    lam0 = 2 * max(s.excision_scales)
    for lam in (lam0, 3 * lam0, 10 * lam0):
        xi, tau = lam * np.cos(th), lam * np.sin(th)
        exact = 1 / (1 + lam ** 2)
        rel = np.max(np.abs(s(0, 0, xi, tau) - exact)) / exact
        # beyond every excision scale the remainder has order m - N - 1 = -7
        assert rel <= 2 * lam ** -6 + 1e-14
    # inside, the excised tail is still an order -3 correction
    xi, tau = 50 * np.cos(th), 50 * np.sin(th)
    assert np.max(np.abs(s(0, 0, xi, tau) - 1 / (1 + 50 ** 2))) <= 50.0 ** -4
    with pytest.raises(SymbolError):
        asymptotic_sum([comps[0], comps[2]])


def test_is_elliptic_examples():
    ok, C = is_elliptic(hom(R2, 2.0))
    assert ok and C == pytest.approx(1.0, abs=1e-12)
    ok, C = is_elliptic(hom(lambda x, t, xi, tau: np.asarray(xi) * np.asarray(tau) + 0j, 2.0))
    assert not ok
    # first order i*tau + |xi|: min over the circle of sqrt(sin^2 + cos^2) = 1
    f = lambda x, t, xi, tau: 1j * np.asarray(tau) + np.abs(xi)  # noqa: E731
    ok, C = is_elliptic(hom(f, 1.0))
    th = np.linspace(0, 2 * np.pi, 10_000)
    oracle = np.min(np.abs(1j * np.sin(th) + np.abs(np.cos(th))))
    assert ok and C == pytest.approx(oracle, rel=1e-6)


def test_inverse_symbol():
    a = bessel_symbol(2.0, 1.5)
    b = inverse_symbol(a)
    assert b.order == -2 and b.R == a.R
    xi, tau = np.random.default_rng(1).normal(size=(2, 30)) * 5
    assert np.allclose(a(0, 0, xi, tau) * b(0, 0, xi, tau), 1.0)
    c = hom(R2, 2.0)
    ci = inverse_symbol(c)
    assert isinstance(ci, ClassicalSymbol) and ci.order == -2
    ci.check_homogeneity()


def _stokes():
    z = lambda x, t, xi, tau: np.asarray(xi) ** 2 + np.asarray(tau) ** 2 + 0j  # noqa: E731
    ix = lambda x, t, xi, tau: 1j * np.asarray(xi) + 0 * np.asarray(tau)  # noqa: E731
    it = lambda x, t, xi, tau: 1j * np.asarray(tau) + 0 * np.asarray(xi)  # noqa: E731
    mix = lambda x, t, xi, tau: -1j * np.asarray(xi) + 0 * np.asarray(tau)  # noqa: E731
    mit = lambda x, t, xi, tau: -1j * np.asarray(tau) + 0 * np.asarray(xi)  # noqa: E731
    H = lambda f, m: ClassicalSymbol([f], m, x_dependent=False, t_dependent=False)  # noqa: E731
    blocks = [[H(z, 2), None, H(ix, 1)], [None, H(z, 2), H(it, 1)], [H(mix, 1), H(mit, 1), None]]
    return blocks, ADNOrderSpec((1, 1, 0), (1, 1, 0))


def test_adn_stokes():
    blocks, spec = _stokes()
    S = adn_symbol_matrix(blocks, spec)
    M = S(0.0, 0.0, 0.6, 0.8)
    ref = np.array([[1, 0, 0.6j], [0, 1, 0.8j], [-0.6j, -0.8j, 0]])
    assert np.allclose(M, ref)
    th = np.linspace(0, 2 * np.pi, 37)
    dets = np.linalg.det(S(0.0, 0.0, 2 * np.cos(th), 2 * np.sin(th)))
    assert np.allclose(dets, -16.0)  # -|zeta|^4 by cofactor expansion
    ok, mind = is_adn_elliptic(S)
    assert ok and mind == pytest.approx(1.0, abs=1e-12)


def test_adn_counterexample_and_scalar():
    z = ClassicalSymbol([R2], 2, x_dependent=False, t_dependent=False)
    ix = ClassicalSymbol([lambda x, t, xi, tau: 1j * np.asarray(xi) + 0 * np.asarray(tau)], 1,
                         x_dependent=False, t_dependent=False)
    mix = ClassicalSymbol([lambda x, t, xi, tau: -1j * np.asarray(xi) + 0 * np.asarray(tau)], 1,
                          x_dependent=False, t_dependent=False)
    S = adn_symbol_matrix([[z, ix], [mix, None]], ADNOrderSpec((1, 0), (1, 0)))
    ok, mind = is_adn_elliptic(S)
    assert not ok and mind < 1e-12
    S1 = adn_symbol_matrix([[z]], ADNOrderSpec((1,), (1,)))
    ok, mind = is_adn_elliptic(S1)
    assert ok and mind == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(SymbolError):
        adn_symbol_matrix([[z]], ADNOrderSpec((0,), (1,)))


def test_adn_identity():
    one = constant_symbol(1.0)
    S = adn_symbol_matrix([[one, None], [None, one]], ADNOrderSpec((0, 0), (0, 0)))
    assert is_adn_elliptic(S)[0]
