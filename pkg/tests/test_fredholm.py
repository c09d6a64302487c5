import numpy as np
import pytest

from cylcalc.calculus import CalculusError, NotInCalculus, limit_operator, s0_extend
from cylcalc.cli.specfile import parse_spec
from cylcalc.fredholm import (compactness_check, fredholm_verdict, in_sigma_joint,
                              invert_and_verify, loglog_slopes)
from cylcalc.geometry import smooth_step
from cylcalc.quantize import OperatorMatrix, identity_operator, quantize, zero_operator
from cylcalc.symbols import FullSymbol, bessel_symbol, constant_symbol, laplace_symbol

from conftest import windowed

ENDS = ("left", "right")
SMALL_GRID = "[grid]\nn_x = 8\nL_circ = 2*pi\nn_t = 64\nt_extent = 16\nR_inv = 4\nmargin = 4\n"


def stokes(c, penalty):
    """Stokes-type system, optionally shifted by ``c`` and with a pressure penalty."""
    txt = SMALL_GRID + f"""[blocks]
k = 3
s = 1, 1, 0
t = 1, 1, 0
a11 = xi^2 + tau^2 + {c}
a22 = xi^2 + tau^2 + {c}
a13 = i*xi
a23 = i*tau
a31 = -i*xi
a32 = -i*tau
""" + (f"a33 = -{penalty}\n" if penalty else "")
    return parse_spec(txt).build_system()


def compact_perturbation(grid, amp=0.05, width=3.0):
    """Rank-one smoothing operator supported in ``|t|, |s| < width``."""
    X, T = grid.mesh()
    w = smooth_step(np.abs(T) / width).reshape(-1)
    f = w * np.cos(X).reshape(-1)
    mat = amp * np.outer(f, w) * grid.site_weight * grid.h_t
    return OperatorMatrix(mat, grid, -np.inf, 2 * width, width, "comp",
                          exact_limits={"left": {}, "right": {}}, name="K"), f, w


# ---------------------------------------------------------------------------
# verdict
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("c", [1.0, 0.25, 0.04])
def test_shifted_laplacian_min_sv(small, c):
    # weighted indicial family (tau^2 + k^2 + c) / (1 + k^2 + tau^2): minimum c at k = tau = 0
    r = fredholm_verdict(quantize(laplace_symbol(c), small))
    assert r.verdict and r.adn_elliptic
    assert r.min_sv == pytest.approx(c, rel=1e-8)
    if c < 1:
        assert abs(r.argmin_tau) < 1e-6


def test_laplacian_not_fredholm(small):
    r = fredholm_verdict(quantize(laplace_symbol(0.0), small))
    assert r.adn_elliptic and not r.verdict
    assert r.min_sv < 1e-12
    for e in r.per_end:
        assert any(abs(t) < 1e-6 for t in e.singular_taus)


def test_nonelliptic_verdict_false(small):
    a = FullSymbol(lambda x, t, xi, tau: xi * tau + 1.0, 2.0, 0.0)
    r = fredholm_verdict(quantize(a, small))
    assert not r.adn_elliptic and not r.verdict


def test_verdict_is_continuous_in_the_shift(small):
    svs = [fredholm_verdict(quantize(laplace_symbol(c), small)).min_sv for c in (0.0, 1e-3, 1e-2, 1e-1)]
    assert np.all(np.diff(svs) > 0)


@pytest.mark.parametrize("c,penalty,expect", [(0, 0, False), (1, 0, False), (0, 1, False), (1, 1, True)])
def test_stokes_type_systems(c, penalty, expect):
    # constant pressure (penalty 0) or constant velocity (c = 0) are kernels at tau = 0
    r = fredholm_verdict(stokes(c, penalty))
    assert r.adn_elliptic
    assert r.verdict is expect
    if not expect:
        assert r.min_sv < 1e-10 and abs(r.argmin_tau) < 1e-6


def test_stokes_family_oracle():
    # independent oracle at tau = 0, link mode k = 1: block ij scaled by 2^(-(s_i + t_j)/2)
    sysm = stokes(1, 1)
    r = fredholm_verdict(sysm, tau_grid=np.array([-1e-3, 0.0, 1e-3]))
    M = np.array([[2, 0, 1j], [0, 2, 0], [-1j, 0, -1]]) * np.array([[0.5, 0.5, 1 / np.sqrt(2)],
                                                                     [0.5, 0.5, 1 / np.sqrt(2)],
                                                                     [1 / np.sqrt(2), 1 / np.sqrt(2), 1]])
    assert r.min_sv <= np.linalg.svd(M, compute_uv=False)[-1] + 1e-9
    assert r.min_sv == pytest.approx(1.0, rel=1e-6)


def test_necessity_probe(small):
    # a Weyl sequence at tau = 0 for the unshifted Laplacian: ||P u|| / ||u|| -> 0
    P = quantize(laplace_symbol(0.0), small)
    ratios = []
    for W in (2.0, 4.0, 8.0):
        u = windowed(small, 0.0, W).reshape(-1)
        ratios.append(np.linalg.norm(P.mat @ u) / np.linalg.norm(u))
    assert ratios[0] > ratios[1] > ratios[2]
    assert ratios[2] < 0.1 * ratios[0]


def test_symmetric_operator_spectrum(small):
    c = 0.25
    P = quantize(laplace_symbol(c), small)
    assert np.max(np.abs(P.mat - P.mat.conj().T)) < 1e-12
    lam = np.linalg.eigvalsh(P.mat)
    # compression of a positive convolution: spectrum starts at c, within the box mode
    assert lam[0] >= c - 1e-10
    assert lam[0] <= c + (np.pi / (2 * small.t_max)) ** 2 * 1.5


@pytest.mark.parametrize("c", [1.0, 0.25])
def test_verdict_soundness(small, c):
    P = quantize(laplace_symbol(c), small)
    r = fredholm_verdict(P)
    assert np.linalg.norm(np.linalg.inv(P.mat), 2) <= 2.0 / r.min_sv


def test_loglog_slopes_on_power_law():
    u = np.linspace(1.0, 10.0, 200)
    assert np.allclose(loglog_slopes(u, 3.0 * u ** -5.0), 5.0)


# ---------------------------------------------------------------------------
# compactness
# ---------------------------------------------------------------------------


def test_compactness_examples(small):
    a = FullSymbol(lambda x, t, xi, tau: smooth_step(np.abs(t) / 1.5) / np.sqrt(1 + xi ** 2 + tau ** 2),
                   -1.0, 1.5)
    r = compactness_check(quantize(a, small), refined=quantize(a, small.with_n_t(2 * small.n_t)))
    assert r.verdict and r.sv_tail[1] < r.sv_tail[0]
    assert not compactness_check(s0_extend(limit_operator(identity_operator(small), "left"), small)).verdict
    assert not compactness_check(quantize(bessel_symbol(-1.0), small)).verdict
    assert compactness_check(zero_operator(small)).verdict


def test_compactness_rejects_foreign_tag(small):
    P = identity_operator(small).replace(tag="none")
    with pytest.raises(NotInCalculus):
        compactness_check(P)


# ---------------------------------------------------------------------------
# inverse membership
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def laplace_inverse(grid):
    P = quantize(laplace_symbol(1.0), grid)
    inv, rep = invert_and_verify(P)
    return P, inv, rep


@pytest.mark.slow
def test_laplace_inverse_membership(laplace_inverse):
    P, inv, rep = laplace_inverse
    assert rep.verdict
    assert rep.closure_residual <= 1e-10
    assert max(rep.limit_inverse_residual.values()) <= 1e-6
    assert min(rep.decay_exponents) > 6
    assert rep.index_estimate == (0, 0)
    assert rep.atkinson_residual < 1e-1
    # limits of the inverse are the inverses of the limits
    for e in ENDS:
        prod = inv.limits[e] @ limit_operator(P, e)
        assert prod.distance(prod.identity_like(), stencil_only=True) <= 1e-6


@pytest.mark.slow
def test_laplace_inverse_sv_bounds(laplace_inverse, grid):
    P, inv, rep = laplace_inverse
    fr = fredholm_verdict(P)
    assert rep.smallest_sv >= fr.min_sv / 2
    assert np.linalg.norm(inv.mat, 2) <= 2.0 / fr.min_sv


@pytest.mark.slow
def test_identity_plus_compact(grid):
    K, f, w = compact_perturbation(grid)
    T = (identity_operator(grid) + K).replace(symbol=constant_symbol(1.0))
    inv, rep = invert_and_verify(T)
    assert rep.verdict
    assert all(rep.finite_support.values())
    # Sherman-Morrison: (I + a f w^T)^-1 = I - a f w^T / (1 + a w^T f)
    dw = grid.site_weight * grid.h_t
    ref = np.eye(grid.size) - K.mat / (1 + 0.05 * dw * (w @ f))
    assert np.max(np.abs(inv.mat - ref)) <= 1e-12
    assert compactness_check(K).verdict


def test_invert_refuses_non_fredholm(small):
    with pytest.raises(CalculusError):
        invert_and_verify(quantize(laplace_symbol(0.0), small))


# ---------------------------------------------------------------------------
# joint map
# ---------------------------------------------------------------------------


def test_joint_compatibility(small):
    a = FullSymbol(lambda x, t, xi, tau: (1 + 0.3 * np.sin(x)) * (1 + xi ** 2 + tau ** 2), 2.0, 0.0,
                   x_dependent=True)
    for P in (quantize(laplace_symbol(1.0), small), quantize(a, small)):
        r = in_sigma_joint(P)
        assert max(r.compatibility.values()) <= 1e-8
        assert not r.both_vanish and r.membership_ok is None


def test_joint_smoothing_vanishes(small):
    K, *_ = compact_perturbation(small, width=2.0)
    r = in_sigma_joint(K.replace(tag="ess"))
    assert r.both_vanish and r.membership_ok
    with pytest.raises(NotInCalculus):
        in_sigma_joint(K)
