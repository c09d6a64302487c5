"""Acceptance suite.

Each ``criterion_<n>`` builds its operators on the default grid (unless the
criterion names another), measures the quantity it is about, and returns a
:class:`Result`. The tolerances are fixed here and are not parameters.
Used by ``tests/test_acceptance.py`` and by ``cylcalc selftest``.
"""
from __future__ import annotations

import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calculus import (ENDS, LimitOperator, calibrate_t0, decompose, indicial_family,
                       limit_operator, order_reduction, s0_extend)
from .fredholm import compactness_check, fredholm_verdict, invert_and_verify
from .geometry import build_grid, vertical_line
from .quantize import (identity_operator, kernel_asymptotics_fit, oscillatory_symbol_extract,
                       quantize, restrict_kernel, top_alias_free_scale, zero_operator)
from .sobolev import partition_norm, random_band_limited, sobolev_norm
from .symbols import ClassicalSymbol, FullSymbol, bessel_symbol, constant_symbol, laplace_symbol


@dataclass
class Result:
    cid: int
    title: str
    passed: bool
    value: float
    tol: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"criterion {self.cid:2d} [{tag}] {self.title}: value {self.value:.3e} "
                f"(tol {self.tol:.1e}, {self.seconds:.1f}s)")


def _timed(fn):
    def wrapper(*args, **kwargs):
        t = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# 1  quantization of 1 and i tau
# ---------------------------------------------------------------------------


@_timed
def criterion_1() -> Result:
    g = build_grid()
    I = quantize(constant_symbol(1.0), g)
    err_id = float(np.max(np.abs(I.mat - np.eye(I.N))))
    dt = quantize(FullSymbol(lambda x, t, xi, tau: 1j * tau, 1.0, tau_degree=1, x_dependent=False,
                             t_dependent=False, name="i tau"), g)
    X, T = g.mesh()
    worst = 0.0
    for tau0, k in ((0.5, 0), (1.7, 1), (3.0, 3)):
        w = np.exp(-(T / 6.0) ** 2)
        dw = -2 * T / 36.0 * w
        u = w * np.exp(1j * (tau0 * T + k * X))
        exact = (dw + 1j * tau0 * w) * np.exp(1j * (tau0 * T + k * X))
        v = (dt.mat @ u.reshape(-1)).reshape(u.shape)
        inner = g.interior_mask()
        err = np.linalg.norm((v - exact)[inner]) / np.linalg.norm(exact[inner])
        worst = max(worst, float(err))
    ok = err_id <= 1e-14 and worst <= 1e-6
    return Result(1, "quantize(1) = identity, quantize(i tau) = d_t", ok, worst, 1e-6,
                  {"identity_max_abs_err": err_id, "dt_rel_err": worst})


# ---------------------------------------------------------------------------
# 2  symbol multiplicativity
# ---------------------------------------------------------------------------


def random_classical(rng, lo: float = -2.0, hi: float = 2.0, modulation: float = 0.3) -> ClassicalSymbol:
    """Elliptic invariant classical symbol ``a_m + a_{m-1}`` with random angular profile."""
    m = float(rng.uniform(lo, hi))
    b, th0 = rng.uniform(0, modulation), rng.uniform(0, 2 * np.pi)
    c, th1 = rng.uniform(-modulation, modulation), rng.uniform(0, 2 * np.pi)

    def a0(x, t, xi, tau):
        return np.hypot(xi, tau) ** m * (1 + b * np.cos(np.arctan2(tau, xi) - th0))

    def a1(x, t, xi, tau):
        return c * np.hypot(xi, tau) ** (m - 1) * np.sin(np.arctan2(tau, xi) - th1)

    return ClassicalSymbol([a0, a1], m, x_dependent=False, t_dependent=False, name=f"cl({m:.2f})")


RAYS_2 = np.pi * (2 * np.arange(8) + 1) / 8


@_timed
def criterion_2(seed: int = 2024, pairs: int = 10) -> Result:
    g = build_grid()
    rng = np.random.default_rng(seed)
    worst, rows = 0.0, []
    for _ in range(pairs):
        A, B = random_classical(rng), random_classical(rng)
        P, Q = quantize(A, g), quantize(B, g)
        errs = []
        for th in RAYS_2:
            d = np.array([np.cos(th), np.sin(th)])
            s = top_alias_free_scale(g, d)
            smp = oscillatory_symbol_extract([P, Q], (0.0, 0.0), d, [s], fit=False)
            eta = smp.eta[0]
            ref = A(0.0, 0.0, *eta) * B(0.0, 0.0, *eta)
            errs.append(abs(smp.values[0] - ref) / abs(ref))
        rows.append([A.order, B.order, max(errs)])
        worst = max(worst, max(errs))
    return Result(2, "sigma(PQ) = sigma(P) sigma(Q) at the top alias-free scale", worst <= 2e-2,
                  worst, 2e-2, {"pairs": rows})


# ---------------------------------------------------------------------------
# 3  limit-operator section and decomposition
# ---------------------------------------------------------------------------


def random_invariant(rng, grid, end: str, radius: int = 8) -> LimitOperator:
    ns = grid.n_sites
    st = {}
    for l in range(-radius, radius + 1):
        if rng.random() < 0.6:
            st[l] = rng.standard_normal((ns, ns)) + 1j * rng.standard_normal((ns, ns))
    if not st:
        st[0] = np.eye(ns)
    return LimitOperator(end, ns, 1, grid.h_t, st, {}, None, 0.0, "exact", 0.0, grid.L)


@_timed
def criterion_3(seed: int = 3, n: int = 10) -> Result:
    g = build_grid()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n):
        end = ENDS[k % 2]
        T = random_invariant(rng, g, end, radius=int(rng.integers(1, 16)))
        back = limit_operator(s0_extend(T, g), end)
        worst = max(worst, back.distance(T) / T.scale())
    P = quantize(bessel_symbol(-1.0), g)
    dec = decompose(P)
    recon = float(np.max(np.abs(dec.invariant.mat + dec.compact.mat - P.mat)) / np.max(np.abs(P.mat)))
    ok = worst <= 1e-10 and recon <= 1e-14 and np.isfinite(dec.support_radius)
    return Result(3, "In(s0(T)) = T and P = s0(In P) + compact", ok, worst, 1e-10,
                  {"section_rel_err": worst, "reassembly_rel_err": recon,
                   "compact_support_radius": dec.support_radius})


# ---------------------------------------------------------------------------
# 4  indicial diagonalization
# ---------------------------------------------------------------------------


@_timed
def criterion_4() -> Result:
    g = build_grid()
    worst = 0.0
    for c in (0.5, 1.0, 3.0):
        T = limit_operator(quantize(laplace_symbol(c), g), "left")
        taus = np.linspace(-6, 6, 25)
        fam = indicial_family(T, taus)
        k = g.link.k
        for tv, M in zip(taus, fam.mats):
            ev = np.linalg.eigvals(M)
            ev = ev[np.argsort(ev.real)]
            ref = np.sort(tv ** 2 + k ** 2 + c)
            worst = max(worst, float(np.max(np.abs(ev - ref) / np.abs(ref))))
    return Result(4, "eig T^(tau) = tau^2 + k^2 + c", worst <= 1e-10, worst, 1e-10)


# ---------------------------------------------------------------------------
# 5  Fredholm verdict flip
# ---------------------------------------------------------------------------


@_timed
def criterion_5() -> Result:
    g = build_grid()
    verdicts = {}
    rep_neg = None
    for c in (0.1, 1.0, 10.0, 0.0, -0.5):
        rep = fredholm_verdict(quantize(laplace_symbol(c), g))
        verdicts[c] = rep.verdict
        if c == -0.5:
            rep_neg = rep
    want = {0.1: True, 1.0: True, 10.0: True, 0.0: False, -0.5: False}
    flips_ok = verdicts == want
    end = rep_neg.per_end[0]
    sing = np.array(end.singular_taus)
    r = np.sqrt(0.5)
    if sing.size:
        dev = max(abs(sing.min() + r), abs(sing.max() - r))
    else:
        dev = np.inf
    ok = flips_ok and dev <= end.tau_step
    return Result(5, "Fredholm verdict flips with c; singular tau at +-sqrt(1/2)", ok, float(dev),
                  end.tau_step, {"verdicts": {str(k): v for k, v in verdicts.items()},
                                 "singular_taus": sing.tolist(), "tau_step": end.tau_step})


# ---------------------------------------------------------------------------
# 6  ADN ellipticity
# ---------------------------------------------------------------------------

STOKES_SPEC = """
[blocks]
k = 3
s = 1, 1, 0
t = 1, 1, 0
a11 = xi^2 + tau^2
a22 = xi^2 + tau^2
a13 = i*xi
a23 = i*tau
a31 = -i*xi
a32 = -i*tau
"""

COUNTER_SPEC = """
[blocks]
k = 2
s = 1, 0
t = 1, 0
a11 = xi^2 + tau^2
a12 = i*xi
a21 = -i*xi
"""


@_timed
def criterion_6() -> Result:
    from .cli.specfile import parse_spec
    from .symbols import adn_symbol_matrix, is_adn_elliptic

    st = parse_spec(STOKES_SPEC)
    ok1, d1 = is_adn_elliptic(adn_symbol_matrix(st.symbols(), st.order_spec()))
    ce = parse_spec(COUNTER_SPEC)
    ok2, d2 = is_adn_elliptic(adn_symbol_matrix(ce.symbols(), ce.order_spec()))
    dev = abs(d1 - 1.0)
    ok = ok1 and dev <= 1e-8 and (not ok2) and d2 <= 1e-8
    return Result(6, "Stokes accepted with min|det| = 1; (2,1;1,0) example rejected", ok, dev, 1e-8,
                  {"stokes_min_det": d1, "counterexample_min_det": d2,
                   "stokes_verdict": ok1, "counterexample_verdict": ok2})


# ---------------------------------------------------------------------------
# 7  order reduction
# ---------------------------------------------------------------------------


@_timed
def criterion_7() -> Result:
    g = build_grid()
    t0, res = calibrate_t0(2.0, g)
    red = order_reduction(2.0, t0, g)
    _, rep = invert_and_verify(red.Lambda, atkinson=False)
    expo = rep.decay_exponents
    ok = red.residual_left <= 0.5 and red.certified and rep.verdict and min(expo) >= 4.0
    return Result(7, "bisected t0 gives ||L2 L-2 - 1|| <= 1/2; L2^-1 in the calculus", ok,
                  red.residual_left, 0.5, {"t0": t0, "residual_right": red.residual_right,
                                           "membership_verdict": rep.verdict,
                                           "min_decay_exponent": min(expo)})


# ---------------------------------------------------------------------------
# 8  spectral invariance
# ---------------------------------------------------------------------------


@_timed
def criterion_8() -> Result:
    g = build_grid()
    P = quantize(laplace_symbol(1.0), g)
    inv, rep = invert_and_verify(P, atkinson=False)
    slopes = rep.conv_kernel_decay_exponents
    inc = all(np.all(np.diff(slopes[e]) > 0) for e in ENDS)
    smin = min(min(slopes[e]) for e in ENDS)
    lim = max(rep.limit_inverse_residual.values())
    ok = rep.verdict and smin > 6 and inc and lim <= 1e-6
    return Result(8, "inverse of q(1+xi^2+tau^2) is in the calculus", ok, lim, 1e-6,
                  {"min_slope": smin, "slopes_increasing": inc, "closure": rep.closure_residual,
                   "slopes": {e: list(v) for e, v in slopes.items()}})


# ---------------------------------------------------------------------------
# 9  compactness trichotomy
# ---------------------------------------------------------------------------

COMPACT_SYMBOL = "bump(t, -3, 3) / sqrt(1 + xi^2 + tau^2)"


@_timed
def criterion_9() -> Result:
    from .cli.grammar import parse_expression
    from .cli.specfile import symbol_from_ast

    g = build_grid()
    a = symbol_from_ast(parse_expression(COMPACT_SYMBOL), name="compact")
    P = quantize(a, g)
    P2 = quantize(a, g.with_n_t(2 * g.n_t))
    r1 = compactness_check(P, refined=P2)
    T = limit_operator(identity_operator(g), "left")
    r2 = compactness_check(s0_extend(T, g))
    r3 = compactness_check(zero_operator(g))
    ratio = r1.sv_tail[1] / r1.sv_tail[0]
    ok = r1.verdict and not r2.verdict and r3.verdict and ratio < 0.9
    return Result(9, "compact / not compact / compact; sv tail falls as n_t doubles", ok, ratio, 0.9,
                  {"compact": r1.to_dict(), "s0_identity": r2.to_dict(), "zero": r3.to_dict()})


# ---------------------------------------------------------------------------
# 10 restriction theorem
# ---------------------------------------------------------------------------


@_timed
def criterion_10() -> Result:
    from .layerpot import restrict_limit

    g = build_grid()
    P = quantize(bessel_symbol(-3.0, 1.0), g)
    N = vertical_line(g, 0)
    PN = restrict_kernel(P, N)
    fit = kernel_asymptotics_fit(PN, m=-2.0)
    gap = 0.0
    for e in ENDS:
        a = limit_operator(PN, e)
        b = restrict_limit(limit_operator(P, e), N, g)
        gap = max(gap, a.distance(b, stencil_only=True) / b.scale())
    ok = fit.residual <= 5e-2 and gap <= 1e-6
    return Result(10, "P|_N fits order -2 and In(P|_N) = In(P)|_N", ok, fit.residual, 5e-2,
                  {"In_gap": gap})


# ---------------------------------------------------------------------------
# 11 single layer symbol
# ---------------------------------------------------------------------------


@_timed
def criterion_11() -> Result:
    from .layerpot import single_layer_fourier

    g = build_grid(n_x=8192, L_circ=8 * np.pi)
    S = single_layer_fourier(laplace_symbol(1.0), g)
    tn = g.tau_nyquist
    taus = np.linspace(tn / 3, 2 * tn / 3, 64)
    v = S.tau_symbol(taus).real
    ref = 1 / (2 * np.sqrt(1 + taus ** 2))
    err = float(np.max(np.abs(v - ref) / ref))
    return Result(11, "tau-symbol of S_P = 1/(2 sqrt(1+tau^2))", err <= 1e-2, err, 1e-2,
                  {"n_x": g.n_x, "L_circ": g.L, "tau_range": [taus[0], taus[-1]]})


# ---------------------------------------------------------------------------
# 12 double layer vanishing
# ---------------------------------------------------------------------------


@_timed
def criterion_12() -> Result:
    from .layerpot import double_layer, single_layer

    g = build_grid()
    P = quantize(laplace_symbol(1.0), g)
    N = vertical_line(g, 0)
    S = single_layer(P, N)
    K = double_layer(P, N, single=S)
    rel = K.sup_norm() / S.sup_norm()
    return Result(12, "double layer of a straight line vanishes", rel <= 1e-6, rel, 1e-6,
                  {"pv_gap": K.checks.get("pv_gap")})


# ---------------------------------------------------------------------------
# 13 Sobolev equivalence
# ---------------------------------------------------------------------------


@_timed
def criterion_13(seed: int = 13, n: int = 50) -> Result:
    g = build_grid()
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, 0.0
    for m in (0, 1, 2):
        for _ in range(n):
            u = random_band_limited(g, rng)
            r = partition_norm(u, g, m) / sobolev_norm(u, g, m)
            lo, hi = min(lo, r), max(hi, r)
    ok = lo >= 0.25 and hi <= 4.0
    worst = max(hi, 1 / lo)
    return Result(13, "partition norm ~ Fourier norm", ok, worst, 4.0, {"min_ratio": lo, "max_ratio": hi})


# ---------------------------------------------------------------------------
# 14 parser determinism
# ---------------------------------------------------------------------------


def random_expression(rng, depth: int = 3) -> str:
    """Random valid symbol text: a positive principal part plus random lower-order terms."""
    def coef():
        return str(round(float(rng.uniform(0.1, 2.0)), 3))

    def leaf():
        return rng.choice(["xi", "tau", "x", coef(), "pi", f"bump(t, -{coef()}, {coef()})"])

    def node(d):
        if d == 0:
            return leaf()
        kind = rng.integers(0, 6)
        if kind == 0:
            return f"({node(d - 1)} + {node(d - 1)})"
        if kind == 1:
            return f"{node(d - 1)} * {node(d - 1)}"
        if kind == 2:
            return f"sin({node(d - 1)})"
        if kind == 3:
            return f"cos({node(d - 1)}) / (2 + cos(x))"
        if kind == 4:
            return f"-{node(d - 1)}"
        return f"exp(-{leaf()}^2)"

    m = int(rng.integers(1, 3))
    principal = f"{coef()} * (1 + xi^2 + tau^2)^{m}" if rng.random() < 0.5 else \
        f"(xi^2 + {coef()} * tau^2 + 1)^{m}"
    lower = node(depth).replace("xi", "sin(xi)").replace("tau", "cos(tau)")
    return f"{principal} + 0.01 * {lower}"


def random_spec(rng) -> str:
    parts = []
    if rng.random() < 0.5:
        parts.append("[grid]\nn_x = 16\nL_circ = 2*pi\nn_t = 256\nt_extent = 32\n")
    parts.append("[blocks]\nk = 1\ns = 0\n" + f"a = {random_expression(rng, int(rng.integers(2, 5)))}\n")
    if rng.random() < 0.5:
        parts.append(f"[options]\ntau_points = {int(rng.integers(33, 129))}\ntol_inv = 1e-8\n")
    return "\n".join(parts)


@_timed
def criterion_14(seed: int = 14, n: int = 20) -> Result:
    from .cli.grammar import parse_expression, pretty
    from .cli.main import run
    from .cli.specfile import parse_spec

    rng = np.random.default_rng(seed)
    mism, diff, codes = 0, 0, []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(n):
            text = random_spec(rng)
            spec = parse_spec(text)
            ast = spec.blocks[(0, 0)].ast
            if parse_expression(pretty(ast)) != ast:
                mism += 1
            path = Path(tmp) / f"fuzz{k}.spec"
            path.write_text(text)
            for cmd in ("analyze", "fredholm") if k < 3 else ("analyze",):
                outs = []
                for rep in range(2):
                    out = Path(tmp) / f"fuzz{k}_{cmd}_{rep}.json"
                    codes.append(run([cmd, str(path), "--report", str(out)]))
                    outs.append(out.read_bytes())
                diff += outs[0] != outs[1]
    ok = mism == 0 and diff == 0 and all(c in (0, 2) for c in codes)
    return Result(14, "fuzzed specs round-trip and reports are byte-identical", ok,
                  float(mism + diff), 0.0, {"ast_mismatches": mism, "report_differences": diff,
                                            "exit_codes": sorted(set(codes))})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 15)}


def run_all(only=None, stream=sys.stdout) -> list:
    out = []
    for cid in sorted(only or CRITERIA):
        res = CRITERIA[cid]()
        print(res.line(), file=stream, flush=True)
        out.append(res)
    return out
