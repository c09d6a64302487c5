"""Numba vs numpy timings for the hot loops in ``cylcalc._accel``.

Run with ``python3 benchmarks/bench_kernels.py``. The backend is switched
through ``CYLCALC_NUMBA`` (``0`` selects numpy), which the kernels read on
every call. The first numba call compiles (or loads the on-disk cache) and
is timed separately.
"""
import argparse
import os
import time

import numpy as np

from cylcalc import _accel
from cylcalc.geometry import build_grid, rho
from cylcalc.quantize import quantize
from cylcalc.symbols import bessel_symbol, laplace_symbol


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def with_backend(flag, fn, repeat):
    old = os.environ.get("CYLCALC_NUMBA")
    os.environ["CYLCALC_NUMBA"] = flag
    try:
        return timeit(fn, repeat)
    finally:
        if old is None:
            del os.environ["CYLCALC_NUMBA"]
        else:
            os.environ["CYLCALC_NUMBA"] = old


def cases(g):
    rng = np.random.default_rng(0)
    J, n_x = 16, g.n_x
    blocks = rng.standard_normal((3, 2 * J + 1, n_x, n_x))
    cls = np.zeros(g.n_t, dtype=np.int64)
    cls[: g.n_t // 4] = 1
    cls[-g.n_t // 4:] = 2
    P = quantize(laplace_symbol(1.0), g)
    Q = np.linalg.inv(P.mat)
    tidx = np.repeat(np.arange(g.n_t), g.n_x)
    rows = np.arange(g.n_t // 2 * g.n_x, (g.n_t // 2 + 1) * g.n_x)
    w = np.repeat(np.abs(rho(g.t)), g.n_x)
    pw = np.array([0.0, 1.0, 2.0])
    return {
        "assemble_stencil": lambda: _accel.assemble_stencil(blocks, cls, 1, g.n_t, n_x, J),
        "offset_profile": lambda: _accel.offset_profile(Q, tidx, rows, g.n_t),
        "weighted_sup_norms": lambda: _accel.weighted_sup_norms(Q, w, w, pw),
        "quantize(bessel -1)": lambda: quantize(bessel_symbol(-1.0), g).mat,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-t", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    g = build_grid(n_t=args.n_t, t_extent=args.n_t / 8)
    print(f"grid n_x={g.n_x} n_t={g.n_t} (N={g.size}); numba available: {_accel.HAVE_NUMBA}")
    print(f"{'kernel':24s} {'numpy [s]':>10s} {'numba [s]':>10s} {'first call':>10s} {'speedup':>8s} {'max diff':>9s}")
    for name, fn in cases(g).items():
        t_np, a = with_backend("0", fn, args.repeat)
        t_first, _ = with_backend("1", fn, 1)
        t_nb, b = with_backend("1", fn, args.repeat)
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:24s} {t_np:10.4f} {t_nb:10.4f} {t_first:10.4f} {t_np / t_nb:8.2f} {diff:9.1e}")


if __name__ == "__main__":
    main()
