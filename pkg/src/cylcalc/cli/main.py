"""Command-line entry point.

Exit codes: 0 when the run succeeds and the verdict is positive, 2 when the
run succeeds but the verdict is negative, 1 on any error.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .. import io
from ..calculus import CalculusError, order_reduction
from ..fredholm import fredholm_verdict, invert_and_verify
from ..quantize import QuantizationError
from ..symbols import SymbolError, is_adn_elliptic
from .grammar import ParseError, pretty
from .specfile import derivative_table, read_spec

OK, VERDICT_FALSE, FAILED = 0, 2, 1
COMMANDS = ("analyze", "fredholm", "invert", "layer", "selftest")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cylcalc", description="Pseudodifferential calculus on a flat cylinder.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("spec", nargs="?", help="operator spec file (not used by selftest)")
    p.add_argument("--tau-max", type=float)
    p.add_argument("--tau-points", type=int)
    p.add_argument("--tol-ell", type=float)
    p.add_argument("--tol-inv", type=float)
    p.add_argument("--t0", type=float, help="order-reduction parameter reported by invert")
    p.add_argument("--neumann-depth", type=int, help="parametrix depth for the Atkinson check")
    p.add_argument("--report", help="write the JSON report here instead of standard output")
    p.add_argument("--kernel-out", help="kernel file; '.bin' selects the binary format, CSV otherwise")
    p.add_argument("--only", help="selftest: comma-separated criterion numbers")
    return p


def _opt(args, spec, flag, key, default=None):
    v = getattr(args, flag)
    if v is not None:
        return v
    return spec.options.get(key, default)


def _tau_kwargs(args, spec):
    kw = {"tau_points": _opt(args, spec, "tau_points", "tau_points", 257),
          "tau_max": _opt(args, spec, "tau_max", "tau_max")}
    if args.tau_max is None and "tau_grid" in spec.options:
        lo, hi, n = spec.options["tau_grid"]
        kw = {"tau_grid": np.linspace(lo, hi, n)}
    kw["tol_ell"] = _opt(args, spec, "tol_ell", "tol_ell")
    kw["tol_inv"] = _opt(args, spec, "tol_inv", "tol_inv")
    return kw


def _write_kernel(path, op):
    if path.endswith(".bin"):
        io.write_kernel_binary(path, op)
    else:
        io.write_kernel_csv(path, op)


def cmd_analyze(spec, args):
    syms = spec.symbols()
    blocks = []
    for (i, j), b in sorted(spec.blocks.items()):
        a = syms[i][j]
        blocks.append({"block": [i + 1, j + 1], "expression": pretty(b.ast), "order": a.order,
                       "declared_order": spec.s[i] + spec.t[j], "tau_degree": a.tau_degree,
                       "x_dependent": a.x_dependent, "t_dependent": a.t_dependent,
                       "invariance_radius": a.R, "derivatives": derivative_table(b.ast)})
    from ..symbols import adn_symbol_matrix

    S = adn_symbol_matrix(syms, spec.order_spec())
    ok, mind = is_adn_elliptic(S, tol=_opt(args, spec, "tol_ell", "tol_ell"), grid=spec.build_grid())
    rep = {"command": "analyze", "spec": spec.name, "grid": spec.build_grid().describe(),
           "s": list(spec.s), "t": list(spec.t), "elliptic": ok, "min_abs_det": mind,
           "scaling_error": S.scaling_error, "blocks": blocks}
    return rep, ok


def cmd_fredholm(spec, args):
    system = spec.build_system()
    m = float(spec.options.get("sobolev_shift", 0.0))
    fr = fredholm_verdict(system, m, **_tau_kwargs(args, spec))
    rep = {"command": "fredholm", "spec": spec.name, **fr.to_dict()}
    return rep, fr.verdict


def cmd_invert(spec, args):
    system = spec.build_system()
    m = float(spec.options.get("sobolev_shift", 0.0))
    fr = fredholm_verdict(system, m, **_tau_kwargs(args, spec))
    rep = {"command": "invert", "spec": spec.name, "fredholm": fr.to_dict()}
    if not fr.verdict:
        rep["membership"] = None
        return rep, False
    depth = _opt(args, spec, "neumann_depth", "N_order", 2)
    tol_inv = _opt(args, spec, "tol_inv", "tol_inv", 1e-8)
    op = system.to_operator() if system.k > 1 else system.block(0, 0)
    inv, mem = invert_and_verify(system if system.k > 1 else op, m, tol_inv=tol_inv,
                                 fredholm=fr, neumann_depth=int(depth))
    rep["membership"] = mem.to_dict()
    t0 = _opt(args, spec, "t0", "t0")
    if t0 is not None:
        s = max(spec.s[i] + spec.t[i] for i in range(spec.k))
        try:
            red = order_reduction(s, float(t0), system.grid, check_right=False)
            rep["order_reduction"] = {"s": s, "t0": float(t0), "residual_left": red.residual_left,
                                      "certified": red.certified}
        except CalculusError as exc:
            rep["order_reduction"] = {"s": s, "t0": float(t0), "certified": False, "error": str(exc)}
    if args.kernel_out:
        _write_kernel(args.kernel_out, inv)
    return rep, mem.verdict


def cmd_layer(spec, args):
    from ..layerpot import layer_pipeline, single_layer

    system = spec.build_system()
    N = spec.build_submanifold(system.grid)
    m = float(spec.options.get("sobolev_shift", 0.0))
    kw = _tau_kwargs(args, spec)
    pr = layer_pipeline(system if system.k > 1 else system.block(0, 0), N, m,
                        tau_points=kw.get("tau_points", 257), tol_inv=kw.get("tol_inv"))
    rep = {"command": "layer", "spec": spec.name, **pr.to_dict()}
    if args.kernel_out and pr.ok:
        op = system.to_operator() if system.k > 1 else system.block(0, 0)
        _write_kernel(args.kernel_out, single_layer(op, N).op)
    return rep, pr.ok


def cmd_selftest(args):
    from .. import acceptance

    only = None
    if args.only:
        only = [int(v) for v in args.only.split(",")]
    results = acceptance.run_all(only, stream=sys.stderr)
    rep = {"command": "selftest",
           "criteria": [{"id": r.cid, "passed": r.passed, "detail": r.detail} for r in results]}
    return rep, all(r.passed for r in results)


HANDLERS = {"analyze": cmd_analyze, "fredholm": cmd_fredholm, "invert": cmd_invert,
            "layer": cmd_layer}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            rep, ok = cmd_selftest(args)
        else:
            if not args.spec:
                raise ValueError(f"{args.command} needs a spec file")
            spec = read_spec(args.spec)
            rep, ok = HANDLERS[args.command](spec, args)
        text = io.dumps(rep)
        if args.report:
            with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except ParseError as exc:
        where = args.spec or "<input>"
        print(f"{where}:{exc.line}:{exc.col}: error: {exc.message}", file=sys.stderr)
        return FAILED
    except (OSError, ValueError, CalculusError, QuantizationError, SymbolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    return OK if ok else VERDICT_FALSE


def main(argv=None) -> None:
    if os.environ.get("CYLCALC_THREADS"):
        from .._accel import apply_thread_limit

        apply_thread_limit()
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
