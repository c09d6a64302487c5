"""Operator spec files.

A spec file is a small INI-style text::

    # shifted Laplacian
    [grid]
    n_x = 16
    L_circ = 2*pi
    n_t = 256
    t_extent = 32
    R_inv = 8
    margin = 8

    [blocks]
    k = 1
    s = 0
    t = 2
    a11 = xi^2 + tau^2 + 1

    [options]
    tau_points = 257

    [submanifold]
    sites = 0
    normal = 1, 0

Numeric values are constant expressions in the symbol grammar. For ``k = 1``
the block may be written ``a``; block ``(i, j)`` is ``a<i><j>`` (1-based)
and missing blocks are zero.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from ..calculus import ADNSystem
from ..geometry import CylinderGrid, Submanifold, build_grid
from ..quantize import quantize
from ..symbols import ADNOrderSpec, FullSymbol
from .grammar import (Num, ParseError, _const_value, bump_windows, derivative, evaluate,
                      parse_expression, pretty, tau_degree, variables)

GRID_KEYS = {"n_x": 16, "L_circ": 2 * np.pi, "n_t": 256, "t_extent": 32.0, "R_inv": 8.0,
             "margin": 8.0}
OPTION_KEYS = ("tau_max", "tau_points", "tau_grid", "tol_ell", "tol_inv", "t0", "N_order",
               "sobolev_shift")
SECTIONS = ("grid", "blocks", "options", "submanifold")
_BLOCK = re.compile(r"^a(?:(\d)(\d))?$")


@dataclass
class BlockExpr:
    i: int
    j: int
    text: str
    ast: object
    line: int


@dataclass
class OperatorSpecFile:
    grid: dict
    k: int
    s: tuple
    t: tuple
    blocks: dict
    options: dict = field(default_factory=dict)
    submanifold: dict = field(default_factory=dict)
    name: str = "spec"

    # construction ----------------------------------------------------------
    def build_grid(self) -> CylinderGrid:
        g = self.grid
        return build_grid(int(g["n_x"]), g["L_circ"], int(g["n_t"]), g["t_extent"], g["R_inv"],
                          g["margin"])

    def order_spec(self) -> ADNOrderSpec:
        return ADNOrderSpec(self.s, self.t)

    def symbol(self, i: int, j: int) -> FullSymbol | None:
        b = self.blocks.get((i, j))
        return None if b is None else symbol_from_ast(b.ast, name=f"a{i + 1}{j + 1}")

    def symbols(self) -> list:
        return [[self.symbol(i, j) for j in range(self.k)] for i in range(self.k)]

    def build_system(self, grid: CylinderGrid | None = None) -> ADNSystem:
        grid = grid or self.build_grid()
        blocks = [[None if a is None else quantize(a, grid) for a in row] for row in self.symbols()]
        return ADNSystem(blocks, self.order_spec(), grid, self.name)

    def build_submanifold(self, grid: CylinderGrid) -> Submanifold:
        sites = self.submanifold.get("sites", [0])
        normal = self.submanifold.get("normal", [1.0, 0.0])
        return Submanifold(grid, np.asarray(sites, dtype=np.int64), np.asarray(normal, dtype=float))


# ---------------------------------------------------------------------------
# symbols from expressions
# ---------------------------------------------------------------------------


def measure_order(f, n_rays: int = 16, lam=(1e3, 1e4), points=((0.0, 0.0),)) -> float:
    """Growth exponent of ``|f(lam w)|`` over unit covectors ``w``, rounded to halves."""
    th = 2 * np.pi * (np.arange(n_rays) + 0.5) / n_rays
    c, s = np.cos(th), np.sin(th)
    best = -np.inf
    for x, t in points:
        a1 = np.abs(np.broadcast_to(f(x, t, lam[0] * c, lam[0] * s), c.shape))
        a2 = np.abs(np.broadcast_to(f(x, t, lam[1] * c, lam[1] * s), c.shape))
        if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
            raise ParseError("symbol is not finite at large covectors")
        if np.max(a2) == 0 and np.max(a1) == 0:
            continue
        best = max(best, float(np.log(np.max(a2) / np.max(a1)) / np.log(lam[1] / lam[0])))
    if not np.isfinite(best):
        return best
    r = round(2 * best) / 2
    if abs(best - r) > 2e-2:
        raise ParseError(f"symbol growth exponent {best:.3f} is not a half-integer order")
    return r


def symbol_from_ast(ast, name: str = "a") -> FullSymbol:
    names = variables(ast)
    wins = bump_windows(ast)
    R = max((max(abs(a), abs(b)) for a, b in wins), default=0.0)

    def func(x, t, xi, tau):
        return evaluate(ast, {"x": x, "t": t, "xi": xi, "tau": tau})

    if "t" in names:
        pts = [(0.0, 0.5 * (a + b)) for a, b in wins] + [(0.0, 0.0)]
    else:
        pts = [(0.0, 0.0)]
    if "x" in names:
        pts = [(x, t) for t in {p[1] for p in pts} for x in (0.0, 1.0, 2.5)]
    m = measure_order(func, points=pts)
    if not np.isfinite(m):
        m = 0.0
    func.__name__ = name
    return FullSymbol(func, m, R, 1, tau_degree=tau_degree(ast), x_dependent="x" in names,
                      t_dependent="t" in names, derivative_depth=2, name=name)


def derivative_table(ast, depth: int = 2) -> dict:
    """Symbolic ``d_xi^a d_tau^b`` for ``a + b <= depth``, pretty-printed."""
    out = {}
    frontier = {(0, 0): ast}
    for _ in range(depth):
        nxt = {}
        for (a, b), node in frontier.items():
            nxt.setdefault((a + 1, b), derivative(node, "xi"))
            nxt.setdefault((a, b + 1), derivative(node, "tau"))
        for key, node in nxt.items():
            out[f"d_xi^{key[0]} d_tau^{key[1]}"] = pretty(node)
        frontier = nxt
    return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _number(text, line, col, integer=False):
    node = parse_expression(text, line, col)
    v = _const_value(node)
    if v is None:
        raise ParseError("expected a real constant", line, col)
    if integer:
        if float(v) != int(v):
            raise ParseError("expected an integer", line, col)
        return int(v)
    return float(v)


def _number_list(text, line, col, integer=False):
    out = []
    off = 0
    for part in text.split(","):
        lead = len(part) - len(part.lstrip())
        if not part.strip():
            raise ParseError("empty list entry", line, col + off)
        out.append(_number(part.strip(), line, col + off + lead, integer))
        off += len(part) + 1
    return out


def parse_spec(text: str, name: str = "spec") -> OperatorSpecFile:
    """Parse and validate a spec file; errors carry line and column."""
    raw = {sec: {} for sec in SECTIONS}
    section = None
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        st = body.strip()
        if st.startswith("["):
            if not st.endswith("]"):
                raise ParseError("unterminated section header", ln, len(line) - len(line.lstrip()) + 1)
            section = st[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", ln, 1)
            continue
        if section is None:
            raise ParseError("entry outside of a section", ln, 1)
        if "=" not in body:
            raise ParseError("expected 'key = value'", ln, len(body) - len(body.lstrip()) + 1)
        key, value = body.split("=", 1)
        kcol = len(key) - len(key.lstrip()) + 1
        vcol = len(key) + 2 + len(value) - len(value.lstrip())
        key = key.strip()
        if key in raw[section]:
            raise ParseError(f"duplicate key {key!r}", ln, kcol)
        raw[section][key] = (value.strip(), ln, vcol, kcol)

    # grid
    grid = dict(GRID_KEYS)
    for key, (val, ln, col, kcol) in raw["grid"].items():
        if key not in GRID_KEYS:
            raise ParseError(f"unknown grid key {key!r}", ln, kcol)
        grid[key] = _number(val, ln, col, integer=key in ("n_x", "n_t"))
    R_inv = grid["R_inv"]

    # blocks
    b = raw["blocks"]
    if "k" in b:
        val, ln, col, _ = b["k"]
        k = _number(val, ln, col, integer=True)
    else:
        k = 1
    if not 1 <= k <= 9:
        raise ParseError("k must lie in 1..9", b["k"][1] if "k" in b else 1, 1)
    orders = {}
    for key in ("s", "t"):
        if key in b:
            val, ln, col, _ = b[key]
            orders[key] = _number_list(val, ln, col)
            if len(orders[key]) != k:
                raise ParseError(f"{key} needs {k} entries", ln, col)
        else:
            orders[key] = None
    blocks = {}
    for key, (val, ln, col, kcol) in b.items():
        if key in ("k", "s", "t"):
            continue
        m = _BLOCK.match(key)
        if not m:
            raise ParseError(f"unknown blocks key {key!r}", ln, kcol)
        if m.group(1) is None:
            if k != 1:
                raise ParseError("plain 'a' is only allowed for k = 1", ln, kcol)
            i = j = 0
        else:
            i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
            if not (0 <= i < k and 0 <= j < k):
                raise ParseError(f"block {key} outside the {k}x{k} layout", ln, kcol)
        if (i, j) in blocks:
            raise ParseError(f"block ({i + 1},{j + 1}) given twice", ln, kcol)
        ast = parse_expression(val, ln, col, R_inv=R_inv)
        if ast == Num(0.0):
            continue
        blocks[(i, j)] = BlockExpr(i, j, val, ast, ln)
    if not blocks:
        raise ParseError("no operator blocks given", 1, 1)
    if orders["s"] is None:
        orders["s"] = [0.0] * k
    if orders["t"] is None:
        if k != 1:
            raise ParseError("t orders are required for systems", 1, 1)
        ast = blocks[(0, 0)].ast if (0, 0) in blocks else None
        orders["t"] = [symbol_from_ast(ast).order if ast is not None else 0.0]

    # options
    opts = {}
    for key, (val, ln, col, kcol) in raw["options"].items():
        if key not in OPTION_KEYS:
            raise ParseError(f"unknown option {key!r}", ln, kcol)
        if key == "tau_grid":
            lo, hi, n = _number_list(val, ln, col)
            if n != int(n) or n < 2 or not lo < hi:
                raise ParseError("tau_grid is 'lo, hi, n' with lo < hi and n >= 2", ln, col)
            opts[key] = [lo, hi, int(n)]
        else:
            opts[key] = _number(val, ln, col, integer=key in ("tau_points", "N_order"))

    # submanifold
    sub = {}
    for key, (val, ln, col, kcol) in raw["submanifold"].items():
        if key == "sites":
            sub["sites"] = _number_list(val, ln, col, integer=True)
            if any(v < 0 or v >= grid["n_x"] for v in sub["sites"]):
                raise ParseError("site index outside the link grid", ln, col)
        elif key == "normal":
            nv = _number_list(val, ln, col)
            if len(nv) != 2 or abs(np.hypot(*nv) - 1) > 1e-12:
                raise ParseError("normal must be a unit 2-vector", ln, col)
            sub["normal"] = nv
        else:
            raise ParseError(f"unknown submanifold key {key!r}", ln, kcol)

    return OperatorSpecFile(grid, k, tuple(orders["s"]), tuple(orders["t"]), blocks, opts, sub, name)


def read_spec(path) -> OperatorSpecFile:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stem = str(path).replace("\\", "/").rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return parse_spec(text, name=stem)


def format_spec(spec: OperatorSpecFile) -> str:
    """Canonical text of a parsed spec (expressions pretty-printed)."""
    g = spec.grid
    lines = ["[grid]"]
    for key in GRID_KEYS:
        v = g[key]
        lines.append(f"{key} = {v if isinstance(v, int) else repr(float(v))}")
    lines += ["", "[blocks]", f"k = {spec.k}",
              "s = " + ", ".join(repr(float(v)) for v in spec.s),
              "t = " + ", ".join(repr(float(v)) for v in spec.t)]
    for (i, j) in sorted(spec.blocks):
        lines.append(f"a{i + 1}{j + 1} = {pretty(spec.blocks[(i, j)].ast)}")
    if spec.options:
        lines += ["", "[options]"]
        for key, v in spec.options.items():
            lines.append(f"{key} = " + (", ".join(str(x) for x in v) if isinstance(v, list) else str(v)))
    if spec.submanifold:
        lines += ["", "[submanifold]"]
        for key, v in spec.submanifold.items():
            lines.append(f"{key} = " + ", ".join(str(x) for x in v))
    return "\n".join(lines) + "\n"
