"""Expression grammar for symbol definitions.

::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Names are the variables ``x, t, xi, tau``, the constants ``pi`` and ``i``,
and the functions ``sqrt, exp, sin, cos, bump(t, a, b)`` and
``dbump(t, a, b, n)`` (``n``-th t-derivative of ``bump``). The variable
``t`` may only appear as the first argument of ``bump``/``dbump``, which
keeps every t-dependence inside an explicit window ``[a, b]``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("x", "t", "xi", "tau")
CONSTANTS = {"pi": math.pi, "i": 1j}
FUNCTIONS = {"sqrt": 1, "exp": 1, "sin": 1, "cos": 1, "bump": 3, "dbump": 4}
MAX_BUMP_DERIVATIVE = 4


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 1, col: int = 1):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(f"line {line}, column {col}: {message}")


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


# ---------------------------------------------------------------------------
# tokenizer / parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)"
                    r"|(?P<op>[-+*/^(),]))")


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str, line: int = 1, col0: int = 1):
    toks = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ParseError(f"unexpected character {text[bad]!r}", line, col0 + bad)
        kind = m.lastgroup
        start = m.start(kind)
        toks.append(_Tok(kind, m.group(kind), line, col0 + start))
        pos = m.end()
    toks.append(_Tok("end", "", line, col0 + len(text.rstrip())))
    return toks


class _Parser:
    def __init__(self, text, line=1, col0=1):
        self.toks = _tokenize(text, line, col0)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, text=None):
        tok = self.toks[self.i]
        if text is not None and tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r}", tok.line, tok.col)
        return node

    def expr(self):
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            node = Bin(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            node = Bin(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok.text == "-":
            self.take()
            return Neg(self.unary())
        if tok.text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().text == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "name":
            name = tok.text
            if self.peek().text == "(":
                if name not in FUNCTIONS:
                    raise ParseError(f"unknown function {name!r}", tok.line, tok.col)
                self.take("(")
                args = [self.expr()]
                while self.peek().text == ",":
                    self.take()
                    args.append(self.expr())
                self.take(")")
                if len(args) != FUNCTIONS[name]:
                    raise ParseError(f"{name} takes {FUNCTIONS[name]} arguments, got {len(args)}",
                                     tok.line, tok.col)
                return Call(name, tuple(args))
            if name in VARIABLES:
                return Var(name)
            if name in CONSTANTS:
                return Const(name)
            if name in FUNCTIONS:
                raise ParseError(f"function {name!r} needs arguments", tok.line, tok.col)
            raise ParseError(f"unknown identifier {name!r}", tok.line, tok.col)
        if tok.text == "(":
            node = self.expr()
            self.take(")")
            return node
        raise ParseError(f"unexpected {tok.text or 'end of input'!r}", tok.line, tok.col)


def parse_expression(text: str, line: int = 1, col0: int = 1, R_inv: float | None = None):
    """Parse and validate one expression."""
    node = _Parser(text, line, col0).parse()
    _check_t(node, line, col0)
    _check_bumps(node, line, col0, R_inv)
    return node


def _walk(node):
    yield node
    if isinstance(node, Neg):
        yield from _walk(node.arg)
    elif isinstance(node, Bin):
        yield from _walk(node.left)
        yield from _walk(node.right)
    elif isinstance(node, Call):
        for a in node.args:
            yield from _walk(a)


def _check_t(node, line, col0):
    def visit(n, allowed):
        if isinstance(n, Var) and n.name == "t" and not allowed:
            raise ParseError("t must appear inside bump(...)", line, col0)
        if isinstance(n, Neg):
            visit(n.arg, False)
        elif isinstance(n, Bin):
            visit(n.left, False)
            visit(n.right, False)
        elif isinstance(n, Call):
            for k, a in enumerate(n.args):
                ok = n.fn in ("bump", "dbump") and k == 0
                if ok and a != Var("t"):
                    raise ParseError(f"first argument of {n.fn} must be t", line, col0)
                visit(a, ok)

    visit(node, False)


def _const_value(node):
    if any(isinstance(n, Var) for n in _walk(node)):
        return None
    v = evaluate(node, {})
    v = complex(np.asarray(v))
    return v.real if v.imag == 0 else None


def _check_bumps(node, line, col0, R_inv):
    for n in _walk(node):
        if isinstance(n, Call) and n.fn in ("bump", "dbump"):
            a, b = _const_value(n.args[1]), _const_value(n.args[2])
            if a is None or b is None:
                raise ParseError(f"{n.fn} window ends must be real constants", line, col0)
            if not a < b:
                raise ParseError(f"{n.fn} window [{a:g}, {b:g}] is empty", line, col0)
            if R_inv is not None and not (-R_inv < a and b < R_inv):
                raise ParseError(f"{n.fn} window [{a:g}, {b:g}] must lie inside (-R_inv, R_inv) = "
                                 f"({-R_inv:g}, {R_inv:g})", line, col0)
            if n.fn == "dbump":
                k = _const_value(n.args[3])
                if k is None or k != int(k) or not 0 <= k <= MAX_BUMP_DERIVATIVE:
                    raise ParseError(f"dbump order must be an integer in 0..{MAX_BUMP_DERIVATIVE}",
                                     line, col0)


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def pretty(node) -> str:
    """Text that reparses to the same tree."""
    return _pp(node, 0)


def _pp(n, ctx):
    if isinstance(n, Num):
        v = float(n.value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    if isinstance(n, (Const, Var)):
        return n.name
    if isinstance(n, Neg):
        s = "-" + _pp(n.arg, 3)
        return f"({s})" if ctx > 3 else s
    if isinstance(n, Call):
        return f"{n.fn}(" + ", ".join(_pp(a, 0) for a in n.args) + ")"
    p = _PREC[n.op]
    if n.op == "^":
        s = f"{_pp(n.left, 5)}^{_pp(n.right, 3)}"
    else:
        s = f"{_pp(n.left, p)} {n.op} {_pp(n.right, p + 1)}"
    return f"({s})" if p < ctx else s


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _jet_bump(s, order):
    """Derivatives ``0..order`` of ``g(s) = e^4 exp(-1/(s(1-s)))`` on ``0 < s < 1``."""
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    ss = np.where(inside, s, 0.5)
    n = order + 1
    # truncated Taylor arithmetic in the offset variable
    w = np.zeros((n,) + ss.shape)
    w[0] = ss - ss * ss
    if n > 1:
        w[1] = 1 - 2 * ss
    if n > 2:
        w[2] = -1.0
    inv = np.zeros_like(w)  # 1/w
    inv[0] = 1.0 / w[0]
    for k in range(1, n):
        acc = sum(w[j] * inv[k - j] for j in range(1, k + 1))
        inv[k] = -acc / w[0]
    phi = -inv
    g = np.zeros_like(w)  # exp(phi)
    g[0] = np.exp(phi[0] + 4.0)
    for k in range(1, n):
        g[k] = sum(j * phi[j] * g[k - j] for j in range(1, k + 1)) / k
    out = np.array([math.factorial(k) * g[k] for k in range(n)])
    return np.where(inside[None], out, 0.0)


def bump(t, a, b, order: int = 0):
    """Smooth window on ``[a, b]`` with peak 1 at the centre, or its ``order``-th derivative."""
    ln = b - a
    s = (np.asarray(t, dtype=float) - a) / ln
    return _jet_bump(s, order)[order] / ln ** order


def evaluate(node, env: dict):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Const):
        return CONSTANTS[node.name]
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Neg):
        return -evaluate(node.arg, env)
    if isinstance(node, Bin):
        a = evaluate(node.left, env)
        b = evaluate(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        if isinstance(b, (int, float)) and float(b).is_integer():
            return a ** int(b)
        return np.power(a if np.iscomplexobj(a) or np.iscomplexobj(b) else np.asarray(a, float) + 0j, b)
    fn = node.fn
    if fn in ("bump", "dbump"):
        t = evaluate(node.args[0], env)
        a = float(np.real(evaluate(node.args[1], env)))
        b = float(np.real(evaluate(node.args[2], env)))
        k = 0 if fn == "bump" else int(np.real(evaluate(node.args[3], env)))
        return bump(t, a, b, k)
    v = evaluate(node.args[0], env)
    if fn == "sqrt":
        if np.iscomplexobj(v) or np.any(np.asarray(v) < 0):
            return np.sqrt(np.asarray(v, dtype=complex))
        return np.sqrt(v)
    return {"exp": np.exp, "sin": np.sin, "cos": np.cos}[fn](v)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------


def variables(node) -> set:
    return {n.name for n in _walk(node) if isinstance(n, Var)}


def tau_degree(node):
    """Polynomial degree in ``tau`` or ``None`` when not polynomial in ``tau``."""
    if isinstance(node, (Num, Const)):
        return 0
    if isinstance(node, Var):
        return 1 if node.name == "tau" else 0
    if isinstance(node, Neg):
        return tau_degree(node.arg)
    if isinstance(node, Call):
        return 0 if all(tau_degree(a) == 0 for a in node.args) else None
    dl, dr = tau_degree(node.left), tau_degree(node.right)
    if dl is None or dr is None:
        return None
    if node.op in ("+", "-"):
        return max(dl, dr)
    if node.op == "*":
        return dl + dr
    if node.op == "/":
        return dl if dr == 0 else None
    # power
    if dr != 0:
        return None
    if dl == 0:
        return 0
    e = _const_value(node.right)
    if e is not None and float(e).is_integer() and e >= 0:
        return int(dl * e)
    return None


def bump_windows(node) -> list:
    out = []
    for n in _walk(node):
        if isinstance(n, Call) and n.fn in ("bump", "dbump"):
            out.append((_const_value(n.args[1]), _const_value(n.args[2])))
    return out


def _simp(n):
    if isinstance(n, Bin):
        l, r = n.left, n.right
        if isinstance(l, Num) and isinstance(r, Num) and n.op in "+-*":
            v = float(evaluate(n, {}))
            return Num(v) if v >= 0 else Neg(Num(-v))
        if n.op == "+":
            if l == Num(0.0):
                return r
            if r == Num(0.0):
                return l
        if n.op == "-":
            if r == Num(0.0):
                return l
            if l == Num(0.0):
                return Neg(r)
        if n.op == "*":
            if Num(0.0) in (l, r):
                return Num(0.0)
            if l == Num(1.0):
                return r
            if r == Num(1.0):
                return l
        if n.op == "/" and l == Num(0.0):
            return Num(0.0)
    if isinstance(n, Neg) and n.arg == Num(0.0):
        return Num(0.0)
    return n


def derivative(node, var: str):
    """Symbolic ``d node / d var``."""
    d = lambda n: derivative(n, var)  # noqa: E731
    if isinstance(node, (Num, Const)):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0 if node.name == var else 0.0)
    if isinstance(node, Neg):
        return _simp(Neg(d(node.arg)))
    if isinstance(node, Bin):
        l, r = node.left, node.right
        if node.op in ("+", "-"):
            return _simp(Bin(node.op, d(l), d(r)))
        if node.op == "*":
            return _simp(Bin("+", _simp(Bin("*", d(l), r)), _simp(Bin("*", l, d(r)))))
        if node.op == "/":
            num = _simp(Bin("-", _simp(Bin("*", d(l), r)), _simp(Bin("*", l, d(r)))))
            return _simp(Bin("/", num, Bin("^", r, Num(2.0))))
        # power: constant exponent or general
        if var not in variables(r):
            dl = d(l)
            if dl == Num(0.0):
                return Num(0.0)
            expo = _simp(Bin("-", r, Num(1.0)))
            return _simp(Bin("*", _simp(Bin("*", r, Bin("^", l, expo))), dl))
        # d(l^r) = l^r (r' ln l + r l'/l); ln is expressed through the grammar-free helper
        raise ParseError("derivative of a variable exponent is not supported")
    fn = node.fn
    if fn in ("bump", "dbump"):
        if var != "t":
            return Num(0.0)
        k = 0 if fn == "bump" else int(np.real(evaluate(node.args[3], {})))
        if k + 1 > MAX_BUMP_DERIVATIVE:
            raise ParseError("bump derivative order exceeds the supported depth")
        return Call("dbump", (node.args[0], node.args[1], node.args[2], Num(float(k + 1))))
    u = node.args[0]
    du = d(u)
    if du == Num(0.0):
        return Num(0.0)
    if fn == "sqrt":
        outer = Bin("/", Num(0.5), node)
    elif fn == "exp":
        outer = node
    elif fn == "sin":
        outer = Call("cos", (u,))
    else:
        outer = Neg(Call("sin", (u,)))
    return _simp(Bin("*", outer, du))
