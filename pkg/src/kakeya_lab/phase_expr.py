"""Phase-function expressions: parsing, exact differentiation, evaluation.

A phase is written in a small language over the variables
``x1..x{d-1}, t, y1..y{d-1}`` with ``+ - * / ^`` (integer exponents only)
and the functions ``sin cos exp log sqrt``::

    >>> phi = PhaseFunction.from_source("x1*y1 + x2*y2 + t*y1*y2 + (t^2/2)*y1^2", d=3)
    >>> phi.evaluate({"x1": 1, "x2": 1, "t": 1, "y1": 1, "y2": 1})
    3.5

Trees are immutable. All construction goes through the folding constructors
(:func:`add`, :func:`mul`, ...), which fold literal subtrees and the trivial
identities ``0+a``, ``1*a``, ``a^1`` but perform no other rewriting.
"""
from __future__ import annotations

import json
import math
import re
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Func",
    "ParseError", "DomainError", "FUNCTIONS",
    "add", "sub", "mul", "div", "neg", "power", "func",
    "variable_names", "parse_phase", "to_str", "differentiate", "evaluate",
    "compile_expr", "PhasePoint", "PhaseFunction", "deriv_tensor", "load_phase_spec",
]

Number = Union[Fraction, float]
FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")
MAX_ORDER = 4


class ParseError(ValueError):
    """Malformed source text; ``position`` is the 0-based character offset."""

    def __init__(self, message: str, position: int, source: str = ""):
        self.position = position
        self.source = source
        super().__init__(f"{message} at position {position}")


class DomainError(ArithmeticError):
    """Evaluation left the domain of a subexpression (log/sqrt/division/overflow)."""

    def __init__(self, message: str, subexpr: "Expr"):
        self.subexpr = subexpr
        super().__init__(f"{message}: {to_str(subexpr)}")


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Expr:
    def __str__(self) -> str:
        return to_str(self)


@dataclass(frozen=True)
class Const(Expr):
    value: Number


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Func(Expr):
    name: str
    arg: Expr


ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def _is_const(e: Expr, value=None) -> bool:
    if not isinstance(e, Const):
        return False
    return value is None or e.value == value


# ----------------------------------------------------------- folding constructors


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return neg(b)
    return Sub(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    # collect literal coefficients: c1 * (c2 * r) -> (c1*c2) * r
    if isinstance(a, Const) and isinstance(b, Mul) and isinstance(b.left, Const):
        return mul(Const(a.value * b.left.value), b.right)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Const) and b.value == 0:
        return Div(a, b)  # left for evaluation to report
    if isinstance(a, Const) and isinstance(b, Const):
        if isinstance(a.value, Fraction) and isinstance(b.value, Fraction):
            return Const(a.value / b.value)
        return Const(float(a.value) / float(b.value))
    if _is_const(b, 1):
        return a
    if _is_const(a, 0):
        return ZERO
    if isinstance(b, Const) and isinstance(a, Mul) and isinstance(a.left, Const):
        return mul(div(a.left, b), a.right)
    return Div(a, b)


def power(a: Expr, n: int) -> Expr:
    n = int(n)
    if n == 0:
        return ONE
    if n == 1:
        return a
    if isinstance(a, Const) and not (a.value == 0 and n < 0):
        if isinstance(a.value, Fraction):
            return Const(a.value ** n)
        return Const(float(a.value) ** n)
    return Pow(a, n)


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin, "cos": math.cos, "exp": math.exp, "log": math.log, "sqrt": math.sqrt,
}


def func(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if isinstance(a, Const):
        v = float(a.value)
        if name == "log" and v <= 0 or name == "sqrt" and v < 0:
            return Func(name, a)
        try:
            r = _SCALAR_FUNCS[name](v)
        except OverflowError:
            return Func(name, a)
        if math.isfinite(r):
            return Const(r)
    return Func(name, a)


# ------------------------------------------------------------------------ parsing


def variable_names(d: int) -> tuple[str, ...]:
    """Ordered variable names: x1..x{d-1}, t, y1..y{d-1}."""
    if d < 2:
        raise ValueError("dimension d must be at least 2")
    xs = tuple(f"x{i}" for i in range(1, d))
    ys = tuple(f"y{i}" for i in range(1, d))
    return xs + ("t",) + ys


_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {src[pos]!r}", pos, src)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src: str, d: int):
        self.src = src
        self.d = d
        self.names = set(variable_names(d))
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ParseError(f"expected {value!r}, found {found}", pos, self.src)

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", pos, self.src)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self) -> Expr:
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        e = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            e = power(e, self.exponent())
        return e

    def exponent(self) -> int:
        kind, text, pos = self.peek()
        paren = kind == "op" and text == "("
        if paren:
            self.take()
        sign = 1
        kind, text, pos = self.peek()
        if kind == "op" and text in "+-":
            self.take()
            sign = -1 if text == "-" else 1
            kind, text, pos = self.peek()
        if kind != "num" or not text.isdigit():
            raise ParseError("exponent must be an integer literal", pos, self.src)
        self.take()
        if paren:
            self.expect(")")
        return sign * int(text)

    def atom(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            if re.fullmatch(r"\d+", text):
                return Const(Fraction(int(text)))
            return Const(float(text))
        if kind == "ident":
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return func(text, arg)
            if text in self.names:
                return Var(text)
            m = re.fullmatch(r"([xy])(\d+)", text)
            if m:
                raise ParseError(
                    f"variable index out of range: {text} (d={self.d}, "
                    f"{m.group(1)} has {self.d - 1} coordinates)", pos, self.src)
            raise ParseError(f"unknown identifier {text!r}", pos, self.src)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"unexpected {found}", pos, self.src)


def parse_phase(src: str, d: int) -> Expr:
    """Parse ``src`` into an expression over the variables of dimension ``d``."""
    if not isinstance(src, str) or not src.strip():
        raise ParseError("empty expression", 0, src or "")
    variable_names(d)
    return _Parser(src, d).parse()


# ----------------------------------------------------------------------- printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _const_text(v: Number) -> tuple[str, int]:
    if isinstance(v, Fraction):
        if v < 0:
            return f"(-{_const_text(-v)[0]})", 5
        if v.denominator == 1:
            return str(v.numerator), 5
        return f"{v.numerator}/{v.denominator}", 2
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot print non-finite literal {v}")
    if v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
        return f"(-{repr(-v)})", 5
    return repr(v), 5


def _fmt(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        return _const_text(e.value)
    if isinstance(e, Var):
        return e.name, 5
    if isinstance(e, Func):
        return f"{e.name}({_fmt(e.arg)[0]})", 5
    if isinstance(e, Neg):
        s, p = _fmt(e.arg)
        return ("-" + (f"({s})" if p <= 3 else s)), 3
    if isinstance(e, Pow):
        s, p = _fmt(e.base)
        base = s if p == 5 else f"({s})"
        exp = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return f"{base}^{exp}", 4
    op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
    prec = _PREC[type(e)]
    ls, lp = _fmt(e.left)
    rs, rp = _fmt(e.right)
    if lp < prec:
        ls = f"({ls})"
    if rp <= prec:
        rs = f"({rs})"
    return f"{ls} {op} {rs}", prec


def to_str(e: Expr) -> str:
    """Render ``e`` in the input language; ``parse_phase(to_str(e))`` rebuilds ``e``."""
    return _fmt(e)[0]


# ------------------------------------------------------------------ differentiation


def differentiate(e: Expr, var: str) -> Expr:
    """Exact derivative of ``e`` with respect to the variable named ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, var))
    if isinstance(e, Add):
        return add(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Sub):
        return sub(differentiate(e.left, var), differentiate(e.right, var))
    if isinstance(e, Mul):
        da = differentiate(e.left, var)
        db = differentiate(e.right, var)
        return add(mul(da, e.right), mul(e.left, db))
    if isinstance(e, Div):
        da = differentiate(e.left, var)
        db = differentiate(e.right, var)
        if _is_const(db, 0):
            return div(da, e.right)
        return div(sub(mul(da, e.right), mul(e.left, db)), power(e.right, 2))
    if isinstance(e, Pow):
        db = differentiate(e.base, var)
        return mul(mul(Const(Fraction(e.exponent)), power(e.base, e.exponent - 1)), db)
    if isinstance(e, Func):
        da = differentiate(e.arg, var)
        if _is_const(da, 0):
            return ZERO
        if e.name == "sin":
            outer = func("cos", e.arg)
        elif e.name == "cos":
            outer = neg(func("sin", e.arg))
        elif e.name == "exp":
            outer = e
        elif e.name == "log":
            return div(da, e.arg)
        else:  # sqrt
            return div(da, mul(Const(Fraction(2)), e))
        return mul(outer, da)
    raise TypeError(f"not an expression node: {e!r}")


# -------------------------------------------------------------------- evaluation


def _bad(mask) -> bool:
    return bool(np.any(mask))


def compile_expr(e: Expr, names: Sequence[str]) -> Callable[[Sequence], np.ndarray]:
    """Turn ``e`` into a closure over a positional environment.

    The returned callable takes a sequence of values (floats or broadcastable
    arrays) ordered like ``names`` and raises :class:`DomainError` instead of
    producing non-finite output.
    """
    index = {n: i for i, n in enumerate(names)}

    def build(node: Expr) -> Callable:
        if isinstance(node, Const):
            v = float(node.value)
            return lambda env: v
        if isinstance(node, Var):
            try:
                k = index[node.name]
            except KeyError:
                raise KeyError(f"variable {node.name!r} not in environment") from None
            return lambda env: env[k]
        if isinstance(node, Neg):
            fa = build(node.arg)
            return lambda env: -fa(env)
        if isinstance(node, Pow):
            fb = build(node.base)
            n = node.exponent

            def _pow(env):
                b = fb(env)
                if n < 0 and _bad(np.asarray(b) == 0):
                    raise DomainError("zero raised to a negative power", node)
                return np.power(b, float(n)) if n < 0 else b ** n
            return _pow
        if isinstance(node, Func):
            fa = build(node.arg)
            ufunc = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "log": np.log,
                     "sqrt": np.sqrt}[node.name]
            if node.name == "log":
                def _log(env):
                    a = fa(env)
                    if _bad(np.asarray(a) <= 0):
                        raise DomainError("log of a nonpositive value", node)
                    return ufunc(a)
                return _log
            if node.name == "sqrt":
                def _sqrt(env):
                    a = fa(env)
                    if _bad(np.asarray(a) < 0):
                        raise DomainError("sqrt of a negative value", node)
                    return ufunc(a)
                return _sqrt
            return lambda env: ufunc(fa(env))
        fl = build(node.left)
        fr = build(node.right)
        if isinstance(node, Add):
            return lambda env: fl(env) + fr(env)
        if isinstance(node, Sub):
            return lambda env: fl(env) - fr(env)
        if isinstance(node, Mul):
            return lambda env: fl(env) * fr(env)
        if isinstance(node, Div):
            def _div(env):
                den = fr(env)
                if _bad(np.asarray(den) == 0):
                    raise DomainError("division by zero", node)
                return fl(env) / den
            return _div
        raise TypeError(f"not an expression node: {node!r}")

    inner = build(e)

    def run(env: Sequence):
        with np.errstate(over="ignore", invalid="ignore"):
            out = inner(env)
        if not np.all(np.isfinite(out)):
            raise DomainError("non-finite value", e)
        return out

    return run


def evaluate(e: Expr, point: Mapping[str, float]):
    """Evaluate ``e`` at a named assignment; missing free variables are an error."""
    names = tuple(point.keys())
    values = [point[n] for n in names]
    try:
        return compile_expr(e, names)(values)
    except KeyError as exc:
        raise KeyError(f"assignment does not cover {exc.args[0]}") from None


# ------------------------------------------------------------------ phase objects


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, t; y); fields may carry a leading batch axis."""

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return np.broadcast_shapes(self.x.shape[:-1], self.t.shape, self.y.shape[:-1])

    def env(self) -> list:
        return [self.x[..., i] for i in range(self.x.shape[-1])] + [self.t] + \
            [self.y[..., j] for j in range(self.y.shape[-1])]

    def with_x(self, x) -> "PhasePoint":
        return PhasePoint(x, self.t, self.y)

    def with_t(self, t) -> "PhasePoint":
        return PhasePoint(self.x, t, self.y)

    def with_y(self, y) -> "PhasePoint":
        return PhasePoint(self.x, self.t, y)


@dataclass(frozen=True, eq=False)
class PhaseFunction:
    """A phase phi(x, t; y) on B^{d-1} x B^1 x B^{d-1} of radius ``epsilon0``.

    Derivatives are memoised by sorted multi-index (mixed partials commute),
    so ``derivative("t", "y1")`` and ``derivative("y1", "t")`` share one entry.
    """

    d: int
    expr: Expr
    epsilon0: float = 0.25
    source: str | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        variable_names(self.d)
        if not self.epsilon0 > 0:
            raise ValueError("epsilon0 must be positive")

    @classmethod
    def from_source(cls, src: str, d: int, epsilon0: float = 0.25) -> "PhaseFunction":
        return cls(d, parse_phase(src, d), float(epsilon0), src)

    @property
    def names(self) -> tuple[str, ...]:
        return variable_names(self.d)

    def group(self, label: str) -> tuple[str, ...]:
        """Variable names for a group label: ``x``, ``t``, ``y``, ``X`` (x then t)
        or a single variable name."""
        d = self.d
        if label == "x":
            return self.names[: d - 1]
        if label == "y":
            return self.names[d:]
        if label == "X":
            return self.names[:d]
        if label in self.names:
            return (label,)
        raise ValueError(f"unknown variable group {label!r}")

    def _key(self, variables: Sequence[str]) -> tuple[int, ...]:
        idx = {n: i for i, n in enumerate(self.names)}
        try:
            return tuple(sorted(idx[v] for v in variables))
        except KeyError as exc:
            raise ValueError(f"unknown variable {exc.args[0]!r}") from None

    def derivative(self, *variables: str) -> Expr:
        """The mixed partial of ``expr`` with respect to ``variables``."""
        key = self._key(variables)
        if len(key) > MAX_ORDER:
            raise ValueError(f"derivative order {len(key)} exceeds {MAX_ORDER}")
        return self._derivative(key)[0]

    def _derivative(self, key: tuple[int, ...]):
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not key:
            e = self.expr
        else:
            e = differentiate(self._derivative(key[:-1])[0], self.names[key[-1]])
        entry = (e, compile_expr(e, self.names))
        with self._lock:
            return self._cache.setdefault(key, entry)

    def evaluator(self, *variables: str) -> Callable[[Sequence], np.ndarray]:
        key = self._key(variables)
        if len(key) > MAX_ORDER:
            raise ValueError(f"derivative order {len(key)} exceeds {MAX_ORDER}")
        return self._derivative(key)[1]

    def evaluate(self, point, *variables: str):
        """Value of the given partial (or of phi itself) at ``point``.

        ``point`` is a :class:`PhasePoint` or a name -> value mapping.
        """
        env = _env(self, point)
        shape = _env_shape(env)
        out = self.evaluator(*variables)(env)
        return np.broadcast_to(out, shape).copy() if shape else float(out)

    def to_spec(self) -> dict:
        return {"d": self.d, "phase": self.source or to_str(self.expr),
                "epsilon0": self.epsilon0}


def _env(phi: PhaseFunction, point) -> list:
    if isinstance(point, PhasePoint):
        if point.x.shape[-1] != phi.d - 1 or point.y.shape[-1] != phi.d - 1:
            raise ValueError(f"point does not match dimension d={phi.d}")
        return point.env()
    missing = [n for n in phi.names if n not in point]
    if missing:
        raise KeyError(f"assignment does not cover {', '.join(missing)}")
    return [np.asarray(point[n], dtype=float) for n in phi.names]


def _env_shape(env) -> tuple[int, ...]:
    return np.broadcast_shapes(*[np.shape(v) for v in env])


def deriv_tensor(phi: PhaseFunction, groups: Sequence[str], point) -> np.ndarray:
    """Tensor of mixed partials, one axis per entry of ``groups``.

    ``groups=("X", "y")`` gives the d x (d-1) matrix of d/dX_i d/dy_j phi;
    ``("t", "y", "y")`` gives d/dt of the y-Hessian, shape (1, d-1, d-1).
    A batched point puts its batch axes first.
    """
    if len(groups) > MAX_ORDER:
        raise ValueError(f"derivative order {len(groups)} exceeds {MAX_ORDER}")
    axes = [phi.group(g) for g in groups]
    env = _env(phi, point)
    batch = _env_shape(env)
    out = np.empty(batch + tuple(len(a) for a in axes))
    seen: dict[tuple[int, ...], np.ndarray] = {}
    for pos in product(*[range(len(a)) for a in axes]):
        variables = [axes[k][i] for k, i in enumerate(pos)]
        key = phi._key(variables)
        if key not in seen:
            seen[key] = np.broadcast_to(phi._derivative(key)[1](env), batch)
        out[(Ellipsis,) + pos] = seen[key]
    return out


def load_phase_spec(source: Union[str, Path, Mapping]) -> PhaseFunction:
    """Build a phase from a spec file path or an already-decoded mapping.

    Format: ``{"d": <int>, "phase": "<expression>", "epsilon0": <real, default 0.25>}``.
    """
    if isinstance(source, Mapping):
        spec = dict(source)
    else:
        spec = json.loads(Path(source).read_text())
    try:
        d = spec["d"]
        text = spec["phase"]
    except KeyError as exc:
        raise ValueError(f"phase spec missing key {exc.args[0]!r}") from None
    if not isinstance(d, int) or isinstance(d, bool):
        raise ValueError("phase spec 'd' must be an integer")
    eps = spec.get("epsilon0", 0.25)
    if not isinstance(eps, (int, float)) or eps <= 0:
        raise ValueError("phase spec 'epsilon0' must be a positive number")
    return PhaseFunction.from_source(text, d, float(eps))
