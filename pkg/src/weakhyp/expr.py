"""Coefficient expressions in the time variable ``t``.

A small closed grammar of real functions of ``t`` with exact Taylor-mode
differentiation.  Canonical text form::

    expr   := ['-'] term (('+' | '-') term)*
    term   := factor ('*' factor)*
    factor := base ('^' number)?
    base   := number | 't' | 'abs(t)' | 'sin(' expr ')' | 'cos(' expr ')'
            | '(' expr ')'

``abs(t)^p`` is the only node allowed a non-integer exponent; every other
power must be a non-negative integer.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AbsPow",
    "Const",
    "Cos",
    "CoeffExpr",
    "ExprSyntaxError",
    "IntPow",
    "Product",
    "Sin",
    "SingularPointError",
    "Sum",
    "TVar",
    "parse_coeff_expr",
]


class ExprSyntaxError(ValueError):
    """Raised on malformed expression text; ``pos`` is the 0-based offset."""

    def __init__(self, message, text, pos):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.text = text
        self.pos = pos


class SingularPointError(ValueError):
    """A derivative was requested at a kink of ``abs(t)^p`` with ``p <= k``."""

    def __init__(self, t, order, exponent):
        super().__init__(
            f"derivative of order {order} undefined at t={t} "
            f"(abs(t)^{exponent} kink)"
        )
        self.t = t
        self.order = order
        self.exponent = exponent


def _fmt_number(x):
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _zeros_like(t, n):
    if np.ndim(t) == 0:
        return [0.0] * n
    return [np.zeros(np.shape(t)) for _ in range(n)]


def _mul_series(a, b):
    n = len(a)
    return [sum(a[i] * b[k - i] for i in range(k + 1)) for k in range(n)]


class CoeffExpr:
    """Base class of expression nodes.

    Nodes are immutable and compare structurally.  ``taylor(t, order)``
    returns the normalized Taylor coefficients ``f^(k)(t)/k!`` for
    ``k = 0..order``; ``t`` may be a float or a numpy array.
    """

    precedence = 100

    def __call__(self, t):
        return self.evaluate(t)

    def evaluate(self, t):
        return self.taylor(t, 0)[0]

    def derivative(self, t, k):
        """Exact ``k``-th derivative at ``t``."""
        return self.taylor(t, k)[k] * math.factorial(k)

    def taylor(self, t, order):
        raise NotImplementedError

    def kink_order(self):
        """Smallest derivative order that is undefined at ``t = 0``.

        ``math.inf`` for expressions that are smooth everywhere.
        """
        return min((c.kink_order() for c in self.children()), default=math.inf)

    def children(self):
        return ()

    def is_constant(self):
        return all(c.is_constant() for c in self.children())

    def __str__(self):
        return self.to_text()

    def to_text(self):
        raise NotImplementedError


@dataclass(frozen=True, eq=True)
class Const(CoeffExpr):
    value: float

    def taylor(self, t, order):
        out = _zeros_like(t, order + 1)
        out[0] = out[0] + self.value
        return out

    def is_constant(self):
        return True

    def to_text(self):
        if self.value < 0:
            return f"(-{_fmt_number(-self.value)})"
        return _fmt_number(self.value)


@dataclass(frozen=True, eq=True)
class TVar(CoeffExpr):
    def taylor(self, t, order):
        out = _zeros_like(t, order + 1)
        out[0] = out[0] + t
        if order >= 1:
            out[1] = out[1] + 1.0
        return out

    def is_constant(self):
        return False

    def to_text(self):
        return "t"


@dataclass(frozen=True, eq=True)
class AbsPow(CoeffExpr):
    """``|t|^p`` with ``p > 0``."""

    p: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError(f"abs(t) exponent must be positive, got {self.p}")

    def kink_order(self):
        # derivatives of order k < p vanish at 0; order k >= p is a kink
        return math.ceil(self.p)

    def is_constant(self):
        return False

    def taylor(self, t, order):
        p = self.p
        binom = [1.0]
        for i in range(1, order + 1):
            binom.append(binom[-1] * (p - i + 1) / i)
        if np.ndim(t) == 0:
            t = float(t)
            if t == 0.0:
                if order >= p:
                    raise SingularPointError(0.0, order, p)
                return [0.0] * (order + 1)
            a = abs(t) ** p
            return [binom[i] * a / t**i for i in range(order + 1)]
        t = np.asarray(t, dtype=float)
        zero = t == 0.0
        if order >= p and np.any(zero):
            raise SingularPointError(0.0, order, p)
        safe = np.where(zero, 1.0, t)
        a = np.where(zero, 0.0, np.abs(safe) ** p)
        return [binom[i] * a / safe**i for i in range(order + 1)]

    def to_text(self):
        if self.p == 1:
            return "abs(t)"
        return f"abs(t)^{_fmt_number(self.p)}"


@dataclass(frozen=True, eq=True)
class Sum(CoeffExpr):
    terms: tuple
    signs: tuple

    precedence = 1

    def children(self):
        return self.terms

    def taylor(self, t, order):
        out = _zeros_like(t, order + 1)
        for sgn, term in zip(self.signs, self.terms):
            jet = term.taylor(t, order)
            out = [o + sgn * j for o, j in zip(out, jet)]
        return out

    def to_text(self):
        parts = []
        for i, (sgn, term) in enumerate(zip(self.signs, self.terms)):
            s = term.to_text()
            if isinstance(term, Sum):
                s = f"({s})"
            if i == 0:
                parts.append(s if sgn > 0 else f"-{s}")
            else:
                parts.append(f" + {s}" if sgn > 0 else f" - {s}")
        return "".join(parts)


@dataclass(frozen=True, eq=True)
class Product(CoeffExpr):
    factors: tuple

    precedence = 2

    def children(self):
        return self.factors

    def taylor(self, t, order):
        out = self.factors[0].taylor(t, order)
        for f in self.factors[1:]:
            out = _mul_series(out, f.taylor(t, order))
        return out

    def to_text(self):
        parts = []
        for f in self.factors:
            s = f.to_text()
            if isinstance(f, (Sum, Product)):
                s = f"({s})"
            parts.append(s)
        return "*".join(parts)


@dataclass(frozen=True, eq=True)
class IntPow(CoeffExpr):
    base: CoeffExpr
    n: int

    precedence = 3

    def children(self):
        return (self.base,)

    def taylor(self, t, order):
        out = _zeros_like(t, order + 1)
        out[0] = out[0] + 1.0
        if self.n == 0:
            return out
        b = self.base.taylor(t, order)
        n = self.n
        # binary exponentiation on truncated series
        while n:
            if n & 1:
                out = _mul_series(out, b)
            n >>= 1
            if n:
                b = _mul_series(b, b)
        return out

    def to_text(self):
        s = self.base.to_text()
        if not isinstance(self.base, (TVar, Sin, Cos)) and not (
            isinstance(self.base, Const) and self.base.value >= 0
        ):
            s = f"({s})"
        return f"{s}^{self.n}"


def _sin_cos_series(u):
    n = len(u)
    s = [np.sin(u[0])] + [None] * (n - 1)
    c = [np.cos(u[0])] + [None] * (n - 1)
    for k in range(1, n):
        s[k] = sum(j * u[j] * c[k - j] for j in range(1, k + 1)) / k
        c[k] = -sum(j * u[j] * s[k - j] for j in range(1, k + 1)) / k
    return s, c


@dataclass(frozen=True, eq=True)
class Sin(CoeffExpr):
    arg: CoeffExpr

    def children(self):
        return (self.arg,)

    def taylor(self, t, order):
        return _sin_cos_series(self.arg.taylor(t, order))[0]

    def to_text(self):
        return f"sin({self.arg.to_text()})"


@dataclass(frozen=True, eq=True)
class Cos(CoeffExpr):
    arg: CoeffExpr

    def children(self):
        return (self.arg,)

    def taylor(self, t, order):
        return _sin_cos_series(self.arg.taylor(t, order))[1]

    def to_text(self):
        return f"cos({self.arg.to_text()})"


# ---------------------------------------------------------------------------
# parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]+)|(?P<op>[-+*^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", text, start)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.next()
        if val != value:
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end'!r}", self.text, pos)

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(msg, self.text, tok[2])

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        signs, terms = [], []
        sign = 1
        if self.peek()[1] == "-":
            self.next()
            sign = -1
        terms.append(self.term())
        signs.append(sign)
        while self.peek()[1] in ("+", "-"):
            op = self.next()[1]
            terms.append(self.term())
            signs.append(1 if op == "+" else -1)
        if len(terms) == 1 and signs[0] == 1:
            return terms[0]
        return Sum(tuple(terms), tuple(signs))

    def term(self):
        factors = [self.factor()]
        while self.peek()[1] == "*":
            self.next()
            factors.append(self.factor())
        if len(factors) == 1:
            return factors[0]
        return Product(tuple(factors))

    def factor(self):
        base_tok = self.peek()
        base, is_abs = self.base()
        if self.peek()[1] != "^":
            return base
        self.next()
        kind, val, pos = self.next()
        if kind != "num":
            raise ExprSyntaxError("exponent must be a number", self.text, pos)
        p = float(val)
        if is_abs:
            if not p > 0:
                raise ExprSyntaxError("abs(t) exponent must be positive", self.text, pos)
            return AbsPow(p)
        if not p.is_integer():
            raise ExprSyntaxError(
                "non-integer exponent is only allowed on abs(t)", self.text, pos
            )
        return IntPow(base, int(p))

    def base(self):
        kind, val, pos = self.next()
        if kind == "num":
            return Const(float(val)), False
        if kind == "name":
            if val == "t":
                return TVar(), False
            if val == "abs":
                self.expect("(")
                k2, v2, p2 = self.next()
                if v2 != "t":
                    raise ExprSyntaxError("abs() accepts only t", self.text, p2)
                self.expect(")")
                return AbsPow(1.0), True
            if val in ("sin", "cos"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return (Sin(arg) if val == "sin" else Cos(arg)), False
            raise ExprSyntaxError(f"unknown name {val!r}", self.text, pos)
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node, False
        raise ExprSyntaxError(f"unexpected token {val or 'end'!r}", self.text, pos)


def parse_coeff_expr(text):
    """Parse canonical expression text into a :class:`CoeffExpr` tree.

    >>> parse_coeff_expr("abs(t)^0.5")(0.25)
    0.5
    """
    if isinstance(text, (int, float)):
        return Const(float(text))
    return _Parser(str(text)).parse()
