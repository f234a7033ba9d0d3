"""Arithmetic expressions for payoffs and boundary-region predicates.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | 'x' | 'y' | FUNC '(' expr (',' expr)* ')' | '(' expr ')'

``^`` binds tighter than unary minus and is right associative, so
``-2^2 == -4`` and ``2^3^2 == 512``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np

__all__ = [
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "Expr",
    "ParseError",
    "EvalError",
    "DivByZero",
    "NegativeSqrt",
    "PowDomainError",
    "TooFewNodes",
    "parse",
    "to_source",
    "evaluate",
    "evaluate_many",
    "variables",
    "lipschitz_on",
]

VARIABLES = ("x", "y")
FUNCTIONS = {"abs": (1, 1), "sqrt": (1, 1), "min": (2, None), "max": (2, None)}


@dataclass(frozen=True)
class Num:
    value: float
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    pos: int = field(default=0, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple
    pos: int = field(default=0, compare=False, repr=False)


Expr = Union[Num, Var, Neg, BinOp, Call]


class ParseError(ValueError):
    """Malformed expression text.

    ``offset`` is the byte offset of the offending token (``len(src)`` at end
    of input); ``expected`` is the set of tokens that would have been accepted.
    """

    def __init__(self, src: str, offset: int, expected: Iterable[str], found: str):
        self.src = src
        self.offset = offset
        self.expected = frozenset(expected)
        self.found = found
        exp = ", ".join(sorted(self.expected))
        super().__init__(f"at offset {offset}: expected one of {{{exp}}}, found {found}")


class EvalError(ArithmeticError):
    def __init__(self, msg: str, node: Expr):
        self.node = node
        self.offset = node.pos
        super().__init__(f"{msg} in '{to_source(node)}' (offset {node.pos})")


class DivByZero(EvalError, ZeroDivisionError):
    pass


class NegativeSqrt(EvalError):
    pass


class PowDomainError(EvalError):
    pass


class TooFewNodes(ValueError):
    pass


# --------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str  # 'num' | 'ident' | 'op' | 'end'
    text: str
    pos: int


def _tokenize(src: str) -> list[_Tok]:
    out = []
    i = 0
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ParseError(src, _byte_offset(src, i), {"number", "identifier", "operator"}, repr(src[i]))
        kind = m.lastgroup
        if kind != "ws":
            out.append(_Tok(kind, m.group(), _byte_offset(src, i)))
        i = m.end()
    out.append(_Tok("end", "", _byte_offset(src, len(src))))
    return out


def _byte_offset(src: str, char_index: int) -> int:
    return len(src[:char_index].encode("utf-8"))


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected) -> None:
        t = self.tok
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(self.src, t.pos, expected, found)

    def accept(self, text: str) -> _Tok | None:
        t = self.tok
        if t.kind == "op" and t.text == text:
            self.i += 1
            return t
        return None

    def expect(self, text: str) -> _Tok:
        t = self.accept(text)
        if t is None:
            self.fail({repr(text)})
        return t

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "end":
            self.fail({"end of input", "'+'", "'-'", "'*'", "'/'", "'^'"})
        return e

    def expr(self) -> Expr:
        left = self.term()
        while True:
            t = self.accept("+") or self.accept("-")
            if t is None:
                return left
            left = BinOp(t.text, left, self.term(), t.pos)

    def term(self) -> Expr:
        left = self.unary()
        while True:
            t = self.accept("*") or self.accept("/")
            if t is None:
                return left
            left = BinOp(t.text, left, self.unary(), t.pos)

    def unary(self) -> Expr:
        t = self.accept("-")
        if t is not None:
            return Neg(self.unary(), t.pos)
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        t = self.accept("^")
        if t is not None:
            return BinOp("^", base, self.unary(), t.pos)
        return base

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text), t.pos)
        if t.kind == "ident":
            if t.text in VARIABLES:
                self.i += 1
                return Var(t.text, t.pos)
            if t.text in FUNCTIONS:
                self.i += 1
                return self.call(t)
            self.fail(set(VARIABLES) | set(FUNCTIONS) | {"number", "'('"})
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        self.fail(set(VARIABLES) | set(FUNCTIONS) | {"number", "'('", "'-'"})

    def call(self, name: _Tok) -> Expr:
        self.expect("(")
        args = [self.expr()]
        while self.accept(","):
            args.append(self.expr())
        lo, hi = FUNCTIONS[name.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            self.fail({"')'"} if hi is not None and len(args) > hi else {"','"})
        self.expect(")")
        return Call(name.text, tuple(args), name.pos)


def parse(src: str) -> Expr:
    if not src or not src.strip():
        raise ParseError(src, 0, {"expression"}, "empty input")
    return _Parser(src).parse()


def to_source(e: Expr) -> str:
    """Fully parenthesized text that parses back to an equal tree."""
    if isinstance(e, Num):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_source(a) for a in e.args)})"
    raise TypeError(f"not an expression node: {e!r}")


def variables(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset({e.name})
    if isinstance(e, Neg):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Call):
        return frozenset().union(*(variables(a) for a in e.args))
    return frozenset()


# --------------------------------------------------------------------------
# evaluation


def _ev(e: Expr, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if isinstance(e, Num):
        return np.full(x.shape, e.value)
    if isinstance(e, Var):
        return x if e.name == "x" else y
    if isinstance(e, Neg):
        return -_ev(e.operand, x, y)
    if isinstance(e, BinOp):
        a = _ev(e.left, x, y)
        b = _ev(e.right, x, y)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if np.any(b == 0.0):
                raise DivByZero("division by zero", e)
            return a / b
        # '^': negative base needs an integral exponent
        if np.any((a < 0) & (b != np.floor(b))):
            raise PowDomainError("fractional power of a negative number", e)
        if np.any((a == 0) & (b < 0)):
            raise DivByZero("zero raised to a negative power", e)
        with np.errstate(over="ignore"):
            return np.power(a, b)
    if isinstance(e, Call):
        vals = [_ev(a, x, y) for a in e.args]
        if e.name == "abs":
            return np.abs(vals[0])
        if e.name == "sqrt":
            if np.any(vals[0] < 0):
                raise NegativeSqrt("square root of a negative number", e)
            return np.sqrt(vals[0])
        red = np.minimum if e.name == "min" else np.maximum
        out = vals[0]
        for v in vals[1:]:
            out = red(out, v)
        return out
    raise TypeError(f"not an expression node: {e!r}")


def evaluate_many(e: Expr, points) -> np.ndarray:
    """Evaluate at every row of ``points`` (shape ``(n, d)``, d in {1, 2}).

    In one dimension ``y`` is 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x = np.ascontiguousarray(pts[:, 0])
    y = np.ascontiguousarray(pts[:, 1]) if pts.shape[1] > 1 else np.zeros_like(x)
    return np.asarray(_ev(e, x, y), dtype=float)


def evaluate(e: Expr, point) -> float:
    p = np.asarray(point, dtype=float).reshape(1, -1)
    return float(evaluate_many(e, p)[0])


def lipschitz_on(e: Expr, nodes) -> float:
    """Largest difference quotient of ``e`` over all pairs of distinct nodes."""
    pts = np.atleast_2d(np.asarray(nodes, dtype=float))
    if pts.shape[0] < 2:
        raise TooFewNodes(f"need at least 2 nodes, got {pts.shape[0]}")
    vals = evaluate_many(e, pts)
    best = 0.0
    # row blocks keep memory bounded on large boundary sets
    for start in range(0, pts.shape[0], 512):
        blk = slice(start, start + 512)
        dist = np.sqrt(((pts[blk, None, :] - pts[None, :, :]) ** 2).sum(-1))
        diff = np.abs(vals[blk, None] - vals[None, :])
        ok = dist > 0
        if ok.any():
            best = max(best, float((diff[ok] / dist[ok]).max()))
    return best


def is_constant(e: Expr) -> bool:
    return not variables(e)


def constant_value(e: Expr) -> float:
    return evaluate(e, (0.0, 0.0)) if is_constant(e) else math.nan
