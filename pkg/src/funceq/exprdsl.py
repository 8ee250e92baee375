"""Small arithmetic expression language for F(x,y), H(u,v,x,y) and closed forms.

Grammar::

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?
    atom   := number | identifier | identifier "(" expr ("," expr)* ")" | "(" expr ")"

Expressions are parsed against a declared variable set and evaluated in IEEE
double precision, either one point at a time (:func:`evaluate`) or over numpy
arrays (:func:`vectorize`).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

F_VARS = frozenset({"x", "y"})
H_VARS = frozenset({"u", "v", "x", "y"})
Z_VARS = frozenset({"z"})

BUILTIN_ARITY = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "ln": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
    "pow": 2,
    "logmean": 2,
}

BINARY_OPS = ("+", "-", "*", "/", "^")


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class ExprError(ValueError):
    """Base class for all expression errors; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)


class LexError(ExprError):
    pass


class ExprSyntaxError(ExprError):
    pass


class UndeclaredVariableError(ExprError):
    def __init__(self, name: str, position: int | None = None):
        self.name = name
        super().__init__(f"undeclared variable {name!r}", position)


class ArityError(ExprError):
    pass


class EvalError(ArithmeticError):
    """Evaluation failed; ``index`` locates the offending element in vectorized mode."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class DomainError(EvalError):
    pass


class NonFiniteError(EvalError):
    pass


# ---------------------------------------------------------------------------
# Tokens
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # number | identifier | operator | lparen | rparen | comma
    lexeme: str
    position: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<identifier>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<operator>[-+*/^])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
    """,
    re.VERBOSE,
)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise LexError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            if kind == "number" and not math.isfinite(float(m.group())):
                raise LexError(f"number literal {m.group()!r} is not finite", pos)
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    return tokens


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expr", ...]


Expr = Union[Const, Var, Neg, BinOp, Call]


def variables_of(ast: Expr) -> set[str]:
    if isinstance(ast, Var):
        return {ast.name}
    if isinstance(ast, Const):
        return set()
    if isinstance(ast, Neg):
        return variables_of(ast.operand)
    if isinstance(ast, BinOp):
        return variables_of(ast.left) | variables_of(ast.right)
    out: set[str] = set()
    for arg in ast.args:
        out |= variables_of(arg)
    return out


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, source: str, variables: Iterable[str]):
        self.source = source
        self.tokens = tokenize(source)
        self.variables = frozenset(variables)
        self.i = 0

    def peek(self) -> Token | None:
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def at_end_pos(self) -> int:
        return len(self.source)

    def next(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ExprSyntaxError("unexpected end of input", self.at_end_pos())
        self.i += 1
        return tok

    def expect(self, kind: str, what: str) -> Token:
        tok = self.peek()
        if tok is None:
            raise ExprSyntaxError(f"expected {what}, got end of input", self.at_end_pos())
        if tok.kind != kind:
            raise ExprSyntaxError(f"expected {what}, got {tok.lexeme!r}", tok.position)
        self.i += 1
        return tok

    def is_op(self, *ops: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind == "operator" and tok.lexeme in ops

    def parse(self) -> Expr:
        if not self.tokens:
            raise ExprSyntaxError("empty expression", 0)
        node = self.expr()
        tok = self.peek()
        if tok is not None:
            raise ExprSyntaxError(f"unexpected {tok.lexeme!r}", tok.position)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.is_op("+", "-"):
            op = self.next().lexeme
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.is_op("*", "/"):
            op = self.next().lexeme
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        if self.is_op("-"):
            self.next()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.is_op("^"):
            self.next()
            return BinOp("^", base, self.factor())
        return base

    def atom(self) -> Expr:
        tok = self.next()
        if tok.kind == "number":
            return Const(float(tok.lexeme))
        if tok.kind == "lparen":
            node = self.expr()
            self.expect("rparen", "')'")
            return node
        if tok.kind == "identifier":
            nxt = self.peek()
            if nxt is not None and nxt.kind == "lparen":
                return self.call(tok)
            if tok.lexeme not in self.variables:
                raise UndeclaredVariableError(tok.lexeme, tok.position)
            return Var(tok.lexeme)
        raise ExprSyntaxError(f"unexpected {tok.lexeme!r}", tok.position)

    def call(self, name: Token) -> Expr:
        if name.lexeme not in BUILTIN_ARITY:
            raise ExprSyntaxError(f"unknown function {name.lexeme!r}", name.position)
        self.expect("lparen", "'('")
        args = [self.expr()]
        while True:
            tok = self.peek()
            if tok is not None and tok.kind == "comma":
                self.next()
                args.append(self.expr())
                continue
            break
        self.expect("rparen", "')'")
        want = BUILTIN_ARITY[name.lexeme]
        if len(args) != want:
            raise ArityError(
                f"{name.lexeme} takes {want} argument(s), got {len(args)}", name.position
            )
        return Call(name.lexeme, tuple(args))


def parse(source: str, variables: Iterable[str]) -> Expr:
    """Parse ``source``; every variable must come from ``variables``."""
    return _Parser(source, variables).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_text(ast: Expr) -> str:
    """Fully parenthesized canonical text; ``parse(to_text(t))`` rebuilds ``t``."""
    if isinstance(ast, Const):
        return _format_number(ast.value)
    if isinstance(ast, Var):
        return ast.name
    if isinstance(ast, Neg):
        return f"(-{to_text(ast.operand)})"
    if isinstance(ast, BinOp):
        return f"({to_text(ast.left)} {ast.op} {to_text(ast.right)})"
    return f"{ast.func}({', '.join(to_text(a) for a in ast.args)})"


# ---------------------------------------------------------------------------
# Scalar evaluation
# ---------------------------------------------------------------------------


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise NonFiniteError(f"{what} produced a non-finite value")
    return value


def _pow(p: float, q: float) -> float:
    if p < 0 and not q.is_integer():
        raise DomainError(f"negative base {p!r} with non-integer exponent {q!r}")
    if p == 0 and q < 0:
        raise NonFiniteError("zero raised to a negative power")
    try:
        return _finite(math.pow(p, q), "power")
    except OverflowError:
        raise NonFiniteError("power overflowed") from None


def _logmean(p: float, q: float) -> float:
    if p <= 0 or q <= 0:
        raise DomainError(f"logmean needs positive arguments, got ({p!r}, {q!r})")
    if p == q:
        return p
    # log1p keeps ln p - ln q accurate when p and q are close
    return (p - q) / math.log1p((p - q) / q)


def _ln(p: float) -> float:
    if p <= 0:
        raise DomainError(f"ln of nonpositive value {p!r}")
    return math.log(p)


def _sqrt(p: float) -> float:
    if p < 0:
        raise DomainError(f"sqrt of negative value {p!r}")
    return math.sqrt(p)


def _exp(p: float) -> float:
    try:
        return math.exp(p)
    except OverflowError:
        raise NonFiniteError("exp overflowed") from None


_SCALAR_FUNCS: dict[str, Callable[..., float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": _exp,
    "ln": _ln,
    "sqrt": _sqrt,
    "abs": abs,
    "min": min,
    "max": max,
    "pow": _pow,
    "logmean": _logmean,
}


def _eval(ast: Expr, env: Mapping[str, float]) -> float:
    if isinstance(ast, Const):
        return ast.value
    if isinstance(ast, Var):
        try:
            return float(env[ast.name])
        except KeyError:
            raise EvalError(f"variable {ast.name!r} is not bound") from None
    if isinstance(ast, Neg):
        return -_eval(ast.operand, env)
    if isinstance(ast, BinOp):
        p = _eval(ast.left, env)
        q = _eval(ast.right, env)
        if ast.op == "+":
            return p + q
        if ast.op == "-":
            return p - q
        if ast.op == "*":
            return p * q
        if ast.op == "/":
            if q == 0:
                raise NonFiniteError("division by zero")
            return p / q
        return _pow(p, q)
    args = [_eval(a, env) for a in ast.args]
    return _SCALAR_FUNCS[ast.func](*args)


def evaluate(ast: Expr, env: Mapping[str, float]) -> float:
    """Evaluate ``ast`` at one point; raises :class:`EvalError` subclasses."""
    return _finite(_eval(ast, env), "expression")


# ---------------------------------------------------------------------------
# Vectorized evaluation
# ---------------------------------------------------------------------------


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(np.ravel(mask))[0])


def _check_nonfinite(value: np.ndarray, what: str) -> np.ndarray:
    bad = ~np.isfinite(value)
    if np.any(bad):
        raise NonFiniteError(f"{what} produced a non-finite value", _first_bad(bad))
    return value


def _vpow(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p, q = np.broadcast_arrays(p, q)
    bad = (p < 0) & (q != np.floor(q))
    if np.any(bad):
        raise DomainError("negative base with non-integer exponent", _first_bad(bad))
    with np.errstate(all="ignore"):
        return _check_nonfinite(np.power(p, q), "power")


def _vlogmean(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    p, q = np.broadcast_arrays(p, q)
    bad = (p <= 0) | (q <= 0)
    if np.any(bad):
        raise DomainError("logmean needs positive arguments", _first_bad(bad))
    with np.errstate(all="ignore"):
        out = (p - q) / np.log1p((p - q) / q)
    return np.where(p == q, p, out)


def _vln(p: np.ndarray) -> np.ndarray:
    bad = p <= 0
    if np.any(bad):
        raise DomainError("ln of nonpositive value", _first_bad(bad))
    return np.log(p)


def _vsqrt(p: np.ndarray) -> np.ndarray:
    bad = p < 0
    if np.any(bad):
        raise DomainError("sqrt of negative value", _first_bad(bad))
    return np.sqrt(p)


def _vexp(p: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return _check_nonfinite(np.exp(p), "exp")


_VECTOR_FUNCS: dict[str, Callable[..., np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": _vexp,
    "ln": _vln,
    "sqrt": _vsqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
    "pow": _vpow,
    "logmean": _vlogmean,
}


def _veval(ast: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    if isinstance(ast, Const):
        return np.float64(ast.value)
    if isinstance(ast, Var):
        return env[ast.name]
    if isinstance(ast, Neg):
        return -_veval(ast.operand, env)
    if isinstance(ast, BinOp):
        p = _veval(ast.left, env)
        q = _veval(ast.right, env)
        if ast.op == "+":
            return p + q
        if ast.op == "-":
            return p - q
        if ast.op == "*":
            return p * q
        if ast.op == "/":
            zero = np.broadcast_to(q == 0, np.broadcast(p, q).shape)
            if np.any(zero):
                raise NonFiniteError("division by zero", _first_bad(zero))
            return p / q
        return _vpow(p, q)
    return _VECTOR_FUNCS[ast.func](*(_veval(a, env) for a in ast.args))


def vectorize(ast: Expr) -> Callable[..., np.ndarray]:
    """Return ``g(**arrays)`` evaluating ``ast`` elementwise over broadcast inputs.

    Errors carry the flat index of the first offending element.
    """

    def g(**env: np.ndarray | float) -> np.ndarray:
        arrays = {k: np.asarray(v, dtype=float) for k, v in env.items()}
        shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        missing = variables_of(ast) - arrays.keys()
        if missing:
            raise EvalError(f"variable {sorted(missing)[0]!r} is not bound")
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.broadcast_to(_veval(ast, arrays), shape)
        return _check_nonfinite(np.array(out, dtype=float), "expression")

    return g
