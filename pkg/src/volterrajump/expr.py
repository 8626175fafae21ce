"""Small arithmetic expression language for coefficient functions.

Coefficients (drifts, diffusion matrices, intensities, initial curves) are
written as strings so that experiment configurations stay serializable.
The grammar, in EBNF::

    expr     = term { ("+" | "-") term } ;
    term     = unary { ("*" | "/") unary } ;
    unary    = ("-" | "+") unary | power ;
    power    = atom [ ("^" | "**") unary ] ;
    atom     = number | variable | call | "(" expr ")" ;
    call     = name "(" expr { "," expr } ")" ;
    variable = "x" index | "t" ;
    index    = digit { digit } ;            (* 1-based state component *)
    number   = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;

Available functions: ``abs``, ``min``, ``max``, ``pos`` (positive part),
``sqrt``, ``exp``, ``log``, ``sin``, ``cos``.

Evaluation is vectorized: a state array of shape ``(..., d)`` yields an
array of shape ``(...)``. With ``exact=True`` literals become
:class:`fractions.Fraction` so that polynomial expressions evaluated on
rational inputs produce exact results.
"""

from __future__ import annotations

import math
import re
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "ExprError",
    "Expr",
    "VectorExpr",
    "MatrixExpr",
    "parse",
    "as_vector",
    "as_matrix",
]


class ExprError(ValueError):
    """Raised for malformed expressions or invalid variable references."""


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    src = src.rstrip()
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            raise ExprError(f"unexpected character {src[pos:].lstrip()[:1]!r} at column {pos} in {src!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


def _is_array(v) -> bool:
    return isinstance(v, np.ndarray)


def _fmin(*args):
    if any(_is_array(a) for a in args):
        out = np.asarray(args[0], dtype=float)
        for a in args[1:]:
            out = np.minimum(out, a)
        return out
    return min(args)


def _fmax(*args):
    if any(_is_array(a) for a in args):
        out = np.asarray(args[0], dtype=float)
        for a in args[1:]:
            out = np.maximum(out, a)
        return out
    return max(args)


def _pos(a):
    return np.maximum(a, 0.0) if _is_array(a) else max(a, 0)


def _unary(np_fn, math_fn):
    def f(a):
        if _is_array(a):
            return np_fn(a)
        return math_fn(float(a))
    return f


def _abs(a):
    return np.abs(a) if _is_array(a) else abs(a)


_FUNCS: dict[str, tuple[Callable, int | None]] = {
    "abs": (_abs, 1),
    "min": (_fmin, None),
    "max": (_fmax, None),
    "pos": (_pos, 1),
    "sqrt": (_unary(np.sqrt, math.sqrt), 1),
    "exp": (_unary(np.exp, math.exp), 1),
    "log": (_unary(np.log, math.log), 1),
    "sin": (_unary(np.sin, math.sin), 1),
    "cos": (_unary(np.cos, math.cos), 1),
}


# AST nodes are plain tuples: ("num", Fraction), ("var", index|None), ("neg", a),
# ("bin", op, a, b), ("call", name, args)


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, col = self.take()
        if val != value:
            raise ExprError(f"expected {value!r} at column {col} in {self.src!r}, got {val or 'end of input'!r}")

    def parse(self):
        node = self.expr()
        kind, val, col = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected {val!r} at column {col} in {self.src!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return ("neg", self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return ("bin", "^", base, self.unary())
        return base

    def atom(self):
        kind, val, col = self.take()
        if kind == "num":
            return ("num", Fraction(val))
        if kind == "name":
            if self.peek()[1] == "(":
                if val not in _FUNCS:
                    raise ExprError(f"unknown function {val!r} at column {col} in {self.src!r}")
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = _FUNCS[val][1]
                if arity is not None and len(args) != arity:
                    raise ExprError(f"{val}() takes {arity} argument(s), got {len(args)} in {self.src!r}")
                return ("call", val, args)
            if val == "t":
                return ("var", None)
            m = re.fullmatch(r"x(\d+)", val)
            if m and int(m.group(1)) >= 1:
                return ("var", int(m.group(1)) - 1)
            raise ExprError(f"unknown name {val!r} at column {col} in {self.src!r}")
        if val == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ExprError(f"unexpected {val or 'end of input'!r} at column {col} in {self.src!r}")


def _walk_vars(node, acc: set):
    tag = node[0]
    if tag == "var":
        acc.add(node[1])
    elif tag == "neg":
        _walk_vars(node[1], acc)
    elif tag == "bin":
        _walk_vars(node[2], acc)
        _walk_vars(node[3], acc)
    elif tag == "call":
        for a in node[2]:
            _walk_vars(a, acc)


def _component(x, i):
    if isinstance(x, np.ndarray):
        if x.ndim == 0:
            raise ExprError("state must have at least one component")
        if i >= x.shape[-1]:
            raise ExprError(f"x{i + 1} referenced but state has dimension {x.shape[-1]}")
        return x[..., i]
    if i >= len(x):
        raise ExprError(f"x{i + 1} referenced but state has dimension {len(x)}")
    return x[i]


def _eval(node, x, t, exact):
    tag = node[0]
    if tag == "num":
        return node[1] if exact else float(node[1])
    if tag == "var":
        if node[1] is None:
            if t is None:
                raise ExprError("variable t used but no time supplied")
            return t
        return _component(x, node[1])
    if tag == "neg":
        return -_eval(node[1], x, t, exact)
    if tag == "bin":
        a = _eval(node[2], x, t, exact)
        b = _eval(node[3], x, t, exact)
        op = node[1]
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            return a / b
        if isinstance(b, Fraction) and b.denominator == 1:
            b = int(b)
        if _is_array(a) and not _is_array(b):
            return np.power(a, float(b))
        return a ** b
    fn = _FUNCS[node[1]][0]
    return fn(*[_eval(a, x, t, exact) for a in node[2]])


class Expr:
    """A parsed scalar expression in the state ``x`` (and optionally ``t``).

    Parameters
    ----------
    source : str or number
        Expression text following the module grammar, or a plain number.
    """

    __slots__ = ("source", "_ast", "_vars")

    def __init__(self, source: str | float | int):
        if isinstance(source, Expr):
            source = source.source
        if isinstance(source, (int, float, Fraction)) and not isinstance(source, bool):
            source = repr(float(source)) if isinstance(source, float) else str(source)
        if not isinstance(source, str):
            raise ExprError(f"expression must be a string or number, got {type(source).__name__}")
        self.source = source.strip()
        self._ast = _Parser(self.source).parse()
        acc: set = set()
        _walk_vars(self._ast, acc)
        self._vars = frozenset(acc)

    @property
    def is_constant(self) -> bool:
        return not self._vars

    @property
    def uses_time(self) -> bool:
        return None in self._vars

    @property
    def state_dim(self) -> int:
        """Smallest state dimension the expression can be evaluated on."""
        idx = [v for v in self._vars if v is not None]
        return max(idx) + 1 if idx else 0

    def __call__(self, x: Any = (), t: Any = None, exact: bool = False):
        if not exact and not isinstance(x, np.ndarray):
            x = np.asarray(x, dtype=float)
        val = _eval(self._ast, x, t, exact)
        if exact:
            return val
        if isinstance(x, np.ndarray) and x.ndim > 1 and not _is_array(val):
            return np.full(x.shape[:-1], float(val))
        if t is not None and np.ndim(t) > 0 and not _is_array(val):
            return np.full(np.shape(t), float(val))
        return val

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and other.source == self.source

    def __hash__(self):
        return hash(self.source)


class VectorExpr:
    """A vector of scalar expressions evaluated componentwise."""

    __slots__ = ("items",)

    def __init__(self, items: Sequence):
        self.items = tuple(Expr(s) for s in items)

    def __len__(self):
        return len(self.items)

    @property
    def is_constant(self) -> bool:
        return all(e.is_constant for e in self.items)

    @property
    def state_dim(self) -> int:
        return max((e.state_dim for e in self.items), default=0)

    def __call__(self, x: Any = (), t: Any = None, exact: bool = False):
        vals = [e(x, t, exact) for e in self.items]
        if exact:
            return vals
        return np.stack(np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in vals]), axis=-1)

    def to_json(self):
        return [e.source for e in self.items]

    def __repr__(self):
        return f"VectorExpr({self.to_json()!r})"


class MatrixExpr:
    """A matrix of scalar expressions, evaluated to shape ``(..., rows, cols)``."""

    __slots__ = ("rows",)

    def __init__(self, rows: Sequence[Sequence]):
        self.rows = tuple(VectorExpr(r) for r in rows)
        widths = {len(r) for r in self.rows}
        if len(widths) > 1:
            raise ExprError("matrix rows must have equal length")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.rows), len(self.rows[0]) if self.rows else 0)

    @property
    def is_constant(self) -> bool:
        return all(r.is_constant for r in self.rows)

    @property
    def state_dim(self) -> int:
        return max((r.state_dim for r in self.rows), default=0)

    def __call__(self, x: Any = (), t: Any = None):
        return np.stack([r(x, t) for r in self.rows], axis=-2)

    def to_json(self):
        return [r.to_json() for r in self.rows]

    def __repr__(self):
        return f"MatrixExpr({self.to_json()!r})"


def parse(source) -> Expr:
    return Expr(source)


def as_vector(spec, length: int | None = None) -> VectorExpr:
    """Coerce a config value (string, number or list) into a :class:`VectorExpr`."""
    if isinstance(spec, VectorExpr):
        out = spec
    elif isinstance(spec, (str, int, float, Expr)):
        out = VectorExpr([spec] * (length or 1))
    else:
        out = VectorExpr(list(spec))
    if length is not None and len(out) != length:
        raise ExprError(f"expected a vector of length {length}, got {len(out)}")
    return out


def as_matrix(spec, shape: tuple[int, int] | None = None) -> MatrixExpr:
    """Coerce a config value into a :class:`MatrixExpr`.

    A scalar is broadcast to a diagonal matrix when ``shape`` is given.
    """
    if isinstance(spec, MatrixExpr):
        out = spec
    elif isinstance(spec, (str, int, float, Expr)):
        n = shape[0] if shape else 1
        out = MatrixExpr([[spec if i == j else "0" for j in range(n)] for i in range(n)])
    else:
        out = MatrixExpr(spec)
    if shape is not None and out.shape != tuple(shape):
        raise ExprError(f"expected a {shape[0]}x{shape[1]} matrix, got {out.shape[0]}x{out.shape[1]}")
    return out
