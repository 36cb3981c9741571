"""Immutable expression trees with prefix/infix serialisation and evaluation.

Nodes are either constants, variables or operator applications.  Binary
operators: ``+ - * / pow``; unary: ``sin cos tan exp log abs sqrt``.  Evaluation
never returns NaN silently: domain violations raise :class:`DomainError` with
the path of the offending subexpression.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass

import numpy as np

BINARY = ("+", "-", "*", "/", "pow")
UNARY = ("sin", "cos", "tan", "exp", "log", "abs", "sqrt")
ARITY = {**{op: 2 for op in BINARY}, **{op: 1 for op in UNARY}}

# accepted spellings in token streams
_ALIASES = {"×": "*", "·": "*", "−": "-", "÷": "/", "^": "pow", "**": "pow",
            "add": "+", "sub": "-", "mul": "*", "div": "/"}
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class ExpressionError(ValueError):
    pass


class ParseError(ExpressionError):
    """Malformed token stream; ``index`` is the 0-based token position."""

    def __init__(self, message: str, index: int):
        super().__init__(f"{message} (token {index})")
        self.index = index


class UnboundVariableError(ExpressionError, KeyError):
    def __str__(self):
        return ExpressionError.__str__(self)


class DomainError(ExpressionError, ArithmeticError):
    """Operator applied outside its domain; ``path`` indexes child positions from the root."""

    def __init__(self, message: str, path: tuple = (), subexpr: str = ""):
        where = "/".join(str(p) for p in path) or "root"
        super().__init__(f"{message} at {where}: {subexpr}")
        self.path = path
        self.subexpr = subexpr


@dataclass(frozen=True)
class Expression:
    """One tree node; ``op`` is ``"const"``, ``"var"`` or an operator name."""

    op: str
    args: tuple = ()
    value: float = 0.0
    name: str = ""

    # ---------------------------------------------------------------- builders
    @staticmethod
    def const(value: float) -> "Expression":
        return Expression("const", value=float(value))

    @staticmethod
    def var(name: str) -> "Expression":
        return Expression("var", name=name)

    @staticmethod
    def apply(op: str, *args: "Expression") -> "Expression":
        op = _ALIASES.get(op, op)
        if op not in ARITY:
            raise ExpressionError(f"unknown operator {op!r}")
        if len(args) != ARITY[op]:
            raise ExpressionError(f"{op} expects {ARITY[op]} arguments, got {len(args)}")
        return Expression(op, tuple(args))

    def __add__(self, other):
        return Expression.apply("+", self, _lift(other))

    def __radd__(self, other):
        return Expression.apply("+", _lift(other), self)

    def __sub__(self, other):
        return Expression.apply("-", self, _lift(other))

    def __rsub__(self, other):
        return Expression.apply("-", _lift(other), self)

    def __mul__(self, other):
        return Expression.apply("*", self, _lift(other))

    def __rmul__(self, other):
        return Expression.apply("*", _lift(other), self)

    def __truediv__(self, other):
        return Expression.apply("/", self, _lift(other))

    def __pow__(self, other):
        return Expression.apply("pow", self, _lift(other))

    # ---------------------------------------------------------------- queries
    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def is_var(self) -> bool:
        return self.op == "var"

    def size(self) -> int:
        return 1 + sum(a.size() for a in self.args)

    def depth(self) -> int:
        return 1 + max((a.depth() for a in self.args), default=0)

    def variables(self) -> frozenset:
        if self.is_var:
            return frozenset([self.name])
        out = frozenset()
        for a in self.args:
            out |= a.variables()
        return out

    def constants(self) -> list[float]:
        """Values of the free constant slots in prefix order (see :meth:`with_constants`)."""
        return [node.value for node, _ in _const_slots(self)]

    def with_constants(self, values) -> "Expression":
        values = list(values)
        it = iter(values)

        def rebuild(node: Expression, fixed: bool) -> Expression:
            if node.is_const:
                return node if fixed else Expression.const(next(it))
            if not node.args:
                return node
            if node.op == "pow":
                base = rebuild(node.args[0], False)
                expo = node.args[1]
                expo = expo if _is_fixed_exponent(expo) else rebuild(expo, False)
                return Expression("pow", (base, expo))
            return Expression(node.op, tuple(rebuild(a, False) for a in node.args))

        out = rebuild(self, False)
        if next(it, None) is not None:
            raise ExpressionError("too many constant values")
        return out

    def __str__(self) -> str:
        return to_infix(self)


def _lift(x) -> Expression:
    if isinstance(x, Expression):
        return x
    return Expression.const(float(x))


def _is_fixed_exponent(node: Expression) -> bool:
    """Integer literal exponents stay fixed during constant fitting."""
    return node.is_const and float(node.value).is_integer()


def _const_slots(expr: Expression):
    out = []

    def walk(node: Expression):
        if node.is_const:
            out.append((node, None))
        elif node.op == "pow":
            walk(node.args[0])
            if not _is_fixed_exponent(node.args[1]):
                walk(node.args[1])
        else:
            for a in node.args:
                walk(a)

    walk(expr)
    return out


# ---------------------------------------------------------------------------- prefix

def _token_str(tok) -> str:
    return str(tok).strip()


def parse_prefix(tokens) -> Expression:
    """Build a tree from an operator-first token list.

    Tokens may be operator names (ASCII or the symbols ``× − ÷ ^``), numbers
    or variable identifiers.
    """
    toks = [_token_str(t) if not isinstance(t, (int, float)) else t for t in tokens]
    if not toks:
        raise ParseError("empty token list", 0)
    pos = 0

    def parse() -> Expression:
        nonlocal pos
        if pos >= len(toks):
            raise ParseError("arity underflow: operand expected", pos)
        tok = toks[pos]
        here = pos
        pos += 1
        if isinstance(tok, (int, float)) and not isinstance(tok, bool):
            return Expression.const(float(tok))
        op = _ALIASES.get(tok, tok)
        if op in ARITY:
            args = tuple(parse() for _ in range(ARITY[op]))
            return Expression(op, args)
        try:
            return Expression.const(float(tok))
        except ValueError:
            pass
        if _NAME_RE.match(tok):
            return Expression.var(tok)
        raise ParseError(f"unrecognised token {tok!r}", here)

    expr = parse()
    if pos != len(toks):
        raise ParseError(f"arity overflow: {len(toks) - pos} unused token(s)", pos)
    return expr


def to_prefix(expr: Expression) -> list:
    """Operator-first token list; constants are emitted as ``repr`` strings (exact round-trip)."""
    out = []

    def walk(node: Expression):
        if node.is_const:
            out.append(repr(float(node.value)))
        elif node.is_var:
            out.append(node.name)
        else:
            out.append(node.op)
            for a in node.args:
                walk(a)

    walk(expr)
    return out


# ---------------------------------------------------------------------------- infix

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "pow": 4}


def to_infix(expr: Expression) -> str:
    """Readable infix string that :func:`parse_infix` maps back to the same tree."""

    def fmt(node: Expression) -> tuple[str, int]:
        if node.is_const:
            v = float(node.value)
            s = repr(v)
            return (f"({s})", 5) if v < 0 or s.startswith("-") else (s, 5)
        if node.is_var:
            return node.name, 5
        if node.op in UNARY:
            return f"{node.op}({fmt(node.args[0])[0]})", 5
        prec = _PREC[node.op]
        ls, lp = fmt(node.args[0])
        rs, rp = fmt(node.args[1])
        if node.op == "pow":
            ls = ls if lp > prec else f"({ls})"
            rs = rs if rp > prec else f"({rs})"
            return f"{ls}**{rs}", prec
        ls = ls if lp >= prec else f"({ls})"
        rs = rs if rp > prec else f"({rs})"
        sym = node.op
        return f"{ls} {sym} {rs}" if prec == 1 else f"{ls}{sym}{rs}", prec

    return fmt(expr)[0]


def parse_infix(text: str) -> Expression:
    """Parse a Python-style arithmetic string (``^`` is accepted for powers)."""
    src = text.strip().replace("^", "**").replace("×", "*").replace("−", "-").replace("÷", "/")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    binops = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/", ast.Pow: "pow"}

    def conv(node) -> Expression:
        if isinstance(node, ast.Expression):
            return conv(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return Expression.const(float(node.value))
        if isinstance(node, ast.Name):
            return Expression.var(node.id)
        if isinstance(node, ast.BinOp) and type(node.op) in binops:
            return Expression(binops[type(node.op)], (conv(node.left), conv(node.right)))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = conv(node.operand)
            if isinstance(node.op, ast.UAdd):
                return inner
            if inner.is_const:
                return Expression.const(-inner.value)
            return Expression("*", (Expression.const(-1.0), inner))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in UNARY and len(node.args) == 1 and not node.keywords:
            return Expression(node.func.id, (conv(node.args[0]),))
        raise ExpressionError(f"unsupported syntax in {text!r}: {ast.dump(node)[:60]}")

    return conv(tree)


# ---------------------------------------------------------------------------- evaluation

def _scalar_apply(op: str, a: float, b: float = 0.0) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise ZeroDivisionError("division by zero")
        return a / b
    if op == "pow":
        if a == 0.0 and b < 0:
            raise ZeroDivisionError("zero to a negative power")
        if a < 0 and not float(b).is_integer():
            raise ValueError("negative base with non-integer exponent")
        return math.pow(a, b)
    if op == "sin":
        return math.sin(a)
    if op == "cos":
        return math.cos(a)
    if op == "tan":
        if math.cos(a) == 0.0:
            raise ValueError("tan pole")
        return math.tan(a)
    if op == "exp":
        return math.exp(a)
    if op == "log":
        if a <= 0.0:
            raise ValueError("log of non-positive value")
        return math.log(a)
    if op == "abs":
        return abs(a)
    if op == "sqrt":
        if a < 0.0:
            raise ValueError("sqrt of negative value")
        return math.sqrt(a)
    raise ExpressionError(f"unknown operator {op!r}")


def eval_expression(expr: Expression, bindings: dict) -> float:
    """Evaluate at one point; every free variable must be bound."""

    def ev(node: Expression, path: tuple) -> float:
        if node.is_const:
            return float(node.value)
        if node.is_var:
            if node.name not in bindings:
                raise UnboundVariableError(f"unbound variable {node.name!r}")
            return float(bindings[node.name])
        vals = [ev(a, path + (k,)) for k, a in enumerate(node.args)]
        try:
            out = _scalar_apply(node.op, *vals)
        except (ZeroDivisionError, ValueError, OverflowError) as exc:
            raise DomainError(str(exc), path, to_infix(node)) from None
        if not math.isfinite(out):
            raise DomainError("non-finite result", path, to_infix(node))
        return out

    return ev(expr, ())


_NP_UNARY = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
             "log": np.log, "abs": np.abs, "sqrt": np.sqrt}


def _vector_apply(op: str, a, b=None):
    if op == "+":
        return a + b, None
    if op == "-":
        return a - b, None
    if op == "*":
        return a * b, None
    if op == "/":
        bad = b == 0
        return a / np.where(bad, 1.0, b), bad
    if op == "pow":
        bad = (a < 0) & (np.asarray(b) != np.round(b)) | ((a == 0) & (np.asarray(b) < 0))
        return np.power(np.where(bad, 1.0, a), b), bad
    if op == "log":
        bad = a <= 0
        return np.log(np.where(bad, 1.0, a)), bad
    if op == "sqrt":
        bad = a < 0
        return np.sqrt(np.where(bad, 0.0, a)), bad
    return _NP_UNARY[op](a), None


def evaluate(expr: Expression, env: dict) -> np.ndarray:
    """Vectorised evaluation over equally shaped arrays in ``env``.

    Raises :class:`DomainError` if any element leaves an operator's domain or
    becomes non-finite.
    """
    shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape if env else ()

    def ev(node: Expression, path: tuple):
        if node.is_const:
            return np.full(shape, float(node.value))
        if node.is_var:
            if node.name not in env:
                raise UnboundVariableError(f"unbound variable {node.name!r}")
            return np.broadcast_to(np.asarray(env[node.name], dtype=float), shape)
        vals = [ev(a, path + (k,)) for k, a in enumerate(node.args)]
        with np.errstate(all="ignore"):
            out, bad = _vector_apply(node.op, *vals)
        if bad is not None and np.any(bad):
            raise DomainError(f"{node.op} domain violated at {int(np.sum(bad))} point(s)", path, to_infix(node))
        if not np.all(np.isfinite(out)):
            raise DomainError("non-finite result", path, to_infix(node))
        return out

    return ev(expr, ())


def compile_numpy(expr: Expression, names: list[str]):
    """Compile to a fast numpy function of positional arrays (no domain checks)."""
    pieces = {"sin": "np.sin", "cos": "np.cos", "tan": "np.tan", "exp": "np.exp",
              "log": "np.log", "abs": "np.abs", "sqrt": "np.sqrt"}
    missing = expr.variables() - set(names)
    if missing:
        raise UnboundVariableError(f"unbound variable(s) {sorted(missing)}")
    args = [f"_v{k}" for k in range(len(names))]
    lookup = dict(zip(names, args))

    def src(node: Expression) -> str:
        if node.is_const:
            return f"({float(node.value)!r})"
        if node.is_var:
            return lookup[node.name]
        if node.op in UNARY:
            return f"{pieces[node.op]}({src(node.args[0])})"
        a, b = (src(x) for x in node.args)
        if node.op == "pow":
            return f"np.power({a}, {b})"
        return f"({a} {node.op} {b})"

    code = f"lambda {', '.join(args)}: {src(expr)} + 0.0 * ({' + '.join(args) if args else '0.0'})"
    return eval(code, {"np": np})  # noqa: S307 - source built from a validated tree


# ---------------------------------------------------------------------------- helpers

def simplify(expr: Expression) -> Expression:
    """Constant folding plus the identities ``x+0``, ``x*1``, ``x*0``, ``x/1``, ``x**1``."""
    if not expr.args:
        return expr
    args = tuple(simplify(a) for a in expr.args)
    if all(a.is_const for a in args):
        try:
            return Expression.const(_scalar_apply(expr.op, *[a.value for a in args]))
        except (ZeroDivisionError, ValueError, OverflowError):
            return Expression(expr.op, args)
    op = expr.op
    if op in ("+", "-") and args[1].is_const and args[1].value == 0.0:
        return args[0]
    if op == "+" and args[0].is_const and args[0].value == 0.0:
        return args[1]
    if op == "*":
        for k in (0, 1):
            if args[k].is_const and args[k].value == 0.0:
                return Expression.const(0.0)
            if args[k].is_const and args[k].value == 1.0:
                return args[1 - k]
    if op == "/" and args[0].is_const and args[0].value == 0.0:
        return Expression.const(0.0)
    if op in ("/", "pow") and args[1].is_const and args[1].value == 1.0:
        return args[0]
    return Expression(op, args)


def linear_combination(coefs, terms, intercept: float | None = None) -> Expression:
    """``intercept + sum_k coefs[k] * terms[k]`` (terms with zero coefficient omitted)."""
    parts = []
    if intercept is not None and intercept != 0.0:
        parts.append(Expression.const(intercept))
    for c, t in zip(coefs, terms):
        if c == 0.0:
            continue
        if t.is_const and t.value == 1.0:
            parts.append(Expression.const(c))
        else:
            parts.append(Expression("*", (Expression.const(c), t)))
    if not parts:
        return Expression.const(0.0)
    out = parts[0]
    for p in parts[1:]:
        out = Expression("+", (out, p))
    return out


def to_sympy(expr: Expression):
    import sympy as sp

    def conv(node: Expression):
        if node.is_const:
            v = float(node.value)
            return sp.Integer(int(v)) if v.is_integer() and abs(v) < 1e15 else sp.Float(v)
        if node.is_var:
            return sp.Symbol(node.name, real=True)
        a = [conv(x) for x in node.args]
        op = node.op
        if op == "+":
            return a[0] + a[1]
        if op == "-":
            return a[0] - a[1]
        if op == "*":
            return a[0] * a[1]
        if op == "/":
            return a[0] / a[1]
        if op == "pow":
            return a[0] ** a[1]
        return {"sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "exp": sp.exp,
                "log": sp.log, "abs": sp.Abs, "sqrt": sp.sqrt}[op](a[0])

    return conv(expr)
