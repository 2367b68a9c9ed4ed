"""Small expression language for boundary/terminal data.

Supports numeric literals, declared variables, the binary operators
``+ - * / ^`` (``^`` right-associative), unary minus, and the functions
``exp``, ``sin``, ``cos``, ``sqrt``, ``log``.  Expressions evaluate
elementwise over numpy arrays and differentiate symbolically, so the
derivative of a parsed expression is again an expression usable inside
quadrature kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainError,
    ExprSyntaxError,
    UnboundVariable,
    UnknownFunction,
    UnknownVariable,
)

FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "log": np.log,
}


class Expr:
    """Base class for AST nodes. Nodes are immutable after construction."""

    def free_variables(self):
        out = set()
        _collect_vars(self, out)
        return out


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


def _collect_vars(e, out):
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, Neg):
        _collect_vars(e.operand, out)
    elif isinstance(e, Bin):
        _collect_vars(e.left, out)
        _collect_vars(e.right, out)
    elif isinstance(e, Call):
        _collect_vars(e.arg, out)


# --------------------------------------------------------------------------
# Tokenizer / parser (recursive descent, standard precedence)
# --------------------------------------------------------------------------

_OPS = set("+-*/^()")


def _tokenize(source):
    tokens = []  # (kind, text, offset)
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                if source[j] == ".":
                    seen_dot = True
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                float(text)
            except ValueError:
                raise ExprSyntaxError(f"bad numeric literal {text!r}", i)
            tokens.append(("num", text, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, variables):
        self.tokens = tokens
        self.pos = 0
        self.variables = set(variables)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(f"expected {op!r}", off)
        return self.advance()

    def parse(self):
        e = self.sum_expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected token {text!r}", off)
        return e

    def sum_expr(self):
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.advance()
                e = Bin(text, e, self.term())
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.advance()
                e = Bin(text, e, self.unary())
            else:
                return e

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.advance()
            # right-associative; exponent may carry its own unary minus
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        kind, text, off = self.advance()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            nk, nt, _ = self.peek()
            if nk == "op" and nt == "(":
                if text not in FUNCTIONS:
                    raise UnknownFunction(f"unknown function {text!r}")
                self.advance()
                arg = self.sum_expr()
                self.expect_op(")")
                return Call(text, arg)
            if text not in self.variables:
                raise UnknownVariable(f"unknown variable {text!r}")
            return Var(text)
        if kind == "op" and text == "(":
            e = self.sum_expr()
            self.expect_op(")")
            return e
        raise ExprSyntaxError(f"unexpected token {text!r}" if text else "unexpected end of input", off)


def parse(source, variables):
    """Parse ``source`` into an Expr whose free variables lie in ``variables``."""
    return _Parser(_tokenize(source), variables).parse()


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def evaluate(e, bindings):
    """Evaluate elementwise; scalar or numpy-array bindings are accepted."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise UnboundVariable(f"variable {e.name!r} is not bound")
    if isinstance(e, Neg):
        return -evaluate(e.operand, bindings)
    if isinstance(e, Call):
        arg = evaluate(e.arg, bindings)
        if e.func in ("sqrt", "log") and np.any(np.asarray(arg) < 0):
            raise DomainError(f"{e.func} of a negative number")
        if e.func == "log" and np.any(np.asarray(arg) == 0):
            raise DomainError("log of zero")
        return FUNCTIONS[e.func](arg)
    left = evaluate(e.left, bindings)
    right = evaluate(e.right, bindings)
    if e.op == "+":
        return left + right
    if e.op == "-":
        return left - right
    if e.op == "*":
        return left * right
    if e.op == "/":
        if np.any(np.asarray(right) == 0):
            raise DomainError("division by zero")
        return left / right
    # '^' — guard fractional powers of negatives
    with np.errstate(invalid="raise"):
        try:
            return np.power(left, right)
        except FloatingPointError:
            raise DomainError("fractional power of a negative number")


# --------------------------------------------------------------------------
# Symbolic differentiation with light simplification
# --------------------------------------------------------------------------

def _is_num(e, value=None):
    return isinstance(e, Num) and (value is None or e.value == value)


def _add(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Bin("+", a, b)


def _sub(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return _neg(b)
    return Bin("-", a, b)


def _neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _mul(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return Num(0.0)
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Bin("*", a, b)


def _div(a, b):
    if _is_num(a, 0.0):
        return Num(0.0)
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b) and b.value != 0:
        return Num(a.value / b.value)
    return Bin("/", a, b)


def _pow(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return Num(1.0)
    if _is_num(a) and _is_num(b):
        return Num(float(a.value ** b.value))
    return Bin("^", a, b)


def differentiate(e, var):
    """Exact symbolic derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0) if e.name == var else Num(0.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.operand, var))
    if isinstance(e, Call):
        inner = differentiate(e.arg, var)
        if e.func == "exp":
            outer = Call("exp", e.arg)
        elif e.func == "sin":
            outer = Call("cos", e.arg)
        elif e.func == "cos":
            outer = _neg(Call("sin", e.arg))
        elif e.func == "sqrt":
            outer = _div(Num(0.5), Call("sqrt", e.arg))
        elif e.func == "log":
            outer = _div(Num(1.0), e.arg)
        else:  # pragma: no cover - closed function set
            raise UnknownFunction(e.func)
        return _mul(outer, inner)
    da = differentiate(e.left, var)
    db = differentiate(e.right, var)
    if e.op == "+":
        return _add(da, db)
    if e.op == "-":
        return _sub(da, db)
    if e.op == "*":
        return _add(_mul(da, e.right), _mul(e.left, db))
    if e.op == "/":
        num = _sub(_mul(da, e.right), _mul(e.left, db))
        return _div(num, _pow(e.right, Num(2.0)))
    # power rule; constant exponent handled specially
    if _is_num(e.right):
        n = e.right.value
        return _mul(_mul(Num(n), _pow(e.left, Num(n - 1.0))), da)
    # general a^b = exp(b log a)
    term = _add(_mul(db, Call("log", e.left)), _div(_mul(e.right, da), e.left))
    return _mul(_pow(e.left, e.right), term)


# --------------------------------------------------------------------------
# Printing
# --------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(e):
    if isinstance(e, Bin):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    if isinstance(e, Num) and e.value < 0:
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_string(e):
    """Render an expression; parse(to_string(e)) rebuilds the same tree."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.operand)
        if _prec(e.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    lhs, rhs = to_string(e.left), to_string(e.right)
    p = _PREC[e.op]
    if _prec(e.left) < p or (e.op == "^" and _prec(e.left) <= p):
        lhs = f"({lhs})"
    # left-assoc: parenthesize right child at equal precedence, except ^
    if _prec(e.right) < p or (e.op in "-/" and _prec(e.right) == p) or (
        e.op in "+*" and _prec(e.right) == p
    ):
        rhs = f"({rhs})"
    return f"{lhs} {e.op} {rhs}" if e.op in "+-" else f"{lhs}{e.op}{rhs}"
