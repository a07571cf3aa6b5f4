"""Parameter-coefficient expressions: parsing, printing and fast evaluation.

Coefficient functions attached to affine operator/vector terms are written in a
small arithmetic language:

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' integer)?
    base   := number | 'j' | 'mu[' int ']' | func '(' expr ')' | '(' expr ')'
    func   := 'sin' | 'cos' | 'exp' | 'sqrt'

Expressions are parsed once into a flat postfix tape and evaluated either at a
single parameter point or vectorized over a batch of points.
"""

from __future__ import annotations

import re

import numpy as np

__all__ = ["CoeffExpr", "ParseError", "parse_coeff"]

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt}

# tape opcodes
_CONST, _PARAM, _ADD, _SUB, _MUL, _DIV, _POW, _CALL = range(8)

_TOKEN_RE = re.compile(
    r"""
    (?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_]+)
  | (?P<op>[-+*/^()\[\]])
  | (?P<ws>\s+)
    """,
    re.VERBOSE,
)


class ParseError(ValueError):
    """Syntax or semantic error in a coefficient expression.

    Carries the byte offset of the offending token in ``offset``.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos))
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

    def take(self, kind=None, value=None):
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {value or kind}, found {tok[1]!r}", tok[2])
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1]!r}", tok[2])
        self.i += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"trailing input {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def term(self):
        node = self.factor()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.factor()
            node = ("mul" if op == "*" else "div", node, rhs)
        return node

    def factor(self):
        node = self.base()
        if self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-":
                self.take()
                sign = -1
            tok = self.take("num")
            if not tok[1].isdigit():
                raise ParseError("exponent must be an integer", tok[2])
            node = ("pow", node, sign * int(tok[1]))
        return node

    def base(self):
        kind, value, offset = self.peek()
        if kind == "num":
            self.take()
            return ("num", float(value))
        if kind == "op" and value == "(":
            self.take()
            node = self.expr()
            self.take(value=")")
            return node
        if kind == "name":
            self.take()
            if value == "j":
                return ("jay",)
            if value == "mu":
                self.take(value="[")
                tok = self.take("num")
                if not tok[1].isdigit():
                    raise ParseError("parameter index must be an integer", tok[2])
                self.take(value="]")
                return ("mu", int(tok[1]))
            if value in _FUNCS:
                self.take(value="(")
                node = self.expr()
                self.take(value=")")
                return ("call", value, node)
            raise ParseError(f"unknown identifier {value!r}", offset)
        raise ParseError(f"expected a value, found {value!r}", offset)


def _compile(node, tape):
    head = node[0]
    if head == "num":
        tape.append((_CONST, node[1]))
    elif head == "jay":
        tape.append((_CONST, 1j))
    elif head == "mu":
        tape.append((_PARAM, node[1]))
    elif head == "add":
        _compile(node[1], tape)
        _compile(node[2], tape)
        tape.append((_ADD, None))
    elif head == "sub":
        _compile(node[1], tape)
        _compile(node[2], tape)
        tape.append((_SUB, None))
    elif head == "mul":
        _compile(node[1], tape)
        _compile(node[2], tape)
        tape.append((_MUL, None))
    elif head == "div":
        _compile(node[1], tape)
        _compile(node[2], tape)
        tape.append((_DIV, None))
    elif head == "pow":
        _compile(node[1], tape)
        tape.append((_POW, node[2]))
    elif head == "call":
        _compile(node[2], tape)
        tape.append((_CALL, _FUNCS[node[1]]))
    else:  # pragma: no cover
        raise AssertionError(head)


_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "pow": 3}


def _fmt_num(v):
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _print(node, parent_prec=0):
    head = node[0]
    if head == "num":
        return _fmt_num(node[1])
    if head == "jay":
        return "j"
    if head == "mu":
        return f"mu[{node[1]}]"
    if head == "call":
        return f"{node[1]}({_print(node[2])})"
    if head == "pow":
        text = f"{_print(node[1], _PREC['pow'] + 1)}^{node[2]}"
        return f"({text})" if parent_prec > _PREC["pow"] else text
    op = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[head]
    prec = _PREC[head]
    # right operand of - and / needs a strictly tighter context
    text = _print(node[1], prec) + op + _print(node[2], prec + 1)
    return f"({text})" if parent_prec > prec else text


class CoeffExpr:
    """A compiled scalar coefficient function of the parameter vector."""

    __slots__ = ("_node", "_tape", "text", "max_index", "is_complex")

    def __init__(self, node):
        self._node = node
        tape = []
        _compile(node, tape)
        self._tape = tape
        self.text = _print(node)
        self.max_index = max(
            (arg for op, arg in tape if op == _PARAM), default=-1
        )
        self.is_complex = any(
            op == _CONST and isinstance(arg, complex) for op, arg in tape
        )

    @staticmethod
    def constant(value):
        if isinstance(value, complex) and value.imag != 0:
            node = ("mul", ("num", 1.0), ("jay",))
            if value.imag != 1.0:
                node = ("mul", ("num", value.imag), ("jay",))
            if value.real != 0.0:
                node = ("add", ("num", value.real), node)
            return CoeffExpr(node)
        return CoeffExpr(("num", float(np.real(value))))

    def __call__(self, mu):
        """Evaluate at a parameter point ``(p,)`` or batch ``(N, p)``."""
        mu = np.asarray(mu)
        batched = mu.ndim == 2
        if self.max_index >= mu.shape[-1]:
            raise IndexError(
                f"expression uses mu[{self.max_index}] but only "
                f"{mu.shape[-1]} parameters were given"
            )
        stack = []
        for op, arg in self._tape:
            if op == _CONST:
                stack.append(arg)
            elif op == _PARAM:
                stack.append(mu[..., arg])
            elif op == _ADD:
                b = stack.pop()
                stack.append(stack.pop() + b)
            elif op == _SUB:
                b = stack.pop()
                stack.append(stack.pop() - b)
            elif op == _MUL:
                b = stack.pop()
                stack.append(stack.pop() * b)
            elif op == _DIV:
                b = stack.pop()
                with np.errstate(divide="ignore", invalid="ignore"):
                    stack.append(stack.pop() / b)
            elif op == _POW:
                stack.append(stack.pop() ** arg)
            else:
                with np.errstate(invalid="ignore", over="ignore"):
                    stack.append(arg(stack.pop()))
        out = stack.pop()
        if batched:
            return np.asarray(out) + np.zeros(mu.shape[0], dtype=np.result_type(out, float))
        return complex(out) if np.iscomplexobj(out) else float(out)

    def __str__(self):
        return self.text

    def __repr__(self):
        return f"CoeffExpr({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, CoeffExpr) and self._node == other._node

    def __hash__(self):
        return hash(self.text)


def parse_coeff(text):
    """Parse ``text`` into a :class:`CoeffExpr`.

    Raises :class:`ParseError` (with a byte offset) on malformed input or
    unknown identifiers.
    """
    if isinstance(text, CoeffExpr):
        return text
    return CoeffExpr(_Parser(text).parse())
