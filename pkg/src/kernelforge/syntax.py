"""Text format for kernel expressions.

Grammar (whitespace-insensitive, ``*`` binds tighter than ``+``)::

    expr   := term ("+" term)*
    term   := factor ("*" factor)*
    factor := atom | "(" expr ")"
    atom   := FAMILY "_" DIM [ "{" name "=" number ("," name "=" number)* "}" ]

``FAMILY`` is one of SE, PER, LIN, RQ (case-insensitive) and ``DIM`` is the
1-based input dimension. Parameter annotations are linear-space values::

    SE_1{sf=1, ell=0.5}           sf: signal variance, ell: lengthscale
    PER_1{sf=1, ell=1, p=12}      p: period
    LIN_1{sb=0.1, sv=1, loc=0}    sb/sv: offset/slope variance, loc: location
    RQ_2{sf=1, ell=3, alpha=0.5}

Omitted parameters take the family defaults (1 for variances, lengthscales,
periods and shapes; 0 for the LIN location).
"""
import math
import re

from ._accel import FAMILIES
from .errors import ExprSyntaxError
from .kernels import (LOG_SPACE, PARAM_NAMES, Base, Product, Sum, add,
                      canonical_form, default_params, linear_params, multiply)

_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_WORD = re.compile(r"[A-Za-z]+")
_DIGITS = re.compile(r"\d+")


def log_exact(value):
    """Log of ``value`` nudged by a few ulps so that ``exp`` maps back exactly.

    Falls back to the plain log when no nearby float round-trips.
    """
    theta = math.log(value)
    if math.exp(theta) == value:
        return theta
    up = down = theta
    for _ in range(8):
        up = math.nextafter(up, math.inf)
        if math.exp(up) == value:
            return up
        down = math.nextafter(down, -math.inf)
        if math.exp(down) == value:
            return down
    return theta


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, message, expected=(), pos=None):
        raise ExprSyntaxError(message, self.text, self.pos if pos is None else pos,
                              expected)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char):
        if self.peek() != char:
            found = repr(self.peek()) if self.peek() else "end of input"
            self.error(f"unexpected {found}", (repr(char),))
        self.pos += 1

    def parse(self):
        expr = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}", ("'+'", "'*'", "end of input"))
        return expr

    def expr(self):
        terms = [self.term()]
        while self.peek() == "+":
            self.pos += 1
            terms.append(self.term())
        return add(*terms)

    def term(self):
        factors = [self.factor()]
        while self.peek() == "*":
            self.pos += 1
            factors.append(self.factor())
        return multiply(*factors)

    def factor(self):
        char = self.peek()
        if char == "(":
            self.pos += 1
            inner = self.expr()
            self.expect(")")
            return inner
        if char.isalpha():
            return self.atom()
        found = repr(char) if char else "end of input"
        self.error(f"unexpected {found}", ("'('", "kernel name"))

    def atom(self):
        start = self.pos
        word = _WORD.match(self.text, self.pos).group()
        family = word.upper()
        if family not in FAMILIES:
            self.error(f"unknown kernel family {word!r}", FAMILIES, pos=start)
        self.pos += len(word)
        if self.pos >= len(self.text) or self.text[self.pos] != "_":
            self.error("missing dimension subscript", ("'_'",))
        self.pos += 1
        digits = _DIGITS.match(self.text, self.pos)
        if digits is None:
            self.error("missing dimension number", ("integer >= 1",))
        dim = int(digits.group())
        if dim < 1:
            self.error(f"dimension must be >= 1, got {dim}", ("integer >= 1",))
        self.pos = digits.end()
        params = default_params(family)
        if self.peek() == "{":
            params = self.annotations(family)
        return Base(family, dim - 1, params)

    def annotations(self, family):
        names = PARAM_NAMES[family]
        is_log = LOG_SPACE[family]
        values = list(default_params(family))
        self.expect("{")
        while True:
            self.skip()
            key_start = self.pos
            word = _WORD.match(self.text, self.pos)
            if word is None or word.group() not in names:
                self.error(f"unknown parameter for {family}", names, pos=key_start)
            self.pos = word.end()
            self.expect("=")
            self.skip()
            num = _NUMBER.match(self.text, self.pos)
            if num is None:
                self.error("expected a number", ("number",))
            value = float(num.group())
            idx = names.index(word.group())
            if is_log[idx]:
                if not value > 0 or math.isinf(value):
                    self.error(f"{word.group()} must be positive and finite",
                               pos=num.start())
                values[idx] = log_exact(value)
            else:
                values[idx] = value
            self.pos = num.end()
            if self.peek() == ",":
                self.pos += 1
                continue
            self.expect("}")
            return tuple(values)


def parse(text):
    """Parse expression text into a kernel expression."""
    return _Parser(text).parse()


def _fmt(value):
    return "%.17g" % value


def _atom(leaf, with_params):
    out = f"{leaf.family}_{leaf.dim + 1}"
    if with_params and leaf.params is not None:
        pairs = ", ".join(f"{name}={_fmt(v)}" for name, v in
                          zip(PARAM_NAMES[leaf.family], linear_params(leaf)))
        out += "{" + pairs + "}"
    return out


def _format(expr, with_params):
    if isinstance(expr, Base):
        return _atom(expr, with_params)
    if isinstance(expr, Sum):
        return " + ".join(_format(c, with_params) for c in expr.children)
    parts = []
    for child in expr.children:
        text = _format(child, with_params)
        parts.append(f"({text})" if isinstance(child, Sum) else text)
    return " * ".join(parts)


def format_expr(expr, with_params=False, canonical=True):
    """Print an expression; parentheses appear only where precedence needs them."""
    if canonical:
        expr = canonical_form(expr)
    return _format(expr, with_params)


__all__ = ["parse", "format_expr", "log_exact", "Base", "Sum", "Product"]
