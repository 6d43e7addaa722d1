"""Multilinear polynomial expressions with exact rational coefficients.

Transition probabilities and state rewards of parametric models are stored as
:class:`MultilinearExpr`.  A monomial is a sorted tuple of parameter indices in
which every index occurs at most once, so extrema over a box are attained at
its vertices.
"""

from __future__ import annotations

import ast
import itertools
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

MAX_VERTEX_PARAMS = 16


class ExprError(ValueError):
    pass


class UndeclaredParameter(ExprError):
    pass


def to_fraction(value) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings, ``a/b`` strings and floats."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ExprError(f"not a number: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # shortest repr keeps "0.05" as 1/20
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ExprError(f"not a number: {value!r}") from exc
    raise ExprError(f"not a number: {value!r}")


def _canonical(terms: Iterable[tuple[Fraction, tuple[int, ...]]]):
    acc: dict[tuple[int, ...], Fraction] = {}
    for coeff, mono in terms:
        acc[mono] = acc.get(mono, Fraction(0)) + coeff
    return tuple(
        (c, m) for m, c in sorted(acc.items(), key=lambda kv: (len(kv[0]), kv[0])) if c != 0
    )


class MultilinearExpr:
    """Sum of ``coefficient * prod(params in monomial)`` terms, kept canonical."""

    __slots__ = ("terms", "_hash")

    def __init__(self, terms=()):
        cleaned = []
        for coeff, mono in terms:
            mono = tuple(mono)
            if len(set(mono)) != len(mono):
                raise ExprError(f"monomial {mono} is not multilinear")
            cleaned.append((to_fraction(coeff), tuple(sorted(mono))))
        self.terms = _canonical(cleaned)
        self._hash = hash(self.terms)

    @classmethod
    def const(cls, value) -> MultilinearExpr:
        return cls([(to_fraction(value), ())])

    @classmethod
    def param(cls, index: int) -> MultilinearExpr:
        return cls([(Fraction(1), (index,))])

    def canonical(self) -> MultilinearExpr:
        return MultilinearExpr(self.terms)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = _coerce(other)
        return MultilinearExpr(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return MultilinearExpr((-c, m) for c, m in self.terms)

    def __sub__(self, other):
        return self + (-_coerce(other))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        out = []
        for c1, m1 in self.terms:
            for c2, m2 in other.terms:
                if set(m1) & set(m2):
                    raise ExprError("product is not multilinear (a parameter would be squared)")
                out.append((c1 * c2, m1 + m2))
        return MultilinearExpr(out)

    __rmul__ = __mul__

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = MultilinearExpr.const(other)
        return isinstance(other, MultilinearExpr) and self.terms == other.terms

    def __hash__(self):
        return self._hash

    # queries ----------------------------------------------------------
    @property
    def params(self) -> frozenset[int]:
        return frozenset(i for _, m in self.terms for i in m)

    def is_constant(self) -> bool:
        return all(not m for _, m in self.terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise ExprError("expression is not constant")
        return self.terms[0][0] if self.terms else Fraction(0)

    def is_zero(self) -> bool:
        return not self.terms

    def evaluate(self, values: Sequence[float] | Mapping[int, float]) -> float:
        total = 0.0
        for coeff, mono in self.terms:
            term = float(coeff)
            for i in mono:
                term *= values[i]
            total += term
        return total

    def evaluate_exact(self, values) -> Fraction:
        total = Fraction(0)
        for coeff, mono in self.terms:
            term = coeff
            for i in mono:
                term *= to_fraction(values[i])
            total += term
        return total

    def substitute(self, values: Mapping[int, object]) -> MultilinearExpr:
        """Replace the given parameters by exact constants."""
        out = []
        for coeff, mono in self.terms:
            c = coeff
            rest = []
            for i in mono:
                if i in values:
                    c *= to_fraction(values[i])
                else:
                    rest.append(i)
            out.append((c, tuple(rest)))
        return MultilinearExpr(out)

    def bounds(self, lower: Sequence[float], upper: Sequence[float]) -> tuple[float, float]:
        """Range of the expression over the box ``[lower, upper]``.

        Exact via vertex enumeration up to ``MAX_VERTEX_PARAMS`` occurring
        parameters, otherwise a sound per-monomial interval enclosure.
        """
        ps = sorted(self.params)
        if not ps:
            v = self.evaluate(())
            return v, v
        if len(ps) <= MAX_VERTEX_PARAMS:
            vals = dict()
            lo = hi = None
            for corner in itertools.product((0, 1), repeat=len(ps)):
                for p, bit in zip(ps, corner):
                    vals[p] = upper[p] if bit else lower[p]
                v = self.evaluate(vals)
                lo = v if lo is None else min(lo, v)
                hi = v if hi is None else max(hi, v)
            return lo, hi
        lo = hi = 0.0
        for coeff, mono in self.terms:
            tlo = thi = float(coeff)
            for i in mono:
                cands = (tlo * lower[i], tlo * upper[i], thi * lower[i], thi * upper[i])
                tlo, thi = min(cands), max(cands)
            lo += tlo
            hi += thi
        return lo, hi

    def to_string(self, names: Sequence[str]) -> str:
        if not self.terms:
            return "0"
        parts = []
        for coeff, mono in self.terms:
            factors = [names[i] for i in mono]
            if not mono:
                body = _fmt(abs(coeff))
            elif abs(coeff) == 1:
                body = "*".join(factors)
            else:
                body = "*".join([_fmt(abs(coeff))] + factors)
            sign = "-" if coeff < 0 else "+"
            parts.append((sign, body))
        out = ("-" if parts[0][0] == "-" else "") + parts[0][1]
        for sign, body in parts[1:]:
            out += f" {sign} {body}"
        return out

    def __repr__(self):
        return f"MultilinearExpr({self.to_string([f'x{i}' for i in range(64)])})"


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _coerce(value) -> MultilinearExpr:
    if isinstance(value, MultilinearExpr):
        return value
    return MultilinearExpr.const(value)


def parse_expr(text: str, params: Sequence[str]) -> MultilinearExpr:
    """Parse an arithmetic expression over the named parameters.

    Supports ``+ - *``, division by constants, parentheses, decimal and
    ``a/b`` literals.  Unknown names raise :class:`ExprError`.
    """
    index = {name: i for i, name in enumerate(params)}
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"cannot parse expression {text!r}") from exc
    return _from_ast(tree.body, index, text)


def _from_ast(node, index, text) -> MultilinearExpr:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        segment = ast.get_source_segment(text.strip(), node)
        return MultilinearExpr.const(to_fraction(segment if segment else node.value))
    if isinstance(node, ast.Name):
        if node.id not in index:
            raise UndeclaredParameter(f"undeclared parameter {node.id!r}")
        return MultilinearExpr.param(index[node.id])
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _from_ast(node.operand, index, text)
        return -inner if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        left = _from_ast(node.left, index, text)
        right = _from_ast(node.right, index, text)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if not right.is_constant() or right.constant_value() == 0:
                raise ExprError("division only by nonzero constants")
            return left * MultilinearExpr.const(1 / right.constant_value())
    raise ExprError(f"unsupported syntax in expression {text!r}")
