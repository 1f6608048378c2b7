"""Exact evaluation of ground terms under a variable assignment."""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping

from ..errors import PolicyGuardError
from .terms import And, App, BoolLit, Constructor, Implies, IntLit, Not, Or, RealLit, Term, Value, Var


class EvaluationError(PolicyGuardError):
    pass


def evaluate(term: Term, assignment: Mapping[str, Value]) -> Value:
    """Evaluate ``term``; arithmetic is exact and ``/`` is rational division."""
    if isinstance(term, Var):
        try:
            v = assignment[term.name]
        except KeyError:
            raise EvaluationError(f"no value for {term.name}") from None
        if not isinstance(v, (bool, int, Fraction, str)):
            raise EvaluationError(f"value of {term.name} is not exactly representable: {v}")
        return v
    if isinstance(term, Constructor):
        return term.name
    if isinstance(term, (BoolLit, IntLit, RealLit)):
        return term.value
    if isinstance(term, Not):
        return not evaluate(term.arg, assignment)
    if isinstance(term, And):
        return all(evaluate(a, assignment) for a in term.args)
    if isinstance(term, Or):
        return any(evaluate(a, assignment) for a in term.args)
    if isinstance(term, Implies):
        return (not evaluate(term.lhs, assignment)) or bool(evaluate(term.rhs, assignment))
    if isinstance(term, App):
        a = evaluate(term.lhs, assignment)
        b = evaluate(term.rhs, assignment)
        op = term.op
        if op == "=":
            return a == b
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                raise EvaluationError("division by zero has no fixed value")
            return Fraction(a) / Fraction(b)
        if op == ">":
            return a > b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">=":
            return a >= b
    raise TypeError(f"cannot evaluate {term!r}")
