"""Sorted, quantifier-free terms over Bool, Int, Real and enumerated datatypes.

Every node checks the sorts of its children on construction, so any ``Term``
that exists is well-sorted.  Real literals are exact (``Fraction``) and must
have a terminating decimal expansion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping, Union

from ..errors import SortError


@dataclass(frozen=True)
class Sort:
    name: str
    is_datatype: bool = False

    def __str__(self) -> str:
        return self.name

    @property
    def is_numeric(self) -> bool:
        return not self.is_datatype and self.name in ("Int", "Real")


BOOL = Sort("Bool")
INT = Sort("Int")
REAL = Sort("Real")
BUILTIN_SORTS = {"Bool": BOOL, "Int": INT, "Real": REAL}


def datatype_sort(name: str) -> Sort:
    return Sort(name, is_datatype=True)


ARITH_OPS = ("+", "-", "*", "/")
CMP_OPS = (">", "<", "<=", ">=")
BINARY_OPS = ARITH_OPS + CMP_OPS + ("=",)


class Term:
    """Base class for all term nodes."""

    __slots__ = ()
    sort: Sort

    def __str__(self) -> str:
        return print_term(self)

    def children(self) -> tuple["Term", ...]:
        return ()


@dataclass(frozen=True)
class Var(Term):
    name: str
    sort: Sort


@dataclass(frozen=True)
class Constructor(Term):
    """A datatype constructor (enumerated value)."""

    name: str
    sort: Sort


@dataclass(frozen=True)
class BoolLit(Term):
    value: bool
    sort: Sort = field(default=BOOL, init=False, repr=False)


@dataclass(frozen=True)
class IntLit(Term):
    value: int
    sort: Sort = field(default=INT, init=False, repr=False)

    def __post_init__(self) -> None:
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            raise TypeError("IntLit expects an int")
        if self.value < 0:
            raise ValueError("numeric literals are non-negative; write (- 0 n)")


@dataclass(frozen=True)
class RealLit(Term):
    value: Fraction
    sort: Sort = field(default=REAL, init=False, repr=False)

    def __post_init__(self) -> None:
        value = Fraction(self.value)
        if value < 0:
            raise ValueError("numeric literals are non-negative; write (- 0.0 r)")
        if not is_terminating(value):
            raise ValueError(f"{value} has no finite decimal expansion")
        object.__setattr__(self, "value", value)


def _require(cond: bool, message: str, index: int | None = None) -> None:
    if not cond:
        raise SortError(message, arg_index=index)


@dataclass(frozen=True)
class And(Term):
    args: tuple[Term, ...]
    sort: Sort = field(default=BOOL, init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        _require(len(self.args) >= 2, "'and' takes at least two arguments")
        for i, a in enumerate(self.args):
            _require(a.sort == BOOL, f"argument {i + 1} of 'and' must be Bool, got {a.sort}", i)

    def children(self) -> tuple[Term, ...]:
        return self.args


@dataclass(frozen=True)
class Or(Term):
    args: tuple[Term, ...]
    sort: Sort = field(default=BOOL, init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        _require(len(self.args) >= 2, "'or' takes at least two arguments")
        for i, a in enumerate(self.args):
            _require(a.sort == BOOL, f"argument {i + 1} of 'or' must be Bool, got {a.sort}", i)

    def children(self) -> tuple[Term, ...]:
        return self.args


@dataclass(frozen=True)
class Not(Term):
    arg: Term
    sort: Sort = field(default=BOOL, init=False, repr=False)

    def __post_init__(self) -> None:
        _require(self.arg.sort == BOOL, f"argument of 'not' must be Bool, got {self.arg.sort}", 0)

    def children(self) -> tuple[Term, ...]:
        return (self.arg,)


@dataclass(frozen=True)
class Implies(Term):
    lhs: Term
    rhs: Term
    sort: Sort = field(default=BOOL, init=False, repr=False)

    def __post_init__(self) -> None:
        _require(self.lhs.sort == BOOL, f"argument 1 of '=>' must be Bool, got {self.lhs.sort}", 0)
        _require(self.rhs.sort == BOOL, f"argument 2 of '=>' must be Bool, got {self.rhs.sort}", 1)

    def children(self) -> tuple[Term, ...]:
        return (self.lhs, self.rhs)


@dataclass(frozen=True)
class App(Term):
    """Binary arithmetic, comparison or equality."""

    op: str
    lhs: Term
    rhs: Term
    sort: Sort = field(init=False, repr=False)

    def __post_init__(self) -> None:
        op, a, b = self.op, self.lhs, self.rhs
        if op == "=":
            ok = (a.sort.is_numeric and b.sort.is_numeric) or a.sort == b.sort
            _require(ok, f"'=' cannot compare {a.sort} with {b.sort}", 1)
            result = BOOL
        elif op in ARITH_OPS or op in CMP_OPS:
            _require(a.sort.is_numeric, f"argument 1 of '{op}' must be numeric, got {a.sort}", 0)
            _require(b.sort.is_numeric, f"argument 2 of '{op}' must be numeric, got {b.sort}", 1)
            if op in CMP_OPS:
                result = BOOL
            elif op == "/" or REAL in (a.sort, b.sort):
                # '/' is real division; Int operands are coerced.
                result = REAL
            else:
                result = INT
        else:
            raise ValueError(f"unknown operator {op!r}")
        object.__setattr__(self, "sort", result)

    def children(self) -> tuple[Term, ...]:
        return (self.lhs, self.rhs)


TRUE = BoolLit(True)
FALSE = BoolLit(False)

Value = Union[bool, int, Fraction, str]


# ---------------------------------------------------------------- helpers


def is_terminating(value: Fraction) -> bool:
    d = value.denominator
    for p in (2, 5):
        while d % p == 0:
            d //= p
    return d == 1


def format_decimal(value: Fraction) -> str:
    """Exact decimal text for a terminating fraction, always with a point."""
    value = Fraction(value)
    sign = "-" if value < 0 else ""
    value = abs(value)
    if not is_terminating(value):
        raise ValueError(f"{value} has no finite decimal expansion")
    digits = 0
    while (value * 10**digits).denominator != 1:
        digits += 1
    scaled = int(value * 10**digits)
    if digits == 0:
        return f"{sign}{scaled}.0"
    whole, frac = divmod(scaled, 10**digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


def conj(terms) -> Term:
    terms = [t for t in terms if t != TRUE]
    if not terms:
        return TRUE
    if len(terms) == 1:
        return terms[0]
    return And(tuple(terms))


def iter_subterms(term: Term) -> Iterator[Term]:
    stack = [term]
    while stack:
        t = stack.pop()
        yield t
        stack.extend(reversed(t.children()))


def node_count(term: Term) -> int:
    return sum(1 for _ in iter_subterms(term))


def free_vars(term: Term) -> set[str]:
    return {t.name for t in iter_subterms(term) if isinstance(t, Var)}


def constructors_used(term: Term) -> set[str]:
    return {t.name for t in iter_subterms(term) if isinstance(t, Constructor)}


def rename(term: Term, mapping: Mapping[str, str]) -> Term:
    """Rename variables; names missing from ``mapping`` are kept."""
    if isinstance(term, Var):
        new = mapping.get(term.name)
        return term if new is None else Var(new, term.sort)
    if isinstance(term, (And, Or)):
        return type(term)(tuple(rename(a, mapping) for a in term.args))
    if isinstance(term, Not):
        return Not(rename(term.arg, mapping))
    if isinstance(term, Implies):
        return Implies(rename(term.lhs, mapping), rename(term.rhs, mapping))
    if isinstance(term, App):
        return App(term.op, rename(term.lhs, mapping), rename(term.rhs, mapping))
    return term


def print_term(term: Term) -> str:
    """Canonical single-space prefix rendering."""
    out: list[str] = []
    _emit(term, out)
    return "".join(out)


def _emit(t: Term, out: list[str]) -> None:
    if isinstance(t, (Var, Constructor)):
        out.append(t.name)
    elif isinstance(t, BoolLit):
        out.append("true" if t.value else "false")
    elif isinstance(t, IntLit):
        out.append(str(t.value))
    elif isinstance(t, RealLit):
        out.append(format_decimal(t.value))
    else:
        if isinstance(t, And):
            head = "and"
        elif isinstance(t, Or):
            head = "or"
        elif isinstance(t, Not):
            head = "not"
        elif isinstance(t, Implies):
            head = "=>"
        elif isinstance(t, App):
            head = t.op
        else:  # pragma: no cover
            raise TypeError(f"not a term: {t!r}")
        out.append("(")
        out.append(head)
        for c in t.children():
            out.append(" ")
            _emit(c, out)
        out.append(")")


def value_term(value: Value, sort: Sort) -> Term:
    """Literal term denoting ``value`` of ``sort`` (negatives as ``(- 0 v)``)."""
    if sort == BOOL:
        return BoolLit(bool(value))
    if sort.is_datatype:
        return Constructor(str(value), sort)
    if sort == INT:
        v = int(value)
        return IntLit(v) if v >= 0 else App("-", IntLit(0), IntLit(-v))
    v = Fraction(value)
    mag = abs(v)
    if is_terminating(mag):
        lit: Term = RealLit(mag)
    else:
        lit = App("/", RealLit(Fraction(mag.numerator)), RealLit(Fraction(mag.denominator)))
    return lit if v >= 0 else App("-", RealLit(Fraction(0)), lit)


def format_value(value: Value) -> str:
    """Human/JSON rendering of an assignment value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        if is_terminating(value):
            return format_decimal(value)
        return f"{value.numerator}/{value.denominator}"
    return str(value)
