"""Parse SMT-LIB text in the supported fragment into sorted terms."""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from ..errors import SmtSyntaxError, SortError, UnknownSymbol
from . import sexp
from .terms import (
    BINARY_OPS,
    BOOL,
    BUILTIN_SORTS,
    FALSE,
    TRUE,
    And,
    App,
    Constructor,
    Implies,
    IntLit,
    Not,
    Or,
    RealLit,
    Sort,
    Term,
    Var,
    datatype_sort,
    print_term,
)

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
NUMERAL_RE = re.compile(r"[0-9]+\Z")
DECIMAL_RE = re.compile(r"[0-9]+\.[0-9]+\Z")

RESERVED = frozenset(
    {
        "true", "false", "and", "or", "not", "Bool", "Int", "Real",
        "let", "forall", "exists", "ite", "assert", "distinct", "xor",
        "par", "match", "as", "_", "NUMERAL", "DECIMAL", "STRING",
    }
)


def is_identifier(name: str) -> bool:
    return bool(IDENT_RE.match(name)) and name not in RESERVED


@dataclass(frozen=True)
class DatatypeDecl:
    name: str
    constructors: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "constructors", tuple(self.constructors))
        if not is_identifier(self.name):
            raise ValueError(f"invalid datatype name {self.name!r}")
        if not self.constructors:
            raise ValueError(f"datatype {self.name} needs at least one constructor")
        if len(set(self.constructors)) != len(self.constructors):
            raise ValueError(f"datatype {self.name} repeats a constructor")
        for c in self.constructors:
            if not is_identifier(c):
                raise ValueError(f"invalid constructor name {c!r}")

    @property
    def sort(self) -> Sort:
        return datatype_sort(self.name)


@dataclass(frozen=True)
class ConstDecl:
    name: str
    sort: Sort

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise ValueError(f"invalid variable name {self.name!r}")


Declaration = DatatypeDecl | ConstDecl


class Env:
    """Name resolution for variables, constructors and datatype sorts."""

    def __init__(self, declarations: Iterable[Declaration] = ()):
        self.variables: dict[str, Sort] = {}
        self.constructors: dict[str, Sort] = {}
        self.datatypes: dict[str, DatatypeDecl] = {}
        for d in declarations:
            self.add(d)

    def add(self, decl: Declaration) -> None:
        if decl.name in self.variables or decl.name in self.datatypes or decl.name in self.constructors:
            raise ValueError(f"{decl.name!r} is declared more than once")
        if isinstance(decl, DatatypeDecl):
            for c in decl.constructors:
                if c in self.constructors or c in self.variables or c in self.datatypes:
                    raise ValueError(f"constructor {c!r} clashes with an existing name")
            self.datatypes[decl.name] = decl
            for c in decl.constructors:
                self.constructors[c] = decl.sort
        else:
            s = decl.sort
            if s.is_datatype and s.name not in self.datatypes:
                raise ValueError(f"variable {decl.name!r} uses undeclared datatype {s.name!r}")
            if decl.name in self.constructors:
                raise ValueError(f"{decl.name!r} clashes with a constructor")
            self.variables[decl.name] = s

    @classmethod
    def of(cls, variables: Mapping[str, Sort], datatypes: Iterable[DatatypeDecl] = ()) -> "Env":
        env = cls(datatypes)
        for name, s in variables.items():
            env.add(ConstDecl(name, s))
        return env

    def resolve_sort(self, name: str) -> Sort:
        if name in BUILTIN_SORTS:
            return BUILTIN_SORTS[name]
        if name in self.datatypes:
            return self.datatypes[name].sort
        raise UnknownSymbol(name, _suggest(name, list(BUILTIN_SORTS) + list(self.datatypes)))

    def names(self) -> list[str]:
        return list(self.variables) + list(self.constructors)


def _suggest(name: str, candidates: list[str]) -> str | None:
    hits = difflib.get_close_matches(name, candidates, n=1, cutoff=0.6)
    if hits:
        return hits[0]
    lower = {c.lower(): c for c in candidates}
    return lower.get(name.lower())


# ------------------------------------------------------------------ terms


def parse_term(text: str, env: Env) -> Term:
    """Parse one term and check its sorts against ``env``."""
    node = sexp.read_one(text)
    return _build(node, env, text)


def _build(node, env: Env, text: str) -> Term:
    kind, value, start, end = node
    if kind == sexp.STRING:
        raise SmtSyntaxError("string literals are not part of the fragment", start, text)
    if kind == sexp.ATOM:
        return _atom(value, start, env, text)
    if not value:
        raise SmtSyntaxError("empty application '()'", start, text)
    head = value[0]
    if head[0] != sexp.ATOM:
        raise SmtSyntaxError("operator position must hold a symbol", head[2], text)
    op = head[1]
    args = value[1:]
    if op in ("forall", "exists", "let", "!", "ite", "distinct", "match", "as", "_"):
        raise SmtSyntaxError(f"'{op}' is outside the supported fragment", head[2], text)
    if op not in ("and", "or", "not", "=>") and op not in BINARY_OPS:
        if IDENT_RE.match(op):
            raise SmtSyntaxError(f"uninterpreted function application '{op}' is not supported", head[2], text)
        raise SmtSyntaxError(f"unknown operator '{op}'", head[2], text)

    arity_ok = (
        (op in ("and", "or") and len(args) >= 2)
        or (op == "not" and len(args) == 1)
        or (op == "-" and len(args) in (1, 2))
        or (op not in ("and", "or", "not", "-") and len(args) == 2)
    )
    if not arity_ok:
        raise SmtSyntaxError(f"wrong number of arguments for '{op}' ({len(args)})", start, text)

    children = [_build(a, env, text) for a in args]
    child_nodes = list(args)
    if op == "-" and len(children) == 1:
        # unary minus is sugar for (- 0 e)
        zero = IntLit(0) if children[0].sort.name == "Int" else RealLit(Fraction(0))
        children.insert(0, zero)
        child_nodes.insert(0, head)
    try:
        if op == "and":
            return And(tuple(children))
        if op == "or":
            return Or(tuple(children))
        if op == "not":
            return Not(children[0])
        if op == "=>":
            return Implies(children[0], children[1])
        return App(op, children[0], children[1])
    except SortError as exc:
        idx = exc.arg_index if exc.arg_index is not None else 0
        bad = child_nodes[min(idx, len(child_nodes) - 1)]
        raise SortError(exc.message, subterm=sexp.node_text(bad, text), position=bad[2], arg_index=idx) from None


def _atom(tok: str, pos: int, env: Env, text: str) -> Term:
    if tok == "true":
        return TRUE
    if tok == "false":
        return FALSE
    if NUMERAL_RE.match(tok):
        return IntLit(int(tok))
    if DECIMAL_RE.match(tok):
        return RealLit(Fraction(tok))
    if IDENT_RE.match(tok) and tok not in RESERVED:
        if tok in env.variables:
            return Var(tok, env.variables[tok])
        if tok in env.constructors:
            return Constructor(tok, env.constructors[tok])
        raise UnknownSymbol(tok, _suggest(tok, env.names()), pos)
    if tok in RESERVED:
        raise SmtSyntaxError(f"reserved word '{tok}' used as a term", pos, text)
    raise SmtSyntaxError(f"invalid token '{tok}'", pos, text)


# ---------------------------------------------------------------- scripts


@dataclass(frozen=True)
class Script:
    declarations: tuple[Declaration, ...]
    assertions: tuple[Term, ...]

    def env(self) -> Env:
        return Env(self.declarations)


def parse_script(text: str) -> Script:
    """Parse ``declare-datatype``/``declare-const`` commands then ``assert`` commands.

    Both the compact constructor list ``(A B)`` and the standard form
    ``((A) (B))`` are accepted for datatypes.
    """
    env = Env()
    decls: list[Declaration] = []
    asserts: list[Term] = []
    for node in sexp.read_all(text):
        kind, items, start, _ = node
        if kind != sexp.LIST or not items or items[0][0] != sexp.ATOM:
            raise SmtSyntaxError("expected a command", start, text)
        cmd = items[0][1]
        if cmd in ("declare-datatype", "declare-const"):
            if asserts:
                raise SmtSyntaxError("declarations must precede assertions", start, text)
            decl = _parse_decl(node, env, text)
            try:
                env.add(decl)
            except ValueError as exc:
                raise SmtSyntaxError(str(exc), start, text) from None
            decls.append(decl)
        elif cmd == "assert":
            if len(items) != 2:
                raise SmtSyntaxError("assert takes one term", start, text)
            t = _build(items[1], env, text)
            if t.sort != BOOL:
                raise SortError(f"assertion must be Bool, got {t.sort}", sexp.node_text(items[1], text), items[1][2])
            asserts.append(t)
        else:
            raise SmtSyntaxError(f"unsupported command '{cmd}'", items[0][2], text)
    return Script(tuple(decls), tuple(asserts))


def _parse_decl(node, env: Env, text: str) -> Declaration:
    _, items, start, _ = node
    cmd = items[0][1]
    if len(items) != 3 or items[1][0] != sexp.ATOM:
        raise SmtSyntaxError(f"malformed {cmd}", start, text)
    name = items[1][1]
    if not is_identifier(name):
        raise SmtSyntaxError(f"invalid identifier '{name}'", items[1][2], text)
    if cmd == "declare-const":
        if items[2][0] != sexp.ATOM:
            raise SmtSyntaxError("sort must be a symbol", items[2][2], text)
        try:
            s = env.resolve_sort(items[2][1])
        except UnknownSymbol as exc:
            raise UnknownSymbol(exc.name, exc.suggestion, items[2][2]) from None
        return ConstDecl(name, s)
    ctor_list = items[2]
    if ctor_list[0] != sexp.LIST or not ctor_list[1]:
        raise SmtSyntaxError("datatype needs a nonempty constructor list", ctor_list[2], text)
    ctors = []
    for c in ctor_list[1]:
        if c[0] == sexp.ATOM:
            ctors.append(c[1])
        elif c[0] == sexp.LIST and len(c[1]) == 1 and c[1][0][0] == sexp.ATOM:
            ctors.append(c[1][0][1])
        else:
            raise SmtSyntaxError("only nullary constructors are supported", c[2], text)
    try:
        return DatatypeDecl(name, tuple(ctors))
    except ValueError as exc:
        raise SmtSyntaxError(str(exc), ctor_list[2], text) from None


def print_declaration(decl: Declaration) -> str:
    if isinstance(decl, DatatypeDecl):
        ctors = " ".join(f"({c})" for c in decl.constructors)
        return f"(declare-datatype {decl.name} ({ctors}))"
    return f"(declare-const {decl.name} {decl.sort.name})"


def print_script(script: Script) -> str:
    lines = [print_declaration(d) for d in script.declarations]
    lines += [f"(assert {print_term(t)})" for t in script.assertions]
    return "\n".join(lines) + ("\n" if lines else "")
