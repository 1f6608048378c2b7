"""The parse/sort gate around translator backends, plus the repair loop."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from ..errors import (
    FormatError,
    MalformedOutput,
    ModelError,
    SmtSyntaxError,
    SortError,
    UnknownSymbol,
)
from ..logic import (
    BOOL,
    ConstDecl,
    DatatypeDecl,
    Env,
    Term,
    constructors_used,
    free_vars,
    parse_term,
)
from ..logic import sexp
from ..model import PolicyModel, PolicyUnit, Rule, VariableSpec, sort_from_json
from .backends import Backend, RawOutput
from .types import ClaimPair, Translation

log = logging.getLogger(__name__)

DEFAULT_REPAIR_BUDGET = 3

GateError = (SmtSyntaxError, SortError, UnknownSymbol, ModelError, FormatError, ValueError, KeyError, TypeError)


def _diagnose(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def repair(
    invalid_output: str,
    failure: str,
    backend: Backend,
    budget: int = DEFAULT_REPAIR_BUDGET,
    check: Callable[[str], Any] | None = None,
):
    """Ask ``backend`` to fix ``invalid_output`` until ``check`` accepts it.

    Returns ``(output, checked)`` where ``checked`` is what ``check`` returned.
    Raises ``MalformedOutput`` carrying one diagnostic per failed attempt.
    """
    if budget < 1:
        raise ValueError("repair budget must be at least 1")
    check = check or sexp.read_all
    diagnostics: list[str] = []
    current, diagnostic = invalid_output, failure
    for _ in range(budget):
        output = backend.repair(current, diagnostic)
        try:
            return output, check(output)
        except GateError as exc:
            diagnostic = _diagnose(exc)
            diagnostics.append(diagnostic)
            current = output
    raise MalformedOutput(f"output still invalid after {budget} repair attempt(s)", diagnostics)


def parse_bool_term(text: str, env: Env) -> Term:
    term = parse_term(text, env)
    if term.sort != BOOL:
        raise SortError(f"expected a Bool term, got {term.sort}", text)
    return term


def _gated_term(text: str, env: Env, backend: Backend, budget: int) -> Term:
    try:
        return parse_bool_term(text, env)
    except GateError as exc:
        _, term = repair(text, _diagnose(exc), backend, budget, lambda out: parse_bool_term(out, env))
        return term


# --------------------------------------------------------------- claims


def parse_translation_block(text: str) -> dict:
    """``(claim P C)`` / ``(claim C)`` / ``(untranslatable "...")`` lines to a dict."""
    pairs: list[dict] = []
    untranslatable: list[str] = []
    for node in sexp.read_all(text):
        kind, items, start, _ = node
        if kind != sexp.LIST or not items or items[0][0] != sexp.ATOM:
            raise SmtSyntaxError("expected (claim ...) or (untranslatable ...)", start, text)
        head = items[0][1]
        if head == "claim" and len(items) in (2, 3):
            parts = [sexp.node_text(n, text) for n in items[1:]]
            if len(parts) == 1:
                parts.insert(0, "true")
            pairs.append({"premise": parts[0], "conclusion": parts[1]})
        elif head == "untranslatable" and len(items) == 2 and items[1][0] == sexp.STRING:
            untranslatable.append(items[1][1])
        else:
            raise SmtSyntaxError(f"unexpected entry '{head}'", start, text)
    return {"pairs": pairs, "untranslatable": untranslatable}


def _coerce_translation(raw: RawOutput) -> dict:
    if isinstance(raw, dict):
        return raw
    stripped = raw.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    return parse_translation_block(raw)


def translate_claims(
    text: str,
    model: PolicyModel,
    backend: Backend,
    budget: int = DEFAULT_REPAIR_BUDGET,
) -> Translation:
    """Translate ``text`` into claim pairs that parse and sort-check against ``model``."""
    if not text.strip():
        raise ValueError("text to translate is empty")
    env = model.env()
    raw = backend.translate(text, model)
    try:
        data = _coerce_translation(raw)
    except GateError as exc:
        invalid = raw if isinstance(raw, str) else json.dumps(raw, sort_keys=True)
        _, data = repair(invalid, _diagnose(exc), backend, budget, _coerce_translation)
    if not isinstance(data, dict) or not isinstance(data.get("pairs", []), list):
        raise MalformedOutput("translation output must be an object with a 'pairs' list")
    pairs = []
    for entry in data.get("pairs", []):
        if not isinstance(entry, dict) or "conclusion" not in entry:
            raise MalformedOutput(f"malformed pair entry {entry!r}")
        premise_text = entry.get("premise") or "true"
        premise = _gated_term(premise_text, env, backend, budget)
        conclusion = _gated_term(entry["conclusion"], env, backend, budget)
        pairs.append(ClaimPair(premise, conclusion, None, entry.get("source", text)))
    untranslatable = [str(s) for s in data.get("untranslatable", [])]
    if not pairs and not untranslatable:
        untranslatable = [text]
    return Translation(tuple(pairs), tuple(untranslatable), getattr(backend, "name", ""))


# ----------------------------------------------------------------- units


def parse_unit_block(text: str) -> dict:
    """Declarations, ``describe`` lines and assertions to the unit dict layout."""
    datatypes: list[dict] = []
    variables: dict[str, dict] = {}
    descriptions: dict[str, str] = {}
    rules: list[dict] = []
    for node in sexp.read_all(text):
        kind, items, start, _ = node
        if kind != sexp.LIST or not items or items[0][0] != sexp.ATOM:
            raise SmtSyntaxError("expected a command", start, text)
        cmd = items[0][1]
        if cmd == "declare-datatype" and len(items) == 3 and items[2][0] == sexp.LIST:
            ctors = []
            for c in items[2][1]:
                if c[0] == sexp.ATOM:
                    ctors.append(c[1])
                elif c[0] == sexp.LIST and len(c[1]) == 1:
                    ctors.append(c[1][0][1])
                else:
                    raise SmtSyntaxError("only nullary constructors are supported", c[2], text)
            datatypes.append({"name": items[1][1], "constructors": ctors})
        elif cmd == "declare-const" and len(items) == 3 and items[2][0] == sexp.ATOM:
            sort_name = items[2][1]
            builtin = sort_name in ("Bool", "Int", "Real")
            variables[items[1][1]] = {"name": items[1][1], "sort": sort_name if builtin else {"datatype": sort_name}}
        elif cmd == "describe" and len(items) == 3 and items[2][0] == sexp.STRING:
            descriptions[items[1][1]] = items[2][1]
        elif cmd == "assert" and len(items) == 2:
            rules.append({"smtlib": sexp.node_text(items[1], text)})
        elif cmd == "rule" and len(items) == 3 and items[1][0] == sexp.ATOM:
            rules.append({"id": items[1][1], "smtlib": sexp.node_text(items[2], text)})
        else:
            raise SmtSyntaxError(f"unsupported or malformed command '{cmd}'", start, text)
    for name, v in variables.items():
        v["description"] = descriptions.get(name, "")
    return {"datatypes": datatypes, "variables": list(variables.values()), "rules": rules}


def _coerce_unit(raw: RawOutput) -> dict:
    if isinstance(raw, dict):
        return raw
    stripped = raw.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    return parse_unit_block(raw)


def build_unit(data: dict, context: PolicyModel, id_prefix: str = "", provenance: str | None = None) -> PolicyUnit:
    """Check a unit dict against ``context`` and return a self-contained unit.

    Context declarations are reused: re-declaring one with the same sort is
    dropped, a conflicting sort is an error.  Context declarations the rules
    use are copied into the unit so it is well-formed on its own.
    """
    if not isinstance(data, dict):
        raise FormatError("unit must be an object")
    ctx_types = {d.name: d for d in context.datatypes}
    ctx_vars = {v.name: v for v in context.variables}

    new_types: list[DatatypeDecl] = []
    for d in data.get("datatypes", []):
        decl = DatatypeDecl(d["name"], tuple(d["constructors"]))
        if decl.name in ctx_types:
            if ctx_types[decl.name].constructors != decl.constructors:
                raise ModelError(f"datatype {decl.name} conflicts with the existing declaration")
            continue
        if any(t.name == decl.name for t in new_types):
            continue
        new_types.append(decl)

    new_vars: list[VariableSpec] = []
    for v in data.get("variables", []):
        s = sort_from_json(v.get("sort"))
        if v["name"] in ctx_vars:
            if ctx_vars[v["name"]].sort != s:
                raise ModelError(f"variable {v['name']} conflicts with the existing declaration")
            continue
        if any(x.name == v["name"] for x in new_vars):
            raise ModelError(f"variable {v['name']} is declared twice")
        new_vars.append(VariableSpec(v["name"], s, v.get("description", "")))

    env = Env([*context.datatypes, *new_types])
    for v in (*context.variables, *new_vars):
        env.add(ConstDecl(v.name, v.sort))

    rules: list[Rule] = []
    seen: set[str] = set()
    for n, r in enumerate(data.get("rules", []), start=1):
        term = parse_bool_term(r["smtlib"], env)
        rid = r.get("id") or f"{id_prefix}r{n}"
        if term in (x.term for x in rules):
            continue
        if rid in seen:
            raise ModelError(f"rule id {rid} is used twice")
        seen.add(rid)
        rules.append(Rule(rid, term, provenance))

    used_vars = set().union(*(free_vars(r.term) for r in rules)) if rules else set()
    used_ctors = set().union(*(constructors_used(r.term) for r in rules)) if rules else set()
    copied_vars = [v for v in context.variables if v.name in used_vars]
    needed_types = {v.sort.name for v in copied_vars if v.sort.is_datatype}
    needed_types |= {d.name for d in context.datatypes if set(d.constructors) & used_ctors}
    needed_types |= {v.sort.name for v in new_vars if v.sort.is_datatype}
    copied_types = [d for d in context.datatypes if d.name in needed_types]
    return PolicyUnit(tuple([*copied_types, *new_types]), tuple([*copied_vars, *new_vars]), tuple(rules))


def formalize_span(
    span: str,
    context: PolicyModel | None,
    backend: Backend,
    budget: int = DEFAULT_REPAIR_BUDGET,
    id_prefix: str = "",
    provenance: str | None = None,
    attempts: list | None = None,
) -> PolicyUnit:
    """Formalize one span.  ``attempts`` (if given) receives repair diagnostics."""
    context = context or PolicyModel()
    if not span.strip():
        return PolicyUnit()
    raw = backend.formalize(span, context)

    def check(out: RawOutput) -> PolicyUnit:
        return build_unit(_coerce_unit(out), context, id_prefix, provenance)

    try:
        return check(raw)
    except GateError as exc:
        if attempts is not None:
            attempts.append(_diagnose(exc))
        invalid = raw if isinstance(raw, str) else json.dumps(raw, sort_keys=True, ensure_ascii=False)
        try:
            _, unit = repair(invalid, _diagnose(exc), backend, budget, check)
        except MalformedOutput as mal:
            if attempts is not None:
                attempts.extend(mal.diagnostics)
            raise
        return unit


# ------------------------------------------------------------ revisions


def revise_answer(question: str, answer: str, feedback: str, backend: Backend) -> str:
    revised = backend.revise(question, answer, feedback)
    if not isinstance(revised, str) or not revised.strip():
        raise MalformedOutput("backend returned an empty revision")
    return revised.strip()


def parse_edit_block(text: str) -> dict:
    """Policy edit commands (``rule``, ``remove-rule``, declarations) to a dict."""
    unit = {"datatypes": [], "variables": [], "rules": [], "remove_rules": []}
    keep = []
    for node in sexp.read_all(text):
        kind, items, start, _ = node
        if kind == sexp.LIST and items and items[0][1] == "remove-rule" and len(items) == 2:
            unit["remove_rules"].append(items[1][1])
        else:
            keep.append(sexp.node_text(node, text))
    parsed = parse_unit_block("\n".join(keep))
    for key in ("datatypes", "variables", "rules"):
        unit[key] = parsed[key]
    return unit


def coerce_edit(raw: RawOutput) -> dict:
    if isinstance(raw, dict):
        return raw
    stripped = raw.strip()
    if stripped.startswith("{"):
        return json.loads(stripped)
    return parse_edit_block(raw)


# ------------------------------------------------------------------ pool


@dataclass
class TranslatorPool:
    """k independent backends queried concurrently for redundant translation."""

    backends: Sequence[Backend]
    repair_budget: int = DEFAULT_REPAIR_BUDGET
    max_workers: int | None = None
    failures: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.backends:
            raise ValueError("a translator pool needs at least one backend")

    @property
    def k(self) -> int:
        return len(self.backends)

    @property
    def primary(self) -> Backend:
        return self.backends[0]

    def translate_all(self, text: str, model: PolicyModel) -> list[Translation]:
        """One translation per backend, in backend order.

        A backend whose output cannot be repaired contributes an empty
        translation (the text is reported untranslatable); backend outages
        propagate.
        """

        def one(backend: Backend) -> Translation:
            try:
                return translate_claims(text, model, backend, self.repair_budget)
            except MalformedOutput as exc:
                msg = f"{getattr(backend, 'name', backend)}: {exc} {exc.diagnostics}"
                log.warning("translation dropped: %s", msg)
                self.failures.append(msg)
                return Translation((), (text,), getattr(backend, "name", ""))

        if len(self.backends) == 1:
            return [one(self.backends[0])]
        with ThreadPoolExecutor(max_workers=self.max_workers or len(self.backends)) as ex:
            return list(ex.map(one, self.backends))
