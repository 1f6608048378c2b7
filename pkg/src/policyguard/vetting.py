"""Vetting a policy model: lint, structured English, repair, tests, symbolic generation."""

from __future__ import annotations

import datetime as _dt
import json
import logging
import os
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from .errors import (
    DatasetFormat,
    MalformedOutput,
    ModelError,
    ModelUnsat,
    RepairRejected,
    SolverError,
)
from .logic import (
    BOOL,
    TRUE,
    And,
    App,
    BoolLit,
    Constructor,
    Implies,
    IntLit,
    Not,
    Or,
    RealLit,
    Term,
    Var,
    conj,
    format_decimal,
    free_vars,
    print_term,
    value_term,
)
from .model import PolicyModel, Rule, VariableSpec
from .solver import Assignment, Sat, Solver, SolverConfig, Unknown, Unsat, rules_in, witness_holds
from .translator import ClaimPair, TranslatorPool, coerce_edit, qa_text
from .translator.core import GateError, build_unit
from .verifier import Category, FeedbackPayload, VerifierConfig, classify, minimize_core, overall_category, validate

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ lint

UNUSED_VARIABLE = "UNUSED_VARIABLE"
CONTRADICTORY_RULES = "CONTRADICTORY_RULES"
UNSAT_RULE = "UNSAT_RULE"
TAUTOLOGICAL_RULE = "TAUTOLOGICAL_RULE"
DUPLICATE_RULE = "DUPLICATE_RULE"


@dataclass(frozen=True)
class LintItem:
    code: str
    message: str
    subject: str
    core: tuple[str, ...] = ()

    def to_json(self) -> dict:
        out = {"code": self.code, "message": self.message, "subject": self.subject}
        if self.core:
            out["core"] = list(self.core)
        return out


@dataclass
class LintReport:
    errors: list[LintItem] = field(default_factory=list)
    warnings: list[LintItem] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [i.code for i in (*self.errors, *self.warnings)]

    def to_json(self) -> dict:
        return {"errors": [e.to_json() for e in self.errors], "warnings": [w.to_json() for w in self.warnings]}


def lint(model: PolicyModel, solver: Solver | None = None, timeout: float | None = None) -> LintReport:
    """Static and solver-backed checks over ``model``."""
    own = solver is None
    solver = solver or Solver()
    try:
        return _lint(model, solver, timeout)
    finally:
        if own:
            solver.close()


def _lint(model: PolicyModel, solver: Solver, timeout) -> LintReport:
    report = LintReport()
    used: set[str] = set()
    for r in model.rules:
        used |= free_vars(r.term)
    for v in model.variables:
        if v.name not in used:
            report.warnings.append(LintItem(UNUSED_VARIABLE, f"variable {v.name} is declared but no rule mentions it", v.name))

    order = {r.id: i for i, r in enumerate(model.rules)}
    whole = solver.check(model, want_core=True, timeout=timeout)
    if isinstance(whole, Unknown):
        raise SolverError(f"could not decide consistency of the rules: {whole.reason}")
    if isinstance(whole, Unsat):
        core = minimize_core(model, [], whole.core, solver, timeout)
        ids = tuple(sorted(rules_in(core), key=order.__getitem__))
        report.errors.append(
            LintItem(CONTRADICTORY_RULES, f"rules {', '.join(ids)} cannot all hold together", ",".join(ids), ids)
        )

    decls = model.declarations_only()
    flagged: set[str] = set()
    for r in model.rules:
        alone = solver.check(decls, [r.term], timeout=timeout)
        if isinstance(alone, Unsat):
            report.errors.append(LintItem(UNSAT_RULE, f"rule {r.id} can never hold", r.id, (r.id,)))
            flagged.add(r.id)
            continue
        negated = solver.check(decls, [Not(r.term)], timeout=timeout)
        if isinstance(negated, Unsat):
            report.warnings.append(LintItem(TAUTOLOGICAL_RULE, f"rule {r.id} always holds and adds nothing", r.id))
            flagged.add(r.id)

    rest = [r for r in model.rules if r.id not in flagged]
    for i, a in enumerate(rest):
        for b in rest[i + 1:]:
            if not (free_vars(a.term) & free_vars(b.term)):
                continue
            v = solver.check(decls, [Not(App("=", a.term, b.term))], timeout=timeout)
            if isinstance(v, Unsat):
                report.warnings.append(
                    LintItem(DUPLICATE_RULE, f"rules {a.id} and {b.id} are equivalent", f"{a.id},{b.id}", (a.id, b.id))
                )
    return report


# --------------------------------------------------------- structured English

_REL = {"<": "is less than", "<=": "is at most", ">": "is greater than", ">=": "is at least"}
_ARITH = {"+": "plus", "-": "minus", "*": "times", "/": "divided by"}


def _descriptions(schema) -> dict[str, str]:
    if isinstance(schema, PolicyModel):
        schema = schema.variables
    if isinstance(schema, dict):
        return dict(schema)
    return {v.name: v.description for v in schema}


def render_structured_english(rule: Rule | Term, schema: PolicyModel | Sequence[VariableSpec] | dict) -> str:
    """Template rendering of a rule using the variables' descriptions."""
    desc = _descriptions(schema)
    term = rule.term if isinstance(rule, Rule) else rule
    if isinstance(term, Var) and term.sort == BOOL:
        return f"it holds that: {desc.get(term.name, term.name)}"
    return _english(term, desc)


def _compound(t: Term) -> bool:
    return isinstance(t, (And, Or, Implies)) or (isinstance(t, App) and t.op in ("=", *_REL) and t.lhs.sort == BOOL)


def _sub(t: Term, desc, in_arith: bool = False) -> str:
    text = _english(t, desc)
    if _compound(t) or (in_arith and isinstance(t, App) and t.op in _ARITH):
        return f"({text})"
    return text


def _english(t: Term, desc: dict[str, str]) -> str:
    if isinstance(t, Var):
        return desc.get(t.name, t.name)
    if isinstance(t, Constructor):
        return t.name
    if isinstance(t, BoolLit):
        return "true" if t.value else "false"
    if isinstance(t, IntLit):
        return str(t.value)
    if isinstance(t, RealLit):
        return format_decimal(t.value)
    if isinstance(t, Not):
        return f"it is not the case that {_sub(t.arg, desc)}"
    if isinstance(t, And):
        return " and ".join(_sub(a, desc) for a in t.args)
    if isinstance(t, Or):
        return " or ".join(_sub(a, desc) for a in t.args)
    if isinstance(t, Implies):
        return f"if {_sub(t.lhs, desc)}, then {_sub(t.rhs, desc)}"
    if isinstance(t, App):
        lhs, rhs = _sub(t.lhs, desc), _sub(t.rhs, desc)
        if t.op == "=":
            if t.lhs.sort == BOOL:
                return f"{lhs} exactly when {rhs}"
            if t.lhs.sort.is_datatype:
                return f"{lhs} is {rhs}"
            return f"{lhs} equals {rhs}"
        if t.op in _REL:
            return f"{lhs} {_REL[t.op]} {rhs}"
        return f"{_sub(t.lhs, desc, True)} {_ARITH[t.op]} {_sub(t.rhs, desc, True)}"
    raise TypeError(f"cannot render {t!r}")


# ---------------------------------------------------------------- repair


def repair_from_feedback(
    model: PolicyModel,
    rule_id: str,
    feedback: str,
    backend,
    solver: Solver | None = None,
) -> PolicyModel:
    """Apply a backend-proposed edit for ``rule_id`` and re-lint the result.

    The edit may replace rules (same id), add rules and declarations, and
    remove rules.  Anything else in the model is left as it was.
    """
    model.rule(rule_id)  # precondition: raises KeyError for unknown ids
    if not feedback.strip():
        raise ValueError("feedback is empty")
    raw = backend.repair_policy(model, rule_id, feedback)
    try:
        edit = coerce_edit(raw)
    except GateError as exc:
        raise MalformedOutput("policy edit could not be parsed", [f"{type(exc).__name__}: {exc}"]) from None

    try:
        taken = {r.id for r in model.rules}
        data = dict(edit)
        rules = []
        for r in data.get("rules", []):
            r = dict(r)
            if not r.get("id"):
                rid, k = f"{rule_id}_fix", 1
                while rid in taken:
                    k += 1
                    rid = f"{rule_id}_fix{k}"
                r["id"] = rid
                taken.add(rid)
            rules.append(r)
        data["rules"] = rules
        unit = build_unit(data, model)
        removed = set(edit.get("remove_rules", []))
        unknown = removed - {r.id for r in model.rules}
        if unknown:
            raise ModelError(f"edit removes unknown rule(s) {sorted(unknown)}")
        replacements = {r.id: r for r in unit.rules}
        new_rules = []
        for r in model.rules:
            if r.id in removed:
                continue
            if r.id in replacements:
                new_rules.append(Rule(r.id, replacements.pop(r.id).term, r.provenance))
            else:
                new_rules.append(r)
        new_rules.extend(replacements.values())
        known_types = {d.name for d in model.datatypes}
        known_vars = {v.name for v in model.variables}
        metadata = {k: v for k, v in model.metadata.items() if k != "vetted"}
        repaired = PolicyModel(
            (*model.datatypes, *(d for d in unit.datatypes if d.name not in known_types)),
            (*model.variables, *(v for v in unit.variables if v.name not in known_vars)),
            tuple(new_rules),
            metadata,
        )
    except GateError as exc:
        raise RepairRejected("repaired policy does not check", [f"{type(exc).__name__}: {exc}"]) from None

    report = lint(repaired, solver)
    if report.errors:
        raise RepairRejected("repaired policy has lint errors", [e.message for e in report.errors])
    return repaired


# ----------------------------------------------------------------- tests

KINDS = ("qa", "statement", "symbolic")


@dataclass(frozen=True)
class TestCase:
    kind: str
    expected: Category
    question: str = ""
    answer: str = ""
    text: str = ""
    # SMT-LIB text over the model vocabulary, for symbolic cases
    premise: str = ""
    conclusion: str = ""
    provenance: str = "user"
    name: str = ""

    __test__ = False  # not a pytest class

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown test kind {self.kind!r}")
        object.__setattr__(self, "expected", Category.parse(self.expected) if isinstance(self.expected, str) else self.expected)
        if self.kind == "symbolic" and not self.conclusion:
            raise ValueError("symbolic cases need a conclusion")

    @classmethod
    def qa(cls, question: str, answer: str, expected, **kw) -> "TestCase":
        return cls("qa", expected, question=question, answer=answer, **kw)

    @classmethod
    def statement(cls, text: str, expected, **kw) -> "TestCase":
        return cls("statement", expected, text=text, **kw)

    @classmethod
    def symbolic(cls, premise: str, conclusion: str, expected, **kw) -> "TestCase":
        return cls("symbolic", expected, premise=premise or "true", conclusion=conclusion, **kw)

    def pair(self, model: PolicyModel) -> ClaimPair:
        return ClaimPair(model.parse(self.premise or "true"), model.parse(self.conclusion), Fraction(1))

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "expected": self.expected.value, "provenance": self.provenance}
        if self.name:
            out["name"] = self.name
        if self.kind == "qa":
            out.update(question=self.question, answer=self.answer)
        elif self.kind == "statement":
            out["text"] = self.text
        else:
            out.update(premise=self.premise, conclusion=self.conclusion)
        return out

    @classmethod
    def from_json(cls, data: Any, pointer: str = "") -> "TestCase":
        if not isinstance(data, dict):
            raise DatasetFormat("test case must be an object", pointer)
        try:
            fields = {k: data[k] for k in ("question", "answer", "text", "premise", "conclusion", "provenance", "name") if k in data}
            return cls(data["kind"], Category.parse(data["expected"]), **fields)
        except KeyError as exc:
            raise DatasetFormat(f"test case is missing {exc}", pointer) from None
        except ValueError as exc:
            raise DatasetFormat(str(exc), pointer) from None


@dataclass(frozen=True)
class TestOutcome:
    case: TestCase
    actual: Category
    passed: bool
    explanation: FeedbackPayload
    message: str = ""

    __test__ = False

    def to_json(self) -> dict:
        return {
            "case": self.case.to_json(),
            "actual": self.actual.value,
            "pass": self.passed,
            "relevant_rules": list(self.explanation.relevant_rules),
            "message": self.message,
        }


def save_test_suite(cases: Sequence[TestCase], destination: str | os.PathLike) -> None:
    text = json.dumps([c.to_json() for c in cases], indent=2, ensure_ascii=False) + "\n"
    Path(destination).write_text(text, encoding="utf-8", newline="\n")


def load_test_suite(source: str | os.PathLike) -> list[TestCase]:
    try:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormat(f"invalid JSON: {exc}", "") from None
    if not isinstance(data, list):
        raise DatasetFormat("test suite must be a JSON list", "")
    return [TestCase.from_json(d, f"/{i}") for i, d in enumerate(data)]


def _outcome(case: TestCase, actual: Category, payload: FeedbackPayload, translated: bool) -> TestOutcome:
    passed = actual == case.expected
    message = ""
    if not passed:
        message = f"expected {case.expected.value}, got {actual.value}"
        if translated:
            message += "; either the policy model or the translation of this case is wrong"
        else:
            message += "; the policy model does not behave as the test expects"
    return TestOutcome(case, actual, passed, payload, message)


def run_manual_tests(
    cases: Sequence[TestCase],
    model: PolicyModel,
    pool: TranslatorPool | None,
    config: VerifierConfig | None = None,
    solver: Solver | None = None,
) -> list[TestOutcome]:
    """Run cases through the verifier; symbolic cases skip translation."""
    config = config or VerifierConfig()
    own = solver is None
    solver = solver or Solver(SolverConfig(timeout=config.solver_timeout))
    try:
        out = []
        for case in cases:
            if case.kind == "symbolic":
                f = classify(case.pair(model), model, config, solver, warnings=False)
                out.append(_outcome(case, f.category, f.feedback, False))
                continue
            if pool is None:
                raise ValueError("natural-language test cases need a translator pool")
            text = qa_text(case.question, case.answer) if case.kind == "qa" else case.text
            findings = validate(text, model, pool, config, solver)
            actual = overall_category(findings)
            payload = next((f.feedback for f in findings if f.category == actual), FeedbackPayload())
            out.append(_outcome(case, actual, payload, True))
        return out
    finally:
        if own:
            solver.close()


# ------------------------------------------------------ symbolic generation


def _concrete(value) -> bool:
    return isinstance(value, (bool, int, Fraction, str))


def _literal(var: VariableSpec, value) -> Term:
    v = Var(var.name, var.sort)
    if var.sort == BOOL:
        return v if value else Not(v)
    return App("=", v, value_term(value, var.sort))


def _mutate(var: VariableSpec, value, model: PolicyModel, rng: random.Random):
    if var.sort == BOOL:
        return not value
    if var.sort.is_datatype:
        ctors = next(d.constructors for d in model.datatypes if d.name == var.sort.name)
        others = [c for c in ctors if c != value]
        return rng.choice(others) if others else value
    return value + 1


def _block(model: PolicyModel, a: Assignment) -> Term | None:
    lits = [_literal(v, a[v.name]) for v in model.variables if v.name not in a.arbitrary and _concrete(a.get(v.name))]
    return Not(conj(lits)) if lits else None


def sample_models(model: PolicyModel, count: int, solver: Solver, timeout=None) -> list[Assignment]:
    """Up to ``count`` distinct solver models of ``model`` via blocking clauses."""
    first = solver.check(model, timeout=timeout)
    if isinstance(first, Unsat):
        raise ModelUnsat("the policy rules are contradictory; no test cases can be generated")
    if isinstance(first, Unknown):
        raise SolverError(f"could not find a model of the policy: {first.reason}")
    found = [first.assignment]
    blocks: list[Term] = []
    while len(found) < count:
        b = _block(model, found[-1])
        if b is None:
            break
        blocks.append(b)
        nxt = solver.check(model, blocks, timeout=timeout)
        if not isinstance(nxt, Sat):
            break
        found.append(nxt.assignment)
    return found


def reverify(case: TestCase, model: PolicyModel, solver: Solver, timeout=None) -> bool:
    """Re-derive the defining entailments of ``case.expected`` with fresh queries.

    Satisfying assignments are also checked with the exact evaluator, so a
    model returned by the solver is never trusted on its own.
    """
    p = model.parse(case.premise or "true")
    c = model.parse(case.conclusion)
    rules = [r.term for r in model.rules]

    def sat(*extra: Term) -> bool | None:
        v = solver.check(model, list(extra), timeout=timeout)
        if isinstance(v, Unknown):
            return None
        if isinstance(v, Sat):
            held = witness_holds(v.assignment, [*rules, *extra])
            return True if held is None else held  # irrational witnesses cannot be evaluated exactly
        return False

    e = case.expected
    if e == Category.IMPOSSIBLE:
        return sat(p) is False
    if sat(p) is not True:
        return False
    if e == Category.VALID:
        return sat(p, Not(c)) is False
    if e == Category.INVALID:
        return sat(p, c) is False
    if e == Category.SATISFIABLE:
        return sat(p, c) is True and sat(p, Not(c)) is True
    return False


def generate_symbolic_tests(
    model: PolicyModel,
    n: int,
    seed: int = 0,
    mutation_rate: float = 0.25,
    config: VerifierConfig | None = None,
    solver_config: SolverConfig | None = None,
    pool_size: int = 16,
) -> list[TestCase]:
    """``n`` symbolic cases with solver-computed, independently re-verified labels.

    Premises are equalities over a random subset of variables taken from a
    sampled model of the policy (sometimes with one conjunct mutated); the
    conclusion is a literal over a held-out variable.  Two fresh solver
    sessions are used, one to label and one to re-verify, so the output
    depends only on ``model``, ``n`` and ``seed``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    config = config or VerifierConfig(minimize_cores=False)
    solver_config = solver_config or SolverConfig(timeout=config.solver_timeout)
    rng = random.Random(seed)
    cases: list[TestCase] = []
    with Solver(solver_config) as labeller, Solver(solver_config) as checker:
        models = sample_models(model, pool_size, labeller, config.solver_timeout)
        attempts = 0
        while len(cases) < n:
            attempts += 1
            if attempts > 20 * n + 100:
                raise SolverError(f"only {len(cases)} of {n} cases could be labelled")
            base = rng.choice(models)
            usable = [v for v in model.variables if v.name not in base.arbitrary and _concrete(base.get(v.name))]
            if not usable:
                raise ModelError("the policy has no variables to build test cases from")
            target = rng.choice(usable)
            rest = [v for v in usable if v is not target]
            chosen: list[VariableSpec] = []
            if rest:
                k = rng.randint(1, min(5, len(rest)))
                picked = {v.name for v in rng.sample(rest, k)}
                chosen = [v for v in rest if v.name in picked]
            values = {v.name: base[v.name] for v in chosen}
            if chosen and rng.random() < mutation_rate:
                victim = rng.choice(chosen)
                values[victim.name] = _mutate(victim, values[victim.name], model, rng)
            premise = conj(_literal(v, values[v.name]) for v in chosen) if chosen else TRUE
            conclusion = _literal(target, base[target.name])
            if rng.random() < 0.5:
                conclusion = Not(conclusion) if not isinstance(conclusion, Not) else conclusion.arg
            pair = ClaimPair(premise, conclusion, Fraction(1))
            finding = classify(pair, model, config, labeller, warnings=False)
            if finding.category == Category.TOO_COMPLEX:
                continue
            case = TestCase.symbolic(
                print_term(premise),
                print_term(conclusion),
                finding.category,
                provenance="generated",
                name=f"gen-{seed}-{len(cases)}",
            )
            if not reverify(case, model, checker, config.solver_timeout):
                raise SolverError(f"second-round verification disagrees on {case.name}: {case.premise} => {case.conclusion}")
            cases.append(case)
    return cases


# ------------------------------------------------------------ vetted stamp


def stamp_vetted(
    model: PolicyModel,
    report: LintReport,
    outcomes: Sequence[TestOutcome],
    by: str | None = None,
    when: _dt.datetime | None = None,
) -> PolicyModel:
    """Record in the metadata that ``model`` passed lint and its test suite."""
    if report.errors:
        raise ValueError("cannot stamp a model with lint errors")
    failed = [o for o in outcomes if not o.passed]
    if failed:
        raise ValueError(f"cannot stamp a model with {len(failed)} failing test(s)")
    stamp: dict[str, Any] = {"tests": len(outcomes), "at": (when or _dt.datetime.now(_dt.timezone.utc)).isoformat()}
    if by:
        stamp["by"] = by
    return replace(model, metadata={**model.metadata, "vetted": stamp})
