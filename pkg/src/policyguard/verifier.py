"""Answer verification: redundant translation, confidence, findings and feedback."""

from __future__ import annotations

import enum
import hashlib
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .errors import Equivalent
from .logic import TRUE, App, Not, Or, Term, Var, conj, node_count, print_term, value_term
from .model import PolicyModel
from .solver import (
    Assignment,
    Sat,
    Solver,
    SolverConfig,
    Unknown,
    Unsat,
    rule_label,
    rules_in,
)
from .translator import ClaimPair, Translation, TranslatorPool

log = logging.getLogger(__name__)


class Category(str, enum.Enum):
    NO_TRANSLATIONS = "NO_TRANSLATIONS"
    TOO_COMPLEX = "TOO_COMPLEX"
    TRANSLATION_AMBIGUOUS = "TRANSLATION_AMBIGUOUS"
    IMPOSSIBLE = "IMPOSSIBLE"
    INVALID = "INVALID"
    SATISFIABLE = "SATISFIABLE"
    VALID = "VALID"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "Category":
        key = text.strip().upper().replace(" ", "_")
        aliases = {"NOTRANSLATIONS": "NO_TRANSLATIONS", "TOOCOMPLEX": "TOO_COMPLEX", "TRANSLATIONAMBIGUOUS": "TRANSLATION_AMBIGUOUS"}
        return cls(aliases.get(key, key))


# order used to reduce several pair findings to one verdict: first match wins
SEVERITY = (
    Category.TOO_COMPLEX,
    Category.TRANSLATION_AMBIGUOUS,
    Category.IMPOSSIBLE,
    Category.INVALID,
    Category.SATISFIABLE,
    Category.VALID,
)


@dataclass(frozen=True)
class LogicWarning:
    subject: str  # "Premise" | "Conclusion"
    kind: str  # "AlwaysTrue" | "AlwaysFalse"

    def to_json(self) -> dict:
        return {"subject": self.subject, "kind": self.kind}


@dataclass(frozen=True)
class DifferingTranslations:
    pair_a: ClaimPair
    # None stands for a translation that produced no claim at all
    pair_b: ClaimPair | None
    distinguishing: Assignment | None
    # "a": the assignment satisfies pair_a's implication but not pair_b's
    side: str | None = None

    def to_json(self) -> dict:
        return {
            "a": self.pair_a.to_json(),
            "b": self.pair_b.to_json() if self.pair_b is not None else None,
            "distinguishing": self.distinguishing.to_json() if self.distinguishing else None,
            "satisfies": self.side,
        }


@dataclass(frozen=True)
class FeedbackPayload:
    relevant_rules: tuple[str, ...] = ()
    supporting_scenario: Assignment | None = None
    counter_example: Assignment | None = None
    differing_translations: DifferingTranslations | None = None
    untranslatable: tuple[str, ...] = ()
    warnings: tuple[LogicWarning, ...] = ()
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class Finding:
    category: Category
    pair: ClaimPair | None = None
    feedback: FeedbackPayload = field(default_factory=FeedbackPayload)
    audit_transcript: str | None = None

    def to_json(self) -> dict:
        out: dict = {"category": self.category.value}
        if self.pair is not None:
            out["confidence"] = self.pair.confidence_json()
            out["premise"] = print_term(self.pair.premise)
            out["conclusion"] = print_term(self.pair.conclusion)
        fb = self.feedback
        out["relevant_rules"] = list(fb.relevant_rules)
        if fb.supporting_scenario is not None:
            out["scenario"] = fb.supporting_scenario.to_json()
        if fb.counter_example is not None:
            out["counter_example"] = fb.counter_example.to_json()
        if fb.differing_translations is not None:
            out["differing_translations"] = fb.differing_translations.to_json()
        if fb.untranslatable:
            out["untranslatable"] = list(fb.untranslatable)
        if fb.notes:
            out["notes"] = list(fb.notes)
        out["warnings"] = [w.to_json() for w in fb.warnings]
        out["audit_transcript"] = self.audit_transcript
        return out


@dataclass
class VerifierConfig:
    k: int = 3
    confidence_threshold: Fraction = Fraction(1)
    max_input_chars: int = 20_000
    max_term_nodes: int = 5_000
    solver_timeout: float = 10.0
    minimize_cores: bool = True
    # opt-in: collect up to this many scenarios / counter-examples
    enumerate_scenarios: int = 1
    audit_dir: str | None = None

    def __post_init__(self) -> None:
        self.confidence_threshold = Fraction(self.confidence_threshold)
        if not 0 < self.confidence_threshold <= 1:
            raise ValueError("confidence_threshold must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be at least 1")


# ------------------------------------------------------- redundant translation


@dataclass(frozen=True)
class ScoredPair:
    pair: ClaimPair
    # indices of translations that contain an equivalent pair
    sources: frozenset[int]
    # indices of translations counted as support
    supports: frozenset[int]
    total: int


def translation_formula(t: Translation) -> Term:
    """A translation read as the conjunction of its pairs' implications."""
    return conj(p.implication() for p in t.pairs)


def _iff(a: Term, b: Term) -> Term:
    return App("=", a, b)


def pairs_equivalent(a: ClaimPair, b: ClaimPair, model: PolicyModel, solver: Solver, timeout=None) -> bool | None:
    """Mutual entailment of premises and of conclusions over ``model``'s declarations."""
    if a.premise == b.premise and a.conclusion == b.conclusion:
        return True
    differ = Or((Not(_iff(a.premise, b.premise)), Not(_iff(a.conclusion, b.conclusion))))
    v = solver.check(model.declarations_only(), [differ], timeout=timeout)
    if isinstance(v, Unknown):
        return None
    return isinstance(v, Unsat)


def supports(t: Translation, pair: ClaimPair, model: PolicyModel, solver: Solver, timeout=None) -> bool | None:
    """``t ⊨ (P ⇒ C)`` and ``t ⊭ ¬P``, decided over the declarations only."""
    decls = model.declarations_only()
    f = translation_formula(t)
    entail = solver.check(decls, [f, pair.premise, Not(pair.conclusion)], timeout=timeout)
    if isinstance(entail, Unknown):
        return None
    if isinstance(entail, Sat):
        return False
    consistent = solver.check(decls, [f, pair.premise], timeout=timeout)
    if isinstance(consistent, Unknown):
        return None
    return isinstance(consistent, Sat)


def score_translations(
    translations: Sequence[Translation], model: PolicyModel, solver: Solver, timeout=None
) -> list[ScoredPair]:
    """Distinct pairs across ``translations`` with their support sets.

    Pairs are identified up to equivalence.  A translation that produced an
    equivalent pair always counts as support; every other translation is
    tested with :func:`supports`.  A pair whose support cannot be decided gets
    confidence ``None``.
    """
    distinct: list[ClaimPair] = []
    sources: list[set[int]] = []
    undecided: set[int] = set()
    for ti, t in enumerate(translations):
        for p in t.pairs:
            for di, d in enumerate(distinct):
                eq = pairs_equivalent(p, d, model, solver, timeout)
                if eq is None:
                    undecided.add(di)
                if eq:
                    sources[di].add(ti)
                    break
            else:
                distinct.append(p)
                sources.append({ti})

    total = len(translations)
    scored = []
    for di, p in enumerate(distinct):
        sup = set(sources[di])
        unknown = di in undecided
        for ti, t in enumerate(translations):
            if ti in sup:
                continue
            s = supports(t, p, model, solver, timeout)
            if s is None:
                unknown = True
            elif s:
                sup.add(ti)
        conf, votes = (None, None) if unknown else (Fraction(len(sup), total), (len(sup), total))
        pair = ClaimPair(p.premise, p.conclusion, conf, p.source_text, votes)
        scored.append(ScoredPair(pair, frozenset(sources[di]), frozenset(sup), total))
    scored.sort(key=lambda s: s.pair.sort_key())
    return scored


def redundant_translate(
    text: str, model: PolicyModel, pool: TranslatorPool, solver: Solver | None = None
) -> list[ClaimPair]:
    with _solver_scope(solver) as s:
        translations = pool.translate_all(text, model)
        return [sp.pair for sp in score_translations(translations, model, s)]


# ------------------------------------------------------------ classification


def distinguishing_assignment(
    pair_a: ClaimPair | None,
    pair_b: ClaimPair | None,
    model: PolicyModel,
    solver: Solver,
    timeout=None,
) -> tuple[Assignment, str] | None:
    """An assignment satisfying one pair's implication under ``model`` but not the other's.

    ``None`` as a pair means an empty translation (the formula ``true``).
    Returns ``(assignment, side)`` with side ``"a"`` or ``"b"`` naming the
    implication that holds; raises ``Equivalent`` if there is none, and
    returns ``None`` if the solver cannot decide.
    """
    ia = pair_a.implication() if pair_a is not None else TRUE
    ib = pair_b.implication() if pair_b is not None else TRUE
    undecided = False
    for side, yes, no in (("a", ia, ib), ("b", ib, ia)):
        v = solver.check(model, [yes, Not(no)], timeout=timeout)
        if isinstance(v, Sat):
            return v.assignment, side
        if isinstance(v, Unknown):
            undecided = True
    if undecided:
        return None
    raise Equivalent("the two implications agree on every model of the policy")


def minimize_core(model: PolicyModel, extra: list[tuple[str, Term]], core: frozenset[str], solver: Solver, timeout) -> frozenset[str]:
    kept = [r for r in model.rules if rule_label(r.id) in core]
    i = 0
    while i < len(kept):
        trial = kept[:i] + kept[i + 1:]
        v = solver.check(model.with_rules(trial), extra, timeout=timeout)
        if isinstance(v, Unsat):
            kept = trial
        else:
            i += 1
    return frozenset(rule_label(r.id) for r in kept) | (core - {rule_label(r.id) for r in model.rules})


def _core_query(model, extra, solver, config) -> tuple[Sat | Unsat | Unknown, tuple[str, ...]]:
    v = solver.check(model, extra, want_core=True, timeout=config.solver_timeout)
    if not isinstance(v, Unsat):
        return v, ()
    core = v.core
    if config.minimize_cores:
        core = minimize_core(model, extra, core, solver, config.solver_timeout)
    order = {r.id: i for i, r in enumerate(model.rules)}
    return v, tuple(sorted(rules_in(core), key=order.__getitem__))


def _extra_models(model, extra, first: Assignment, n: int, solver, timeout) -> list[Assignment]:
    """Up to ``n`` assignments, each blocked from repeating the previous ones."""
    found = [first]
    block: list[Term] = []
    while len(found) < n:
        prev = found[-1]
        lits = []
        for v in model.variables:
            val = prev.get(v.name)
            if v.name in prev.arbitrary or not isinstance(val, (bool, int, Fraction, str)):
                continue
            lits.append(App("=", Var(v.name, v.sort), value_term(val, v.sort)))
        if not lits:
            break
        block.append(Not(conj(lits)))
        r = solver.check(model, [*extra, *block], timeout=timeout)
        if not isinstance(r, Sat):
            break
        found.append(r.assignment)
    return found


def logic_warnings(pair: ClaimPair, model: PolicyModel, solver: Solver, timeout=None) -> tuple[LogicWarning, ...]:
    """Premise/conclusion that are valid or unsatisfiable without any rule."""
    decls = model.declarations_only()
    out = []
    for subject, term in (("Premise", pair.premise), ("Conclusion", pair.conclusion)):
        if subject == "Premise" and term == TRUE:
            continue  # the empty premise
        if isinstance(solver.check(decls, [term], timeout=timeout), Unsat):
            out.append(LogicWarning(subject, "AlwaysFalse"))
        elif isinstance(solver.check(decls, [Not(term)], timeout=timeout), Unsat):
            out.append(LogicWarning(subject, "AlwaysTrue"))
    return tuple(out)


def classify(
    pair: ClaimPair,
    model: PolicyModel,
    config: VerifierConfig | None = None,
    solver: Solver | None = None,
    rivals: Sequence[ClaimPair | None] = (),
    warnings: bool = True,
) -> Finding:
    """Assign exactly one category to a scored pair.

    Precedence: low confidence, then Impossible, Valid, Invalid, Satisfiable.
    ``rivals`` are pairs from translations that did not support this one
    (``None`` for an empty translation); they feed the ambiguity payload.
    Any undecided solver query yields TOO_COMPLEX.
    """
    config = config or VerifierConfig()
    with _solver_scope(solver, config) as s:
        return _classify(pair, model, config, s, rivals, warnings)


def _too_complex(pair, note, warns=()) -> Finding:
    return Finding(Category.TOO_COMPLEX, pair, FeedbackPayload(warnings=tuple(warns), notes=(note,)))


def _classify(pair, model, config, s, rivals, warnings) -> Finding:
    timeout = config.solver_timeout
    size = node_count(pair.premise) + node_count(pair.conclusion)
    if size > config.max_term_nodes:
        return _too_complex(pair, f"translation has {size} term nodes (limit {config.max_term_nodes})")
    if pair.confidence is None:
        return _too_complex(pair, "confidence could not be decided within the solver limits")
    warns = logic_warnings(pair, model, s, timeout) if warnings else ()

    if pair.confidence < config.confidence_threshold:
        diff = _ambiguity_payload(pair, rivals, model, s, timeout)
        return Finding(Category.TRANSLATION_AMBIGUOUS, pair, FeedbackPayload(differing_translations=diff, warnings=warns))

    premise = [("premise", pair.premise)]
    v, rules = _core_query(model, premise, s, config)
    if isinstance(v, Unknown):
        return _too_complex(pair, f"solver gave no answer: {v.reason}", warns)
    if isinstance(v, Unsat):
        return Finding(Category.IMPOSSIBLE, pair, FeedbackPayload(relevant_rules=rules, warnings=warns))

    negated = premise + [("conclusion", Not(pair.conclusion))]
    v_valid, rules = _core_query(model, negated, s, config)
    if isinstance(v_valid, Unknown):
        return _too_complex(pair, f"solver gave no answer: {v_valid.reason}", warns)
    if isinstance(v_valid, Unsat):
        return Finding(Category.VALID, pair, FeedbackPayload(relevant_rules=rules, warnings=warns))

    affirmed = premise + [("conclusion", pair.conclusion)]
    v_invalid, rules = _core_query(model, affirmed, s, config)
    if isinstance(v_invalid, Unknown):
        return _too_complex(pair, f"solver gave no answer: {v_invalid.reason}", warns)
    if isinstance(v_invalid, Unsat):
        return Finding(Category.INVALID, pair, FeedbackPayload(relevant_rules=rules, warnings=warns))

    scenario = v_invalid.assignment
    counter = v_valid.assignment
    notes: tuple[str, ...] = ()
    if config.enumerate_scenarios > 1:
        more_s = _extra_models(model, [t for _, t in affirmed], scenario, config.enumerate_scenarios, s, timeout)
        more_c = _extra_models(model, [t for _, t in negated], counter, config.enumerate_scenarios, s, timeout)
        notes = tuple(f"scenario: {a.describe()}" for a in more_s[1:]) + tuple(
            f"counter-example: {a.describe()}" for a in more_c[1:]
        )
    return Finding(
        Category.SATISFIABLE,
        pair,
        FeedbackPayload(supporting_scenario=scenario, counter_example=counter, warnings=warns, notes=notes),
    )


def _ambiguity_payload(pair, rivals, model, s, timeout) -> DifferingTranslations:
    candidates = list(rivals) or [None]
    for scope in (model, model.declarations_only()):
        for rival in candidates:
            try:
                found = distinguishing_assignment(pair, rival, model=scope, solver=s, timeout=timeout)
            except Equivalent:
                continue
            if found is not None:
                return DifferingTranslations(pair, rival, found[0], found[1])
    return DifferingTranslations(pair, candidates[0], None, None)


# ---------------------------------------------------------------- pipeline


class _solver_scope:
    """Use the given solver or a temporary one closed on exit."""

    def __init__(self, solver: Solver | None, config: VerifierConfig | None = None):
        self.solver = solver
        self.own = solver is None
        self.config = config

    def __enter__(self) -> Solver:
        if self.solver is None:
            timeout = self.config.solver_timeout if self.config else 10.0
            self.solver = Solver(SolverConfig(timeout=timeout))
        return self.solver

    def __exit__(self, *exc) -> None:
        if self.own and self.solver is not None:
            self.solver.close()


def _rivals_for(sp: ScoredPair, scored: Sequence[ScoredPair], translations: Sequence[Translation]) -> list[ClaimPair | None]:
    out: list[ClaimPair | None] = []
    by_conf = sorted(
        (o for o in scored if o is not sp),
        key=lambda o: (-(o.pair.confidence or 0), o.pair.sort_key()),
    )
    for ti in range(len(translations)):
        if ti in sp.supports:
            continue
        hits = [o.pair for o in by_conf if ti in o.sources]
        out.extend(hits or [None])
    return list(dict.fromkeys(out))


def validate(
    text: str,
    model: PolicyModel,
    pool: TranslatorPool,
    config: VerifierConfig | None = None,
    solver: Solver | None = None,
) -> list[Finding]:
    """Translate ``text`` redundantly and classify every resulting pair."""
    config = config or VerifierConfig()
    if len(text) > config.max_input_chars:
        return [_oversize(text, config)]
    translations = pool.translate_all(text, model)
    return validate_translations(text, translations, model, config, solver)


def _oversize(text: str, config: VerifierConfig) -> Finding:
    note = f"input has {len(text)} characters (limit {config.max_input_chars})"
    return Finding(Category.TOO_COMPLEX, None, FeedbackPayload(notes=(note,)))


def validate_translations(
    text: str,
    translations: Sequence[Translation],
    model: PolicyModel,
    config: VerifierConfig | None = None,
    solver: Solver | None = None,
) -> list[Finding]:
    """The classification half of :func:`validate`, for translations already made.

    Threshold sweeps reuse one set of translations this way.
    """
    config = config or VerifierConfig()
    if len(text) > config.max_input_chars:
        return [_oversize(text, config)]
    audit_path = None
    with _solver_scope(solver, config) as s:
        if config.audit_dir:
            audit_path = _audit_file(config.audit_dir, text)
            s.set_transcript(audit_path)
        try:
            scored = score_translations(translations, model, s, config.solver_timeout)
            untranslatable = tuple(dict.fromkeys(seg for t in translations for seg in t.untranslatable))
            findings = [
                _classify(sp.pair, model, config, s, _rivals_for(sp, scored, translations), True) for sp in scored
            ]
            if untranslatable or not findings:
                findings.append(
                    Finding(Category.NO_TRANSLATIONS, None, FeedbackPayload(untranslatable=untranslatable or (text,)))
                )
        finally:
            if config.audit_dir:
                s.set_transcript(None)
    if audit_path is not None:
        findings = [Finding(f.category, f.pair, f.feedback, audit_path) for f in findings]
    return findings


def _audit_file(directory: str, text: str) -> str:
    Path(directory).mkdir(parents=True, exist_ok=True)
    stem = hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    n = 0
    while True:
        path = os.path.join(directory, f"validation-{stem}-{n}.smt2")
        if not os.path.exists(path):
            return path
        n += 1


def overall_category(findings: Sequence[Finding]) -> Category:
    """One verdict for a list of findings: the most severe pair finding.

    Without pair findings the first non-pair finding decides.  VALID therefore
    requires at least one pair and every pair finding to be VALID.
    """
    pair_cats = {f.category for f in findings if f.pair is not None}
    for c in SEVERITY:
        if c in pair_cats:
            return c
    if findings:
        return findings[0].category
    return Category.NO_TRANSLATIONS


# ---------------------------------------------------------------- rendering


def render_finding(finding: Finding, model: PolicyModel | None = None) -> str:
    """Plain-text feedback for people and for answer revision prompts."""
    lines = [f"Validation result: {finding.category.value}"]
    if finding.pair is not None:
        if finding.pair.confidence is not None:
            lines.append(f"Confidence: {finding.pair.confidence_text}")
        lines.append(f"Premise: {print_term(finding.pair.premise)}")
        lines.append(f"Conclusion: {print_term(finding.pair.conclusion)}")
    fb = finding.feedback
    if fb.relevant_rules:
        lines.append("Relevant rules:")
        for rid in fb.relevant_rules:
            text = rid
            if model is not None:
                try:
                    text = f"{rid}: {model.rule(rid).smtlib}"
                except KeyError:
                    pass
            lines.append(f"  {text}")
    if fb.counter_example is not None:
        lines.append(f"Counter-example (premise holds, conclusion fails): {fb.counter_example.describe()}")
    if fb.supporting_scenario is not None:
        lines.append(f"Scenario where the conclusion holds: {fb.supporting_scenario.describe()}")
    if fb.differing_translations is not None:
        d = fb.differing_translations
        b = "(no claim)" if d.pair_b is None else f"{print_term(d.pair_b.premise)} => {print_term(d.pair_b.conclusion)}"
        lines.append(f"Competing translation: {b}")
        if d.distinguishing is not None:
            lines.append(f"Distinguishing assignment (satisfies {d.side}): {d.distinguishing.describe()}")
    for seg in fb.untranslatable:
        lines.append(f"Untranslatable: {seg}")
    for w in fb.warnings:
        lines.append(f"Warning: {w.subject.lower()} is {'always true' if w.kind == 'AlwaysTrue' else 'always false'}")
    for n in fb.notes:
        lines.append(f"Note: {n}")
    return "\n".join(lines)
