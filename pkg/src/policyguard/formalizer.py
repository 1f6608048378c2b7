"""Document to policy model: span splitting, per-span formalization, composition."""

from __future__ import annotations

import csv
import io
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .errors import BuildFailed, MalformedOutput
from .logic import print_term, rename
from .model import EmbeddingProvider, PolicyModel, PolicyUnit, compose_with_map
from .solver import Solver
from .translator import DEFAULT_REPAIR_BUDGET, TranslatorPool, formalize_span

log = logging.getLogger(__name__)

TOKENS_PER_WORD = 1.3


def count_tokens(text: str) -> float:
    """Rough token count: whitespace-delimited words times 1.3."""
    return len(text.split()) * TOKENS_PER_WORD


@dataclass(frozen=True)
class Span:
    text: str
    # UTF-8 byte offsets into the document, end exclusive
    start: int
    end: int


@dataclass(frozen=True)
class SpanPlan:
    spans: tuple[Span, ...]
    target_span_tokens: int

    def __len__(self) -> int:
        return len(self.spans)

    def text(self) -> str:
        return "".join(s.text for s in self.spans)


_PARA_BREAK = re.compile(r"\n[ \t]*\n\s*")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def _is_heading(block: str) -> bool:
    s = block.lstrip()
    return s.startswith("#") or s.startswith("**")


def _cut(text: str, pattern: re.Pattern) -> list[str]:
    """Split after each match, keeping separators so pieces concatenate to ``text``."""
    pieces, last = [], 0
    for m in pattern.finditer(text):
        if m.end() < len(text):
            pieces.append(text[last:m.end()])
            last = m.end()
    pieces.append(text[last:])
    return [p for p in pieces if p]


def _pack(pieces: list[str], limit: float) -> list[str]:
    out: list[str] = []
    cur = ""
    for p in pieces:
        if cur and count_tokens(cur + p) > limit:
            out.append(cur)
            cur = ""
        cur += p
    if cur:
        out.append(cur)
    return out


def _shrink(block: str, target: int) -> list[str]:
    """Cut an oversize paragraph at sentence ends, then at whitespace."""
    if count_tokens(block) <= target:
        return [block]
    out = []
    for sentence in _pack(_cut(block, _SENTENCE_END), target):
        if count_tokens(sentence) <= target:
            out.append(sentence)
        else:
            out.extend(_pack(_cut(sentence, re.compile(r"\s+")), target))
    return out


def split(document: str, target_span_tokens: int = 500) -> SpanPlan:
    """Split ``document`` into spans of about ``target_span_tokens`` tokens.

    Spans break at paragraph boundaries and always before a heading (a
    Markdown ``#`` line or a paragraph opening with ``**``).  Paragraphs are
    packed greedily; a single paragraph over the target is cut at sentence
    ends and, failing that, at whitespace.  Separators stay attached to the
    preceding span, so the spans concatenate back to the document.
    """
    if target_span_tokens < 1:
        raise ValueError("target_span_tokens must be positive")
    if not document:
        return SpanPlan((), target_span_tokens)

    chunks: list[str] = []
    cur = ""
    for block in _cut(document, _PARA_BREAK):
        if cur and (_is_heading(block) or count_tokens(cur + block) > target_span_tokens):
            chunks.append(cur)
            cur = ""
        if not cur and count_tokens(block) > target_span_tokens:
            parts = _shrink(block, target_span_tokens)
            chunks.extend(parts[:-1])
            cur = parts[-1]
            continue
        cur += block
    if cur:
        chunks.append(cur)
    # a leading or trailing whitespace-only chunk is folded into its neighbour
    if len(chunks) > 1 and not chunks[0].strip():
        chunks[1] = chunks[0] + chunks[1]
        chunks.pop(0)

    spans, offset = [], 0
    for c in chunks:
        n = len(c.encode("utf-8"))
        spans.append(Span(c, offset, offset + n))
        offset += n
    return SpanPlan(tuple(spans), target_span_tokens)


# ----------------------------------------------------------------- build


@dataclass
class BuildConfig:
    target_span_tokens: int = 500
    repair_budget: int = DEFAULT_REPAIR_BUDGET
    fail_fast: bool = False
    cluster_threshold: float = 0.8
    # above 1, spans are formalized concurrently without a shared context
    max_workers: int = 1
    lint: bool = True


@dataclass
class SpanOutcome:
    index: int
    start: int
    end: int
    status: str  # "ok" | "failed" | "empty"
    datatypes: int = 0
    variables: int = 0
    rules: int = 0
    repair_attempts: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "bytes": [self.start, self.end],
            "status": self.status,
            "datatypes": self.datatypes,
            "variables": self.variables,
            "rules": self.rules,
            "repair_attempts": self.repair_attempts,
            "diagnostics": list(self.diagnostics),
        }


@dataclass
class BuildReport:
    spans: list[SpanOutcome] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=lambda: {"datatypes": 0, "variables": 0, "rules": 0})
    # cumulative counts after each span: final-model elements first seen in spans 0..i
    curve: list[dict[str, int]] = field(default_factory=list)

    @property
    def repair_attempts(self) -> int:
        return sum(s.repair_attempts for s in self.spans)

    @property
    def failures(self) -> list[SpanOutcome]:
        return [s for s in self.spans if s.status == "failed"]

    def to_json(self) -> dict:
        return {
            "counts": dict(self.counts),
            "repair_attempts": self.repair_attempts,
            "spans": [s.to_json() for s in self.spans],
            "curve": [dict(c) for c in self.curve],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["spans", "datatypes", "variables", "rules"])
        for i, row in enumerate(self.curve, start=1):
            w.writerow([i, row["datatypes"], row["variables"], row["rules"]])
        return buf.getvalue()


def _extend_context(context: PolicyModel, unit: PolicyModel) -> PolicyModel:
    types = {d.name: d for d in context.datatypes}
    for d in unit.datatypes:
        types.setdefault(d.name, d)
    names = {v.name for v in context.variables}
    variables = [*context.variables, *(v for v in unit.variables if v.name not in names)]
    return PolicyModel(tuple(types.values()), tuple(variables))


def _first_seen(units: Sequence[PolicyModel], maps: Sequence[dict[str, str]], model: PolicyModel) -> dict[str, list[int]]:
    first: dict[tuple[str, str], int] = {}
    for u, unit in enumerate(units):
        for d in unit.datatypes:
            first.setdefault(("datatypes", d.name), u)
        for v in unit.variables:
            first.setdefault(("variables", maps[u][v.name]), u)
        for r in unit.rules:
            first.setdefault(("rules", print_term(rename(r.term, maps[u]))), u)
    return {
        "datatypes": [first[("datatypes", d.name)] for d in model.datatypes],
        "variables": [first[("variables", v.name)] for v in model.variables],
        "rules": [first[("rules", r.smtlib)] for r in model.rules],
    }


def build(
    document: str,
    pool: TranslatorPool,
    config: BuildConfig | None = None,
    embedder: EmbeddingProvider | None = None,
    solver: Solver | None = None,
) -> tuple[PolicyModel, BuildReport]:
    """Formalize ``document`` span by span and compose the units.

    Spans are processed in document order with the vocabulary built so far
    as context, so later spans reuse earlier declarations instead of
    re-declaring them.  A span whose output cannot be repaired is recorded
    and skipped, or raises ``BuildFailed`` when ``fail_fast`` is set.
    """
    config = config or BuildConfig()
    plan = split(document, config.target_span_tokens)
    backend = pool.primary
    report = BuildReport()
    units: list[PolicyModel] = []

    def one(i: int, span: Span, context: PolicyModel) -> tuple[PolicyModel, SpanOutcome]:
        attempts: list[str] = []
        outcome = SpanOutcome(i, span.start, span.end, "ok")
        if not span.text.strip():
            outcome.status = "empty"
            return PolicyUnit(), outcome
        try:
            unit = formalize_span(span.text, context, backend, config.repair_budget, f"s{i}_", f"span:{i}", attempts)
        except MalformedOutput as exc:
            outcome.status = "failed"
            # one diagnostic per rejected output, the first being the original
            outcome.repair_attempts = max(len(attempts) - 1, 0)
            outcome.diagnostics = list(dict.fromkeys([*attempts, *exc.diagnostics]))
            return PolicyUnit(), outcome
        outcome.repair_attempts = len(attempts)
        outcome.diagnostics = attempts
        outcome.datatypes, outcome.variables, outcome.rules = len(unit.datatypes), len(unit.variables), len(unit.rules)
        return unit, outcome

    if config.max_workers > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=config.max_workers) as ex:
            results = list(ex.map(lambda a: one(a[0], a[1], PolicyModel()), enumerate(plan.spans)))
    else:
        results = []
        context = PolicyModel()
        for i, span in enumerate(plan.spans):
            unit, outcome = one(i, span, context)
            results.append((unit, outcome))
            if outcome.status == "failed" and config.fail_fast:
                break
            context = _extend_context(context, unit)

    for unit, outcome in results:
        units.append(unit)
        report.spans.append(outcome)
        if outcome.status == "failed":
            log.warning("span %d failed: %s", outcome.index, "; ".join(outcome.diagnostics))
    if config.fail_fast and report.failures:
        raise BuildFailed([s.to_json() for s in report.failures])

    model, maps = compose_with_map(units, embedder, config.cluster_threshold)
    model = PolicyModel(model.datatypes, model.variables, model.rules, {"source": "build", "spans": len(plan)})

    first = _first_seen(units, maps, model)
    for i in range(len(units)):
        report.curve.append({k: sum(1 for u in first[k] if u <= i) for k in ("datatypes", "variables", "rules")})
    report.counts = model.counts()

    if config.lint and model.rules:
        from .vetting import lint

        lint_report = lint(model, solver)
        if lint_report.errors:
            raise BuildFailed([e.to_json() for e in lint_report.errors])
    return model, report
