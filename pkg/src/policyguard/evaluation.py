"""Dataset evaluation with threshold sweeps, and the answer-revision loop."""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from .errors import BackendUnavailable, DatasetFormat, MalformedOutput
from .metrics import ConfusionCounts, MetricsRow, compute_metrics
from .model import PolicyModel
from .solver import Solver, SolverConfig
from .translator import TranslatorPool, qa_text, revise_answer
from .verifier import Category, Finding, VerifierConfig, overall_category, render_finding, validate, validate_translations

log = logging.getLogger(__name__)

BINARIZATION = "VALID iff every pair finding is VALID and at least one pair exists"


@dataclass(frozen=True)
class EvalCase:
    question: str
    answer: str
    label: Category
    document_ref: str | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"question": self.question, "answer": self.answer, "label": self.label.value}
        if self.document_ref is not None:
            out["document_ref"] = self.document_ref
        return out


def parse_dataset(data: Any) -> list[EvalCase]:
    if not isinstance(data, list):
        raise DatasetFormat("dataset must be a JSON list", "")
    cases = []
    for i, item in enumerate(data):
        where = f"/{i}"
        if not isinstance(item, dict):
            raise DatasetFormat("case must be an object", where)
        for key in ("question", "answer", "label"):
            if not isinstance(item.get(key), str):
                raise DatasetFormat(f"missing string field {key!r}", f"{where}/{key}")
        try:
            label = Category.parse(item["label"])
        except ValueError:
            raise DatasetFormat(f"unknown label {item['label']!r}", f"{where}/label") from None
        ref = item.get("document_ref")
        if ref is not None and not isinstance(ref, str):
            raise DatasetFormat("document_ref must be a string", f"{where}/document_ref")
        cases.append(EvalCase(item["question"], item["answer"], label, ref))
    return cases


def load_dataset(source: str | os.PathLike) -> list[EvalCase]:
    try:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormat(f"invalid JSON: {exc}", "") from None
    return parse_dataset(data)


@dataclass
class CaseResult:
    index: int
    case: EvalCase
    verdict: Category
    findings: list[Finding]

    @property
    def predicted(self) -> bool:
        return self.verdict == Category.VALID

    @property
    def actual(self) -> bool:
        return self.case.label == Category.VALID

    def to_json(self) -> dict:
        return {
            "index": self.index,
            **self.case.to_json(),
            "verdict": self.verdict.value,
            "findings": [f.to_json() for f in self.findings],
        }


@dataclass
class EvalResult:
    threshold: Fraction
    counts: ConfusionCounts
    metrics: MetricsRow | None
    cases: list[CaseResult] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "threshold": {"num": self.threshold.numerator, "den": self.threshold.denominator},
            "binarization": BINARIZATION,
            "counts": self.counts.to_json(),
            "metrics": self.metrics.to_json() if self.metrics else None,
            "cases": [c.to_json() for c in self.cases],
        }


class _SolverPerThread:
    def __init__(self, config: SolverConfig):
        self.config = config
        self.local = threading.local()
        self.all: list[Solver] = []
        self.lock = threading.Lock()

    def get(self) -> Solver:
        s = getattr(self.local, "solver", None)
        if s is None:
            s = Solver(self.config)
            self.local.solver = s
            with self.lock:
                self.all.append(s)
        return s

    def close(self) -> None:
        for s in self.all:
            s.close()


def run_eval(
    cases: Sequence[EvalCase],
    model: PolicyModel,
    pool: TranslatorPool,
    config: VerifierConfig | None = None,
    workers: int = 1,
    thresholds: Sequence[Fraction] | None = None,
) -> list[EvalResult]:
    """Evaluate ``cases`` once per threshold, translating each case only once.

    Results keep input order whatever order the workers finish in.
    """
    config = config or VerifierConfig()
    thresholds = [Fraction(t) for t in (thresholds or [config.confidence_threshold])]
    configs = [replace(config, confidence_threshold=t) for t in thresholds]
    solvers = _SolverPerThread(SolverConfig(timeout=config.solver_timeout))

    def one(item: tuple[int, EvalCase]) -> list[CaseResult]:
        i, case = item
        text = qa_text(case.question, case.answer)
        solver = solvers.get()
        if len(text) > config.max_input_chars:
            translations = []
        else:
            translations = pool.translate_all(text, model)
        out = []
        for cfg in configs:
            findings = validate_translations(text, translations, model, cfg, solver)
            out.append(CaseResult(i, case, overall_category(findings), findings))
        return out

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                per_case = list(ex.map(one, enumerate(cases)))
        else:
            per_case = [one(item) for item in enumerate(cases)]
    finally:
        solvers.close()

    results = []
    for k, t in enumerate(thresholds):
        rows = [r[k] for r in per_case]
        counts = ConfusionCounts()
        for r in rows:
            counts = counts.add(r.predicted, r.actual)
        metrics = compute_metrics(counts) if counts.total else None
        results.append(EvalResult(t, counts, metrics, rows))
    return results


# ------------------------------------------------------------ refine loop


@dataclass
class RefineStep:
    iteration: int
    answer: str
    category: Category
    findings: list[Finding]
    # feedback handed to the reviser after this step, if any
    feedback: str | None = None

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "answer": self.answer,
            "category": self.category.value,
            "findings": [f.to_json() for f in self.findings],
            "feedback": self.feedback,
        }


@dataclass
class RefineTrajectory:
    question: str
    steps: list[RefineStep] = field(default_factory=list)
    error: str | None = None

    @property
    def final(self) -> Category | None:
        return self.steps[-1].category if self.steps else None

    @property
    def categories(self) -> list[Category]:
        return [s.category for s in self.steps]

    def to_json(self) -> dict:
        return {"question": self.question, "steps": [s.to_json() for s in self.steps], "error": self.error}


def feedback_text(findings: Sequence[Finding], model: PolicyModel) -> str:
    return "\n\n".join(render_finding(f, model) for f in findings if f.category != Category.VALID)


def run_refine_loop(
    question: str,
    answer: str,
    model: PolicyModel,
    pool: TranslatorPool,
    config: VerifierConfig | None = None,
    max_iters: int = 10,
    reviser=None,
    solver: Solver | None = None,
) -> RefineTrajectory:
    """Validate, revise on feedback, repeat until VALID or ``max_iters`` validations.

    Backend faults during revision end the loop; the error is recorded.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    config = config or VerifierConfig()
    reviser = reviser or pool.primary
    own = solver is None
    solver = solver or Solver(SolverConfig(timeout=config.solver_timeout))
    trajectory = RefineTrajectory(question)
    try:
        for i in range(max_iters):
            try:
                findings = validate(qa_text(question, answer), model, pool, config, solver)
            except BackendUnavailable as exc:
                trajectory.error = f"{type(exc).__name__}: {exc}"
                log.warning("refine loop stopped: %s", trajectory.error)
                break
            step = RefineStep(i, answer, overall_category(findings), findings)
            trajectory.steps.append(step)
            if step.category == Category.VALID or i == max_iters - 1:
                break
            step.feedback = feedback_text(findings, model)
            try:
                answer = revise_answer(question, answer, step.feedback, reviser)
            except (BackendUnavailable, MalformedOutput) as exc:
                trajectory.error = f"{type(exc).__name__}: {exc}"
                log.warning("refine loop stopped: %s", trajectory.error)
                break
    finally:
        if own:
            solver.close()
    return trajectory
