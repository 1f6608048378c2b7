"""Command-line interface.

Exit codes: 0 when nothing error-level happened, 1 for an error-level
outcome (lint errors, failing tests, failed spans, a non-VALID verdict),
2 for bad input or configuration, 3 for engine faults (solver or backend).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import (
    BackendUnavailable,
    BuildFailed,
    FormatError,
    MalformedOutput,
    ModelError,
    PolicyGuardError,
    RepairRejected,
    SolverError,
)

log = logging.getLogger("policyguard")

EXIT_OK, EXIT_FINDING, EXIT_INPUT, EXIT_FAULT = 0, 1, 2, 3

ENV_PREFIX = "POLICYGUARD_"


# ---------------------------------------------------------------- config


def _load_toml(path: str) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
    else:  # pragma: no cover
        import tomli as tomllib
    with open(path, "rb") as f:
        return tomllib.load(f)


def parse_fraction(text: Any) -> Fraction:
    """``"2/3"``, ``"0.5"`` or a number as an exact fraction."""
    try:
        return Fraction(str(text).strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None


@dataclass
class Settings:
    translator: dict = field(default_factory=dict)
    verifier: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    build: dict = field(default_factory=dict)
    embedder: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None, environ=os.environ) -> "Settings":
        data = _load_toml(path) if path else {}
        s = cls(**{k: dict(data.get(k, {})) for k in ("translator", "verifier", "solver", "build", "embedder")})
        env = {
            "TRANSLATOR_ENDPOINT": ("translator", "endpoint"),
            "TRANSLATOR_MODEL": ("translator", "model"),
            "EMBEDDER_ENDPOINT": ("embedder", "endpoint"),
            "EMBEDDER_MODEL": ("embedder", "model"),
            "SOLVER": ("solver", "command"),
        }
        for suffix, (section, key) in env.items():
            value = environ.get(ENV_PREFIX + suffix)
            if value:
                getattr(s, section)[key] = value.split() if key == "command" else value
        return s


def make_solver(settings: Settings, args):
    from .solver import Solver, SolverConfig

    cfg = SolverConfig(timeout=float(args.solver_timeout or settings.solver.get("timeout", 10.0)))
    command = settings.solver.get("command")
    if command:
        cfg.command = command.split() if isinstance(command, str) else list(command)
    if "logic" in settings.solver:
        cfg.logic = settings.solver["logic"]
    return Solver(cfg)


def make_verifier_config(settings: Settings, args):
    from .verifier import VerifierConfig

    v = dict(settings.verifier)
    cfg = VerifierConfig(
        k=int(args.k or settings.translator.get("k", 3)),
        confidence_threshold=parse_fraction(getattr(args, "threshold", None) or v.get("confidence_threshold", 1)),
        max_input_chars=int(v.get("max_input_chars", 20_000)),
        max_term_nodes=int(v.get("max_term_nodes", 5_000)),
        solver_timeout=float(args.solver_timeout or settings.solver.get("timeout", 10.0)),
        minimize_cores=bool(v.get("minimize_cores", True)),
        enumerate_scenarios=int(getattr(args, "enumerate", None) or v.get("enumerate_scenarios", 1)),
        audit_dir=getattr(args, "audit_dir", None) or v.get("audit_dir"),
    )
    return cfg


def make_pool(settings: Settings, args, **http_extra):
    """``scripted:<dir>`` or ``http`` (endpoint and model from the config)."""
    from .translator import HttpBackend, ScriptedBackend, TranslatorPool

    t = settings.translator
    choice = args.translator or t.get("kind") or ""
    k = int(args.k or t.get("k", 3))
    budget = int(t.get("repair_budget", 3))
    if choice.startswith("scripted:") or (choice == "scripted" and t.get("fixtures")):
        root = Path(choice.partition(":")[2] or t["fixtures"])
        if not root.is_dir():
            raise FormatError(f"fixture directory {root} does not exist")
        subdirs = sorted(p for p in root.iterdir() if p.is_dir())
        if subdirs:
            backends = [ScriptedBackend.from_dir(p, name=p.name) for p in subdirs]
        else:
            one = ScriptedBackend.from_dir(root)
            backends = [one] * k
        return TranslatorPool(backends, repair_budget=budget)
    if choice.startswith("http"):
        models = t.get("models") or [choice.partition(":")[2] or t.get("model")]
        if not t.get("endpoint") or not all(models):
            raise FormatError("http translator needs [translator] endpoint and model settings")
        backends = []
        for i in range(k):
            backends.append(
                HttpBackend(
                    t["endpoint"],
                    models[i % len(models)],
                    api_key_env=t.get("api_key_env", "OPENAI_API_KEY"),
                    temperature=float(t.get("temperature", 0.0)),
                    max_tokens=int(t.get("max_tokens", 2048)),
                    prompts_dir=t.get("prompts_dir"),
                    name=f"http{i}",
                    **http_extra,
                )
            )
        return TranslatorPool(backends, repair_budget=budget)
    raise FormatError("choose a translator with --translator scripted:<dir> or --translator http")


def make_embedder(settings: Settings):
    from .model import HttpEmbedder, LexicalEmbedder

    e = settings.embedder
    if e.get("kind", "lexical") == "http":
        return HttpEmbedder(e["endpoint"], e["model"], api_key_env=e.get("api_key_env", "OPENAI_API_KEY"))
    return LexicalEmbedder()


def _emit(data: Any, output: str | None) -> None:
    text = json.dumps(data, indent=2, ensure_ascii=False) + "\n"
    if output:
        Path(output).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def _read_text(path: str) -> str:
    return sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")


# --------------------------------------------------------------- commands


def cmd_build(args, settings: Settings) -> int:
    from .formalizer import BuildConfig, build
    from .model import save

    b = settings.build
    cfg = BuildConfig(
        target_span_tokens=int(args.target_tokens or b.get("target_span_tokens", 500)),
        repair_budget=int(settings.translator.get("repair_budget", 3)),
        fail_fast=bool(args.fail_fast or b.get("fail_fast", False)),
        cluster_threshold=float(b.get("cluster_threshold", 0.8)),
        max_workers=int(b.get("max_workers", 1)),
    )
    pool = make_pool(settings, args)
    with make_solver(settings, args) as solver:
        model, report = build(_read_text(args.document), pool, cfg, make_embedder(settings), solver)
    save(model, args.output)
    if args.report:
        _emit(report.to_json(), args.report)
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    c = report.counts
    print(f"{args.output}: {c['datatypes']} datatypes, {c['variables']} variables, {c['rules']} rules "
          f"from {len(report.spans)} spans ({len(report.failures)} failed, {report.repair_attempts} repairs)")
    return EXIT_FINDING if report.failures else EXIT_OK


def cmd_lint(args, settings: Settings) -> int:
    from .model import load
    from .vetting import lint

    model = load(args.policy)
    with make_solver(settings, args) as solver:
        report = lint(model, solver)
    if args.json:
        _emit(report.to_json(), None)
    else:
        for item in report.errors:
            print(f"error {item.code} [{item.subject}]: {item.message}")
        for item in report.warnings:
            print(f"warning {item.code} [{item.subject}]: {item.message}")
        print(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)")
    return EXIT_OK if report.ok else EXIT_FINDING


def cmd_render(args, settings: Settings) -> int:
    from .model import load
    from .vetting import render_structured_english

    model = load(args.policy)
    rules = [model.rule(args.rule)] if args.rule else model.rules
    for r in rules:
        print(f"{r.id}: {render_structured_english(r, model)}")
    return EXIT_OK


def _statement(args) -> str:
    from .translator import qa_text

    if args.text is not None:
        return args.text
    if args.question is None or args.answer is None:
        raise FormatError("give --text, or both --question and --answer")
    return qa_text(args.question, args.answer)


def cmd_validate(args, settings: Settings) -> int:
    from .model import load
    from .verifier import Category, overall_category, render_finding, validate

    model = load(args.policy)
    config = make_verifier_config(settings, args)
    pool = make_pool(settings, args)
    with make_solver(settings, args) as solver:
        findings = validate(_statement(args), model, pool, config, solver)
    verdict = overall_category(findings)
    if args.human:
        for f in findings:
            print(render_finding(f, model))
            print()
        print(f"Verdict: {verdict.value}")
    else:
        _emit({"verdict": verdict.value, "findings": [f.to_json() for f in findings]}, args.output)
    return EXIT_OK if verdict == Category.VALID else EXIT_FINDING


def cmd_test(args, settings: Settings) -> int:
    from .model import load, save
    from .vetting import lint, load_test_suite, run_manual_tests, stamp_vetted

    model = load(args.policy)
    cases = load_test_suite(args.suite)
    config = make_verifier_config(settings, args)
    needs_pool = any(c.kind != "symbolic" for c in cases)
    pool = make_pool(settings, args) if needs_pool else None
    with make_solver(settings, args) as solver:
        outcomes = run_manual_tests(cases, model, pool, config, solver)
        report = lint(model, solver) if args.stamp else None
    for o in outcomes:
        name = o.case.name or o.case.kind
        status = "PASS" if o.passed else "FAIL"
        print(f"{status} {name}: expected {o.case.expected.value}, got {o.actual.value}" + (f" ({o.message})" if o.message else ""))
    failed = sum(not o.passed for o in outcomes)
    print(f"{len(outcomes) - failed} passed, {failed} failed")
    if args.json:
        _emit([o.to_json() for o in outcomes], args.json)
    if args.stamp:
        if failed or not report.ok:
            print("not stamped: the model has lint errors or failing tests", file=sys.stderr)
            return EXIT_FINDING
        save(stamp_vetted(model, report, outcomes, by=args.by), args.stamp)
        print(f"vetted model written to {args.stamp}")
    return EXIT_FINDING if failed else EXIT_OK


def cmd_gen_tests(args, settings: Settings) -> int:
    from .model import load
    from .vetting import generate_symbolic_tests, save_test_suite

    model = load(args.policy)
    cases = generate_symbolic_tests(model, args.count, seed=args.seed, mutation_rate=args.mutation_rate)
    save_test_suite(cases, args.output)
    counts: dict[str, int] = {}
    for c in cases:
        counts[c.expected.value] = counts.get(c.expected.value, 0) + 1
    print(f"{len(cases)} cases written to {args.output}: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def cmd_eval(args, settings: Settings) -> int:
    from .evaluation import load_dataset, run_eval
    from .model import load

    model = load(args.policy)
    cases = load_dataset(args.dataset)
    config = make_verifier_config(settings, args)
    thresholds = args.sweep or [config.confidence_threshold]
    results = run_eval(cases, model, make_pool(settings, args), config, workers=args.workers, thresholds=thresholds)
    print(f"{'threshold':>9}  {'S':>5} {'FPR':>5} {'Pr':>5} {'Re':>5} {'F1':>5} {'Ac':>5}  {'TP':>4} {'FP':>4} {'TN':>4} {'FN':>4}")
    for r in results:
        m = r.metrics.display() if r.metrics else {k: "-" for k in ("soundness", "fpr", "precision", "recall", "f1", "accuracy")}
        c = r.counts
        print(f"{str(r.threshold):>9}  {m['soundness']:>5} {m['fpr']:>5} {m['precision']:>5} {m['recall']:>5} "
              f"{m['f1']:>5} {m['accuracy']:>5}  {c.tp:>4} {c.fp:>4} {c.tn:>4} {c.fn:>4}")
    if args.output:
        _emit([r.to_json() for r in results], args.output)
    return EXIT_OK


def cmd_refine(args, settings: Settings) -> int:
    from .evaluation import run_refine_loop
    from .model import load
    from .verifier import Category

    model = load(args.policy)
    config = make_verifier_config(settings, args)
    pool = make_pool(settings, args, source_text=_read_text(args.source) if args.source else "", domain=args.domain or "")
    with make_solver(settings, args) as solver:
        traj = run_refine_loop(args.question, args.answer, model, pool, config, args.max_iters, solver=solver)
    for step in traj.steps:
        print(f"[{step.iteration}] {step.category.value}: {step.answer}")
    if traj.error:
        print(f"stopped: {traj.error}", file=sys.stderr)
    if args.output:
        _emit(traj.to_json(), args.output)
    return EXIT_OK if traj.final == Category.VALID else EXIT_FINDING


def cmd_repair(args, settings: Settings) -> int:
    from .model import load, save
    from .vetting import repair_from_feedback

    model = load(args.policy)
    pool = make_pool(settings, args)
    with make_solver(settings, args) as solver:
        try:
            fixed = repair_from_feedback(model, args.rule, args.feedback, pool.primary, solver)
        except RepairRejected as exc:
            print(f"repair rejected: {exc}", file=sys.stderr)
            for d in exc.diagnostics:
                print(f"  {d}", file=sys.stderr)
            return EXIT_FINDING
    save(fixed, args.output)
    print(f"{args.rule}: {fixed.rule(args.rule).smtlib if args.rule in {r.id for r in fixed.rules} else '(removed)'}")
    return EXIT_OK


def cmd_report(args, settings: Settings) -> int:
    from .formalizer import BuildReport, SpanOutcome

    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    report = BuildReport(
        spans=[
            SpanOutcome(s["index"], s["bytes"][0], s["bytes"][1], s["status"], s["datatypes"], s["variables"],
                        s["rules"], s["repair_attempts"], s["diagnostics"])
            for s in data.get("spans", [])
        ],
        counts=data["counts"],
        curve=data["curve"],
    )
    text = report.to_csv()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="policyguard", description="Check answers against formal policy models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--translator", help="scripted:<dir> or http")
    p.add_argument("-k", type=int, help="number of redundant translators")
    p.add_argument("--solver-timeout", type=float, help="seconds per solver query")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build", help="formalize a document into a policy model")
    s.add_argument("document")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--report", help="write the build report JSON here")
    s.add_argument("--csv", help="write the span/count curve CSV here")
    s.add_argument("--target-tokens", type=int)
    s.add_argument("--fail-fast", action="store_true")
    s.set_defaults(func=cmd_build)

    s = sub.add_parser("lint", help="check a policy model for errors and warnings")
    s.add_argument("policy")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_lint)

    s = sub.add_parser("render", help="print rules as structured English")
    s.add_argument("policy")
    s.add_argument("--rule")
    s.set_defaults(func=cmd_render)

    def verifier_flags(s):
        s.add_argument("--threshold", type=parse_fraction, help="confidence threshold, e.g. 2/3")
        s.add_argument("--audit-dir", help="directory for solver transcripts")
        s.add_argument("--enumerate", type=int, help="collect up to this many scenarios")

    s = sub.add_parser("validate", help="validate a question/answer pair or a statement")
    s.add_argument("policy")
    s.add_argument("--question")
    s.add_argument("--answer")
    s.add_argument("--text")
    s.add_argument("--human", action="store_true", help="print readable feedback instead of JSON")
    s.add_argument("-o", "--output")
    verifier_flags(s)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("test", help="run a test suite against a policy model")
    s.add_argument("policy")
    s.add_argument("suite")
    s.add_argument("--json", help="write outcomes JSON here")
    s.add_argument("--stamp", help="if everything passes, write a vetted copy of the model here")
    s.add_argument("--by", help="name recorded in the vetted stamp")
    verifier_flags(s)
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("gen-tests", help="generate symbolic test cases")
    s.add_argument("policy")
    s.add_argument("-n", "--count", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mutation-rate", type=float, default=0.25)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_gen_tests)

    s = sub.add_parser("eval", help="compute metrics over a labelled dataset")
    s.add_argument("policy")
    s.add_argument("dataset")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--sweep", type=parse_fraction, nargs="+", help="thresholds to evaluate")
    s.add_argument("-o", "--output")
    verifier_flags(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("refine", help="revise an answer until it validates")
    s.add_argument("policy")
    s.add_argument("--question", required=True)
    s.add_argument("--answer", required=True)
    s.add_argument("--max-iters", type=int, default=10)
    s.add_argument("--source", help="policy document given to the reviser")
    s.add_argument("--domain")
    s.add_argument("-o", "--output")
    verifier_flags(s)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("repair", help="apply a feedback-driven edit to one rule")
    s.add_argument("policy")
    s.add_argument("--rule", required=True)
    s.add_argument("--feedback", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_repair)

    s = sub.add_parser("report", help="turn a build report into a span/count CSV")
    s.add_argument("report")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        settings = Settings.load(args.config)
        return args.func(args, settings)
    except (BackendUnavailable, SolverError) as exc:
        print(f"policyguard: engine fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except BuildFailed as exc:
        print(f"policyguard: build failed: {exc}", file=sys.stderr)
        for f in exc.failures:
            print(f"  {f}", file=sys.stderr)
        return EXIT_FINDING
    except (PolicyGuardError, MalformedOutput, ModelError, OSError, KeyError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"policyguard: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
