"""Acceptance criteria, one pass/fail line each (printed in the terminal summary)."""

import random
import time
from fractions import Fraction

import pytest

from oracle import expected_category, truth
from policyguard.errors import SmtSyntaxError, SortError, UnknownSymbol
from policyguard.evaluation import load_dataset, run_eval, run_refine_loop
from policyguard.logic import BOOL, ConstDecl, Env, evaluate, parse_term, print_term
from policyguard.metrics import ConfusionCounts, compute_metrics
from policyguard.model import PolicyModel, Rule, VariableSpec, load
from policyguard.solver import Solver, SolverConfig
from policyguard.translator import ClaimPair, ScriptedBackend, Translation, TranslatorPool, qa_text
from policyguard.verifier import Category, VerifierConfig, classify, score_translations, validate
from policyguard.vetting import generate_symbolic_tests, lint, reverify
from strategies import env as term_env
from strategies import random_bool_policy_term, random_term

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n, ok, detail):
    # a criterion made of several tests fails if any part fails
    prev = RESULTS.get(n)
    if prev is not None:
        ok = ok and prev[0]
        detail = f"{prev[1]}; {detail}"
    RESULTS[n] = (ok, detail)


# ------------------------------------------------------------ criterion 1

TABLE_ROWS = [
    # name, (tp, fp, tn, fn), printed (S, FPR, Pr, Re, F1, Ac)
    ("ensemble-3/3", (163, 13, 506, 884), (99.2, 2.5, 92.6, 15.6, 26.7, 42.7)),
    ("ensemble-2/3", (213, 21, 498, 834), (98.7, 4.0, 91.0, 20.3, 33.3, 45.4)),
    ("single-translation", (332, 22, 497, 715), (98.6, 4.2, 93.8, 31.7, 47.4, 52.9)),
    ("judge-ensemble-3/3", (304, 26, 493, 743), (98.3, 5.0, 92.1, 29.0, 44.2, 50.9)),
    ("judge-ensemble-2/3", (525, 58, 461, 522), (96.3, 11.2, 90.1, 50.1, 64.4, 63.0)),
    ("judge-single", (560, 81, 438, 487), (94.8, 15.6, 87.4, 53.5, 66.4, 63.7)),
    ("judge-single-thinking", (598, 80, 439, 449), (94.9, 15.4, 88.2, 57.1, 69.3, 66.2)),
    ("fg-implicit-span", (544, 57, 462, 503), (96.4, 11.0, 90.5, 52.0, 66.0, 64.2)),
    ("fg-json", (745, 118, 401, 302), (92.5, 22.7, 86.3, 71.2, 78.0, 73.2)),
    ("fg-response", (529, 88, 431, 518), (94.4, 17.0, 85.7, 50.5, 63.6, 61.3)),
    ("minicheck", (726, 150, 369, 321), (90.4, 28.9, 82.9, 69.3, 75.5, 69.9)),
    ("refchecker", (917, 245, 274, 130), (84.4, 47.2, 78.9, 87.6, 83.0, 76.1)),
    ("selfcheckgpt", (746, 78, 441, 301), (95.0, 15.0, 90.5, 71.3, 79.7, 75.8)),
    ("logic-lm", (212, 40, 479, 835), (97.4, 7.7, 84.0, 20.2, 32.6, 44.1)),
]
NAMES = ("soundness", "fpr", "precision", "recall", "f1", "accuracy")
# printed cell that disagrees with its own counts: 212 / (212 + 40) = 84.13
KNOWN_BAD = {("logic-lm", "precision")}


def _row_mismatches(name, counts, printed):
    row = compute_metrics(ConfusionCounts(*counts))
    bad = []
    for metric, want in zip(NAMES, printed):
        got = float(getattr(row, metric))
        if abs(got - want) > 0.05:
            bad.append((metric, want, round(got, 3)))
    return bad


@pytest.mark.parametrize(
    "name,counts,printed",
    [
        pytest.param(
            *row,
            marks=pytest.mark.xfail(strict=True, reason="printed precision 84.0 contradicts 212/(212+40)=84.13"),
        )
        if any(row[0] == n for n, _ in KNOWN_BAD)
        else row
        for row in TABLE_ROWS
    ],
    ids=[r[0] for r in TABLE_ROWS],
)
def test_c1_metrics_golden(name, counts, printed):
    start = time.perf_counter()
    bad = _row_mismatches(name, counts, printed)
    elapsed = time.perf_counter() - start
    ok = not bad and elapsed < 1.0
    record(1, ok, f"{name}: " + ("ok" if ok else f"mismatch {bad}"))
    assert elapsed < 1.0
    assert not bad


def test_c1_known_mismatch_is_isolated():
    """Every cell except the known bad one reproduces; the bad one is off by more than rounding."""
    start = time.perf_counter()
    offenders = set()
    for name, counts, printed in TABLE_ROWS:
        offenders |= {(name, m) for m, _, _ in _row_mismatches(name, counts, printed)}
    elapsed = time.perf_counter() - start
    assert offenders == KNOWN_BAD
    assert elapsed < 1.0
    row = compute_metrics(ConfusionCounts(163, 13, 506, 884))
    assert row.display() == {
        "soundness": "99.2", "fpr": "2.5", "precision": "92.6", "recall": "15.6", "f1": "26.7", "accuracy": "42.7"
    }


# ------------------------------------------------------------ criterion 2

PARK_Q = (
    "I am a senior and want to visit the park in the low season, and I have a total fund of $35.40. "
    "Can I visit the park?"
)
PARK_A = "No, $35.40 is not enough."


def _park_assignment_with_credits(park):
    """Walk the fee chain with the evaluator, using the model's own rule terms."""
    rhs = lambda rid: park.rule(rid).term.rhs  # noqa: E731
    a = {"baseFee": Fraction(50), "isLowSeason": True, "ageClass": "SENIOR", "customerAge": 70, "creditUnit": 3}
    a["admissionFee"] = evaluate(rhs("low_season_fee").rhs, a)
    a["customerCredits"] = evaluate(rhs("credit_increment"), a)
    a["creditDollarValue"] = evaluate(rhs("credit_price"), a)
    a["usesCredits"] = evaluate(rhs("uses_credits"), a)
    a["admissionFeeAfterDiscount"] = evaluate(rhs("senior_discount_capped").rhs, a)
    a["finalAdmissionFee"] = a["admissionFeeAfterDiscount"]
    a["cashAmount"] = a["finalAdmissionFee"] - a["customerCredits"]
    a["totalPaymentAvailable"] = evaluate(rhs("payment_available"), a)
    a["expenseBeforeTax"] = evaluate(rhs("expense_before_tax"), a)
    a["finalExpense"] = evaluate(rhs("federal_tax"), a)
    a["totalAdmissionFund"] = Fraction("35.4")
    a["isEntryAllowed"] = evaluate(rhs("entry"), a)
    return a


def test_c2_park_worked_example(park, park_pool):
    start = time.perf_counter()
    findings = validate(qa_text(PARK_Q, PARK_A), park, park_pool)
    assert len(findings) == 1
    f = findings[0]
    assert f.category == Category.SATISFIABLE
    assert f.pair.votes == (3, 3) and f.pair.confidence == 1
    assert f.to_json()["confidence"] == {"num": 3, "den": 3}

    rules = [r.term for r in park.rules]
    counter = f.feedback.counter_example
    assert all(evaluate(t, counter.values) for t in rules)
    assert evaluate(f.pair.premise, counter.values)
    assert counter["isEntryAllowed"] is True
    assert counter["finalExpense"] <= Fraction("35.4")
    assert counter["creditUnit"] == 3

    scenario = f.feedback.supporting_scenario
    assert all(evaluate(t, scenario.values) for t in rules)
    assert scenario["isEntryAllowed"] is False

    chain = _park_assignment_with_credits(park)
    assert [chain[k] for k in ("admissionFee", "admissionFeeAfterDiscount", "expenseBeforeTax", "finalExpense")] == [
        Fraction("37.5"), Fraction("38.125"), Fraction("32.125"), Fraction("35.3375")
    ]
    assert chain["isEntryAllowed"] is True
    assert all(evaluate(t, chain) for t in rules)
    elapsed = time.perf_counter() - start
    record(2, elapsed < 10, f"SATISFIABLE 3/3, chain 37.5 -> 38.125 -> 32.125 -> 35.3375 in {elapsed:.2f}s")
    assert elapsed < 10


# ------------------------------------------------------------ criterion 3


def test_c3_ryanair_impossible(ryanair):
    start = time.perf_counter()
    p = ryanair.parse("(and didFlightOperate (not didPassengerTravel) (= flightDisruptionReason DENIED_BOARDING))")
    f = classify(ClaimPair(p, ryanair.parse("isRefundEligible"), Fraction(1)), ryanair)
    elapsed = time.perf_counter() - start
    ok = f.category == Category.IMPOSSIBLE and set(f.feedback.relevant_rules) == {"no_show", "denied_boarding"}
    record(3, ok and elapsed < 5, f"{f.category.value} with rules {list(f.feedback.relevant_rules)} in {elapsed:.2f}s")
    assert ok
    assert elapsed < 5


# ------------------------------------------------------------ criterion 4

ORACLE_CASES = 10_000


def _boolean_cases(seed, count):
    rng = random.Random(seed)
    names_pool = ["a", "b", "c", "d"]
    for _ in range(count):
        names = names_pool[: rng.randint(1, 4)]
        rules = [random_bool_policy_term(rng, names, rng.randint(0, 3)) for _ in range(rng.randint(0, 4))]
        premise = random_bool_policy_term(rng, names, rng.randint(0, 3))
        conclusion = random_bool_policy_term(rng, names, rng.randint(0, 3))
        yield names, rules, premise, conclusion


def _boolean_model(names, rules):
    variables = tuple(VariableSpec(n, BOOL, f"proposition {n}") for n in names)
    kept, seen = [], set()
    for r in rules:
        text = print_term(r)
        if text not in seen:
            seen.add(text)
            kept.append(Rule(f"r{len(kept)}", r))
    return PolicyModel((), variables, tuple(kept))


@pytest.mark.slow
def test_c4_classification_oracle():
    start = time.perf_counter()
    config = VerifierConfig(minimize_cores=False)
    disagreements = []
    tally: dict[str, int] = {}
    with Solver(SolverConfig(timeout=10.0)) as solver:
        for names, rules, premise, conclusion in _boolean_cases(2024, ORACLE_CASES):
            model = _boolean_model(names, rules)
            f = classify(ClaimPair(premise, conclusion, Fraction(1)), model, config, solver, warnings=False)
            want = expected_category([r.term for r in model.rules], premise, conclusion, names)
            tally[want] = tally.get(want, 0) + 1
            if f.category.value != want:
                disagreements.append((names, [print_term(r) for r in rules], print_term(premise), print_term(conclusion)))
    elapsed = time.perf_counter() - start
    ok = not disagreements and elapsed < 300
    record(4, ok, f"{ORACLE_CASES} cases, {len(disagreements)} disagreements, mix {dict(sorted(tally.items()))}, {elapsed:.0f}s")
    assert not disagreements, disagreements[:5]
    assert all(tally.get(c, 0) > 0 for c in ("IMPOSSIBLE", "VALID", "INVALID", "SATISFIABLE"))
    assert elapsed < 300


# ------------------------------------------------------------ criterion 5


def test_c5_confidence_examples(park, park_pool, park_split_pool):
    text = qa_text(PARK_Q, PARK_A)
    scored = score_translations(park_pool.translate_all(text, park), park, Solver())
    assert [s.pair.votes for s in scored] == [(3, 3)]
    with Solver() as solver:
        split = score_translations(park_split_pool.translate_all(text, park), park, solver)
    votes = {print_term(s.pair.conclusion): s.pair.votes for s in split}
    assert votes == {"(not isEntryAllowed)": (2, 3), "isEntryAllowed": (1, 3)}
    assert {print_term(s.pair.conclusion): s.pair.confidence for s in split} == {
        "(not isEntryAllowed)": Fraction(2, 3), "isEntryAllowed": Fraction(1, 3)
    }
    record(5, True, "3 identical -> 3/3; 2-vs-1 -> 2/3 and 1/3")


POOLS = 1_000


def _random_pool(rng, names):
    candidates = []
    for _ in range(3):
        p = random_bool_policy_term(rng, names, rng.randint(0, 2))
        c = random_bool_policy_term(rng, names, rng.randint(0, 2))
        candidates.append(ClaimPair(p, c))
    k = rng.randint(1, 3)
    translations = []
    for _ in range(k):
        pairs = tuple(rng.sample(candidates, rng.choice([1, 1, 1, 2])))
        translations.append(Translation(pairs))
    return translations


def _oracle_supports(translation, pair, names):
    from oracle import assignments

    entails, consistent = True, False
    for a in assignments(names):
        t_holds = all((not truth(q.premise, a)) or truth(q.conclusion, a) for q in translation.pairs)
        if t_holds and truth(pair.premise, a) and not truth(pair.conclusion, a):
            entails = False
        if t_holds and truth(pair.premise, a):
            consistent = True
    return entails and consistent


def _oracle_equivalent(x, y, names):
    from oracle import assignments

    return all(
        truth(x.premise, a) == truth(y.premise, a) and truth(x.conclusion, a) == truth(y.conclusion, a)
        for a in assignments(names)
    )


@pytest.mark.slow
def test_c5_self_support_randomized():
    start = time.perf_counter()
    rng = random.Random(99)
    names = ["a", "b", "c"]
    model = PolicyModel((), tuple(VariableSpec(n, BOOL, f"proposition {n}") for n in names))
    problems = []
    with Solver() as solver:
        for i in range(POOLS):
            translations = _random_pool(rng, names)
            k = len(translations)
            for sp in score_translations(translations, model, solver):
                j, total = sp.pair.votes
                if total != k or not 1 <= j <= k or not sp.sources <= sp.supports:
                    problems.append((i, "bounds", sp))
                # which translations hold an equivalent pair, and which support it
                holders = {t for t, tr in enumerate(translations) if any(_oracle_equivalent(q, sp.pair, names) for q in tr.pairs)}
                want = holders | {t for t, tr in enumerate(translations) if _oracle_supports(tr, sp.pair, names)}
                if holders != set(sp.sources) or want != set(sp.supports):
                    problems.append((i, "support", sp, want))
    elapsed = time.perf_counter() - start
    record(5, not problems, f"self-support over {POOLS} random pools: {len(problems)} problems ({elapsed:.0f}s)")
    assert not problems, problems[:3]


# ------------------------------------------------------------ criterion 6


def test_c6_threshold_monotonicity(park, fixtures_dir):
    root = fixtures_dir / "scripted" / "park_eval"
    pool = TranslatorPool([ScriptedBackend.from_dir(root / f"t{i}") for i in range(3)])
    cases = load_dataset(fixtures_dir / "park_eval.json")
    thresholds = [Fraction(1, 3), Fraction(2, 3), Fraction(1)]
    results = run_eval(cases, park, pool, thresholds=thresholds)
    fps = [r.counts.fp for r in results]
    positives = [r.counts.tp + r.counts.fp for r in results]
    monotone = all(a >= b for a, b in zip(fps, fps[1:])) and all(a >= b for a, b in zip(positives, positives[1:]))
    # raising the threshold never turns an ambiguous pair finding into a definitive one
    stable = True
    for lo, hi in zip(results, results[1:]):
        for a, b in zip(lo.cases, hi.cases):
            amb_lo = {f.pair.sort_key() for f in a.findings if f.category == Category.TRANSLATION_AMBIGUOUS}
            amb_hi = {f.pair.sort_key() for f in b.findings if f.category == Category.TRANSLATION_AMBIGUOUS}
            stable &= amb_lo <= amb_hi
    ok = monotone and stable and fps[0] > fps[-1]
    record(6, ok, f"FP by threshold 1/3, 2/3, 3/3 = {fps}; positives = {positives}")
    assert monotone and stable
    assert fps[0] > fps[-1]


# ------------------------------------------------------------ criterion 7

ROUND_TRIPS = 10_000

MALFORMED = [
    "", "(", ")", "(and p", "(and p q))", "(p)", "(foo p q)", "(and p)", "(or p)", "(not)", "(not p q)",
    "(=> p)", "(=> p q r)", "(+ n)", "(+ n m x)", "(< n)", "(= p)", "(and p n)", "(or x q)", "(not n)",
    "(=> n p)", "(+ p n)", "(< c n)", "(= p n)", "(= c n)", "(= c RED GREEN)", "(forall ((z Int)) p)",
    "(exists ((z Int)) p)", "(let ((z p)) z)", "(ite p q r)", "(distinct n m)", "(select a n)",
    "(> n -1)", "(> n 1e3)", "(> n .5)", "(> x 1.)", '"text"', "(and p \"q\")",
    "|quoted|", "(and p |q|)", "(p q)", "((and p q))", "(! p :named a)", "(_ bv1 8)", "(= RED RED RED)",
    "(and p q) (or p q)", "#b101", "(> n #x1F)", "(* p p)", "(/ c c)", "(- RED)", "(= (+ n m) p)",
]

# well-formed but naming something undeclared
UNDECLARED = ["zzz", "(and p zzz)", "(> nn 1)", "(= c PURPLE)"]


def _mutants(rng, text, count):
    alphabet = "()pqnxc =<>+-*/.0123456789 andornot=>"
    for _ in range(count):
        chars = list(text)
        for _ in range(rng.randint(1, 3)):
            i = rng.randrange(len(chars) + 1)
            op = rng.randrange(3)
            if op == 0 and chars:
                del chars[min(i, len(chars) - 1)]
            elif op == 1:
                chars.insert(i, rng.choice(alphabet))
            elif chars:
                chars[min(i, len(chars) - 1)] = rng.choice(alphabet)
        yield "".join(chars)


def test_c7_parser_round_trip_and_malformed():
    start = time.perf_counter()
    rng = random.Random(7)
    env = term_env()
    failures = []
    for _ in range(ROUND_TRIPS):
        t = random_term(rng, depth=rng.randint(0, 5))
        text = print_term(t)
        back = parse_term(text, env)
        if back != t or print_term(back) != text:
            failures.append(text)
    crashes = []
    for text in MALFORMED:
        try:
            parse_term(text, env)
        except (SmtSyntaxError, SortError) as exc:
            if exc.position is None:
                crashes.append((text, "no position", exc))
        except Exception as exc:  # noqa: BLE001
            crashes.append((text, type(exc).__name__, exc))
        else:
            crashes.append((text, "accepted", None))
    for text in UNDECLARED:
        with pytest.raises(UnknownSymbol) as info:
            parse_term(text, env)
        assert info.value.position is not None
    # random edits of valid terms: parse or fail cleanly, nothing else
    fuzz = 0
    for _ in range(200):
        base = print_term(random_term(rng, depth=3))
        for text in _mutants(rng, base, 10):
            fuzz += 1
            try:
                parse_term(text, env)
            except (SmtSyntaxError, SortError, UnknownSymbol) as exc:
                if exc.position is None:
                    crashes.append((text, "no position", exc))
            except Exception as exc:  # noqa: BLE001
                crashes.append((text, type(exc).__name__, exc))
    elapsed = time.perf_counter() - start
    ok = not failures and not crashes
    record(7, ok, f"{ROUND_TRIPS} round trips, {len(failures)} failures; {len(MALFORMED)} malformed inputs + {fuzz} mutants, {len(crashes)} unpositioned or crashing ({elapsed:.1f}s)")
    assert not failures, failures[:3]
    assert not crashes, crashes


# ------------------------------------------------------------ criterion 8


def _bool_model(rules, extra_vars=()):
    names = ["p", "q", *extra_vars]
    return PolicyModel(
        (),
        tuple(VariableSpec(n, BOOL, f"proposition {n}") for n in names),
        tuple(Rule(rid, parse_term(text, Env([ConstDecl(n, BOOL) for n in names]))) for rid, text in rules),
    )


def test_c8_linter(park, ryanair, ryanair_vetted, solver):
    contradictory = lint(_bool_model([("a", "p"), ("b", "(not p)"), ("c", "(=> p q)")]), solver)
    contra = [e for e in contradictory.errors if e.code == "CONTRADICTORY_RULES"]
    assert len(contra) == 1 and set(contra[0].core) == {"a", "b"}
    core_rules = _bool_model([("a", "p"), ("b", "(not p)")])
    assert solver.is_sat(core_rules.with_rules([r for r in core_rules.rules if r.id in contra[0].core])) is False

    unused = lint(_bool_model([("a", "(=> p q)")], extra_vars=["z"]), solver)
    assert [(w.code, w.subject) for w in unused.warnings] == [("UNUSED_VARIABLE", "z")]
    assert not unused.errors

    tautology = lint(_bool_model([("a", "(or p (not p))"), ("b", "(=> p q)")]), solver)
    assert [(w.code, w.subject) for w in tautology.warnings] == [("TAUTOLOGICAL_RULE", "a")]
    assert not tautology.errors

    clean = {name: lint(m, solver) for name, m in [("park", park), ("ryanair", ryanair), ("ryanair_vetted", ryanair_vetted)]}
    assert all(not r.errors for r in clean.values()), {k: r.to_json() for k, r in clean.items()}
    record(8, True, "contradiction core {a, b}, UNUSED_VARIABLE z, TAUTOLOGICAL_RULE a; no errors on park/RyanAir")


# ------------------------------------------------------------ criterion 9


@pytest.mark.slow
@pytest.mark.parametrize("fixture", ["park", "ryanair", "ryanair_vetted"])
def test_c9_symbolic_generation(fixture, fixtures_dir):
    model = load(fixtures_dir / f"{fixture}.json")
    start = time.perf_counter()
    cases = generate_symbolic_tests(model, 100, seed=11)
    again = generate_symbolic_tests(model, 100, seed=11)
    with Solver() as independent:
        disagreements = [c for c in cases if not reverify(c, model, independent)]
    elapsed = time.perf_counter() - start
    ok = len(cases) == 100 and not disagreements and cases == again
    record(9, ok, f"{fixture}: 100 cases, {len(disagreements)} disagreements, deterministic={cases == again} ({elapsed:.1f}s)")
    assert len(cases) == 100
    assert not disagreements
    assert cases == again


# ----------------------------------------------------------- criterion 10

OFF_TOPIC_Q, OFF_TOPIC_A = "What is the capital of France?", "Paris."


def test_c10_refine_loop(park, park_pool):
    reaching = run_refine_loop(PARK_Q, PARK_A, park, park_pool, max_iters=3)
    assert reaching.categories[-1] == Category.VALID
    assert len(reaching.steps) <= 3
    stuck = run_refine_loop(OFF_TOPIC_Q, OFF_TOPIC_A, park, park_pool, max_iters=5)
    assert len(stuck.steps) == 5
    assert all(c == Category.NO_TRANSLATIONS for c in stuck.categories)
    assert stuck.final != Category.VALID
    record(
        10,
        True,
        f"Satisfiable fixture {[c.value for c in reaching.categories]}; NoTranslations fixture stops after {len(stuck.steps)} steps",
    )
