import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from policyguard.errors import DatasetFormat, EmptyCounts
from policyguard.evaluation import BINARIZATION, EvalCase, load_dataset, parse_dataset, run_eval, run_refine_loop
from policyguard.logic import BOOL, ConstDecl, Env, parse_term
from policyguard.metrics import ConfusionCounts, compute_metrics, round_half_up
from policyguard.model import PolicyModel, Rule, VariableSpec
from policyguard.translator import ScriptedBackend, TranslatorPool, qa_text
from policyguard.verifier import Category

# -- metrics


def test_degenerate_counts():
    row = compute_metrics(ConfusionCounts(0, 0, 1, 0))
    assert row.display() == {
        "soundness": "100.0",
        "fpr": "0.0",
        "precision": "0.0",
        "recall": "0.0",
        "f1": "0.0",
        "accuracy": "100.0",
    }


def test_refchecker_row():
    row = compute_metrics(ConfusionCounts(917, 245, 274, 130))
    assert row.rounded() == {"soundness": 84.4, "fpr": 47.2, "precision": 78.9, "recall": 87.6, "f1": 83.0, "accuracy": 76.1}
    assert row.line() == "S=84.4 FPR=47.2 Pr=78.9 Re=87.6 F1=83.0 Ac=76.1"


def test_empty_counts():
    with pytest.raises(EmptyCounts):
        compute_metrics(ConfusionCounts())


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


def test_round_half_up():
    assert round_half_up(Fraction(845, 10)) == Fraction(845, 10)
    assert round_half_up(Fraction(8425, 100)) == Fraction(843, 10)
    assert round_half_up(Fraction(1, 3), 2) == Fraction(33, 100)


def test_json_keeps_exact_values():
    data = compute_metrics(ConfusionCounts(1, 1, 1, 0)).to_json()
    assert data["precision"] == {"num": 50, "den": 1, "display": "50.0"}
    assert data["f1"]["num"] / data["f1"]["den"] == pytest.approx(200 / 3)
    json.dumps(data)


counts = st.builds(ConfusionCounts, *[st.integers(0, 500)] * 4).filter(lambda c: c.total > 0)


@given(counts)
def test_metric_identities(c):
    row = compute_metrics(c)
    assert row.soundness + Fraction(100 * c.fp, c.total) == 100
    assert row.accuracy == Fraction(100 * (c.tp + c.tn), c.total)
    if row.precision + row.recall:
        assert row.f1 == 2 * row.precision * row.recall / (row.precision + row.recall)
    for name in ("soundness", "fpr", "precision", "recall", "f1", "accuracy"):
        assert 0 <= getattr(row, name) <= 100


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=50))
def test_add_tallies(pairs):
    c = ConfusionCounts()
    for p, a in pairs:
        c = c.add(p, a)
    assert c.total == len(pairs)
    assert c.tp == sum(p and a for p, a in pairs)
    assert c.fp == sum(p and not a for p, a in pairs)


# -- datasets


@pytest.mark.parametrize(
    "data,pointer",
    [
        ({"question": "q"}, ""),
        (["x"], "/0"),
        ([{"question": "q", "answer": "a"}], "/0/label"),
        ([{"question": "q", "answer": "a", "label": "YES"}], "/0/label"),
        ([{"question": "q", "answer": 3, "label": "VALID"}], "/0/answer"),
        ([{"question": "q", "answer": "a", "label": "VALID", "document_ref": 1}], "/0/document_ref"),
    ],
)
def test_dataset_errors(data, pointer):
    with pytest.raises(DatasetFormat) as info:
        parse_dataset(data)
    assert info.value.pointer == pointer


def test_dataset_bad_json(tmp_path):
    (tmp_path / "d.json").write_text("[{")
    with pytest.raises(DatasetFormat):
        load_dataset(tmp_path / "d.json")


def test_dataset_round_trip(tmp_path):
    cases = [EvalCase("q", "a", Category.INVALID, "doc.md"), EvalCase("q2", "a2", Category.VALID)]
    (tmp_path / "d.json").write_text(json.dumps([c.to_json() for c in cases]))
    assert load_dataset(tmp_path / "d.json") == cases


# -- run_eval on a small propositional policy

ENV = Env([ConstDecl(n, BOOL) for n in "pqr"])
MODEL = PolicyModel(
    (),
    tuple(VariableSpec(n, BOOL, f"proposition {n}") for n in "pqr"),
    (Rule("a", parse_term("(=> p q)", ENV)),),
)

VALID_PAIR = ("p", "q")
SAT_PAIR = ("r", "q")
INVALID_PAIR = ("p", "(not q)")


def pool_for(rows, k=1):
    """rows: (question, answer, [pair per backend]); None means no pair."""
    backends = [ScriptedBackend(name=f"b{i}") for i in range(k)]
    for q, a, pairs in rows:
        for b, pair in zip(backends, pairs if len(pairs) == k else pairs * k):
            b.add_translation(qa_text(q, a), [pair] if pair else [])
    return TranslatorPool(backends)


def test_four_cases_one_false_positive():
    rows = [
        ("q1", "a1", [VALID_PAIR], "VALID"),
        ("q2", "a2", [SAT_PAIR], "SATISFIABLE"),
        ("q3", "a3", [INVALID_PAIR], "INVALID"),
        ("q4", "a4", [VALID_PAIR], "INVALID"),
    ]
    cases = [EvalCase(q, a, Category.parse(label)) for q, a, _, label in rows]
    [res] = run_eval(cases, MODEL, pool_for([r[:3] for r in rows]))
    assert res.counts == ConfusionCounts(1, 1, 2, 0)
    assert res.metrics.display()["soundness"] == "75.0"
    assert [r.verdict for r in res.cases] == [Category.VALID, Category.SATISFIABLE, Category.INVALID, Category.VALID]


def test_all_correct():
    rows = [("q1", "a1", [VALID_PAIR]), ("q2", "a2", [SAT_PAIR])]
    cases = [EvalCase("q1", "a1", Category.VALID), EvalCase("q2", "a2", Category.SATISFIABLE)]
    [res] = run_eval(cases, MODEL, pool_for(rows), workers=2)
    assert res.metrics.fpr == 0 and res.metrics.soundness == 100


def test_threshold_sweep_false_positives_non_increasing():
    rows = [
        # the third translator finds nothing, so the pair has 2/3 support
        ("q1", "a1", [VALID_PAIR, VALID_PAIR, None]),
        ("q2", "a2", [VALID_PAIR, VALID_PAIR, VALID_PAIR]),
    ]
    cases = [EvalCase("q1", "a1", Category.SATISFIABLE), EvalCase("q2", "a2", Category.VALID)]
    low, high = run_eval(cases, MODEL, pool_for(rows, k=3), thresholds=[Fraction(2, 3), Fraction(1)])
    assert (low.counts.fp, high.counts.fp) == (1, 0)
    assert low.counts.tp == high.counts.tp == 1


def test_minority_translation_blocks_valid():
    rows = [("q1", "a1", [VALID_PAIR, VALID_PAIR, SAT_PAIR])]
    [res] = run_eval([EvalCase("q1", "a1", Category.SATISFIABLE)], MODEL, pool_for(rows, k=3), thresholds=[Fraction(2, 3)])
    assert [f.category for f in res.cases[0].findings] == [Category.VALID, Category.TRANSLATION_AMBIGUOUS]
    assert res.cases[0].verdict == Category.TRANSLATION_AMBIGUOUS


def test_eval_keeps_input_order():
    rows = [(f"q{i}", "a", [VALID_PAIR if i % 2 else SAT_PAIR]) for i in range(12)]
    cases = [EvalCase(q, a, Category.VALID) for q, a, _ in rows]
    [res] = run_eval(cases, MODEL, pool_for(rows), workers=4)
    assert [r.index for r in res.cases] == list(range(12))
    assert [r.predicted for r in res.cases] == [bool(i % 2) for i in range(12)]


def test_eval_json_notes_binarization():
    [res] = run_eval([EvalCase("q1", "a1", Category.VALID)], MODEL, pool_for([("q1", "a1", [VALID_PAIR])]))
    data = res.to_json()
    json.dumps(data)
    assert BINARIZATION in json.dumps(data)


# -- refine loop


def test_already_valid_single_step():
    pool = pool_for([("q1", "a1", [VALID_PAIR])])
    t = run_refine_loop("q1", "a1", MODEL, pool, max_iters=10)
    assert t.categories == [Category.VALID]
    assert pool.primary.calls["revise"] == 0
    assert t.steps[0].feedback is None


def test_revision_reaches_valid():
    pool = pool_for([("q1", "a1", [SAT_PAIR]), ("q1", "a2", [VALID_PAIR])])
    pool.primary.add_revision("q1", "a1", "a2")
    t = run_refine_loop("q1", "a1", MODEL, pool, max_iters=10)
    assert t.categories == [Category.SATISFIABLE, Category.VALID]
    assert t.steps[0].feedback and t.steps[1].answer == "a2"


def test_backend_fault_is_recorded():
    pool = pool_for([("q1", "a1", [SAT_PAIR])])
    t = run_refine_loop("q1", "a1", MODEL, pool, max_iters=10)
    assert t.categories == [Category.SATISFIABLE]
    assert t.error and t.error.startswith("BackendUnavailable")
    assert t.to_json()["error"] == t.error


def test_translation_fault_is_recorded():
    pool = TranslatorPool([ScriptedBackend()])
    t = run_refine_loop("q1", "a1", MODEL, pool)
    assert t.steps == [] and t.final is None and t.error


def test_max_iters_validated():
    with pytest.raises(ValueError):
        run_refine_loop("q", "a", MODEL, pool_for([]), max_iters=0)
