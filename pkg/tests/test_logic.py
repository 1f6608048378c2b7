import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from policyguard.errors import SmtSyntaxError, SortError, UnknownSymbol
from policyguard.logic import (
    BOOL,
    INT,
    REAL,
    BoolLit,
    Env,
    Implies,
    Not,
    RealLit,
    Var,
    evaluate,
    free_vars,
    parse_script,
    parse_term,
    print_script,
    print_term,
)
from policyguard.logic import _reader_py, sexp
from strategies import COLOR, VARIABLES, bool_terms, env, random_term

PARK_ENV = Env.of(
    {
        "isLowSeason": BOOL,
        "admissionFee": REAL,
        "baseFee": REAL,
        "customerCredits": REAL,
        "admissionFeeAfterDiscount": REAL,
        "isEntryAllowed": BOOL,
    }
)


# -- parse_term / print_term examples


def test_parse_rule_with_implication():
    t = parse_term("(=> isLowSeason (= admissionFee (* 0.75 baseFee)))", PARK_ENV)
    assert isinstance(t, Implies)
    assert t.sort == BOOL


def test_parse_true_literal():
    assert parse_term("true", env()) == BoolLit(True)


def test_bool_connective_over_int_is_sort_error():
    e = Env.of({"x": INT})
    with pytest.raises(SortError) as info:
        parse_term("(and x (> x 1))", e)
    assert info.value.arg_index in (0, 1)
    assert info.value.subterm == "x"
    assert info.value.position == 5


@pytest.mark.parametrize(
    "term,text",
    [
        (Implies(Var("p", BOOL), Var("q", BOOL)), "(=> p q)"),
        (RealLit(Fraction(3, 4)), "0.75"),
        (Not(Var("isEntryAllowed", BOOL)), "(not isEntryAllowed)"),
    ],
)
def test_print_examples(term, text):
    assert print_term(term) == text


@pytest.mark.parametrize(
    "text,names",
    [
        ("(=> p q)", {"p", "q"}),
        ("(= n 3)", {"n"}),
    ],
)
def test_free_vars_examples(text, names):
    assert free_vars(parse_term(text, env())) == names


def test_free_vars_of_credit_rule():
    t = parse_term("(<= (* 2.0 customerCredits) admissionFeeAfterDiscount)", PARK_ENV)
    assert free_vars(t) == {"customerCredits", "admissionFeeAfterDiscount"}


def test_unknown_symbol_suggests_nearest():
    with pytest.raises(UnknownSymbol) as info:
        parse_term("(not isEntryAlowed)", PARK_ENV)
    assert info.value.suggestion == "isEntryAllowed"
    assert info.value.position == 5


def test_syntax_error_reports_line_and_column():
    with pytest.raises(SmtSyntaxError) as info:
        parse_term("(and p\n  q", env())
    assert info.value.line == 1 and info.value.column == 1


@pytest.mark.parametrize("text", ["(forall ((z Int)) p)", "(exists ((z Int)) p)", "(let ((z p)) z)", "(f p)", "(foo n m)"])
def test_outside_fragment_is_syntax_error(text):
    with pytest.raises(SmtSyntaxError):
        parse_term(text, env())


@pytest.mark.parametrize("text", ["(= p q r)", "(< n m 3)", "(=> p q r)", "|p|", "-1", "1e3"])
def test_rejected_shapes(text):
    with pytest.raises(SmtSyntaxError):
        parse_term(text, env())


def test_mixed_arithmetic_sorts():
    assert parse_term("(/ n m)", env()).sort == REAL
    assert parse_term("(+ n m)", env()).sort == INT
    assert parse_term("(* 2 x)", env()).sort == REAL
    assert print_term(parse_term("(- n)", env())) == "(- 0 n)"


def test_reals_are_exact():
    t = parse_term("(* 1.1 1.1)", env())
    assert evaluate(t, {}) == Fraction("1.21")


# -- round trip


@given(bool_terms(3))
@settings(max_examples=300)
def test_round_trip_hypothesis(t):
    text = print_term(t)
    assert parse_term(text, env()) == t


def test_round_trip_covers_every_production():
    rng = random.Random(3)
    seen = set()
    for _ in range(3000):
        t = random_term(rng, depth=4)
        for kind in _productions(t):
            seen.add(kind)
        assert parse_term(print_term(t), env()) == t
    assert seen >= {"and", "or", "not", "=>", "=", "<", "<=", ">", ">=", "+", "-", "*", "/", "int", "real", "bool", "ctor", "var"}


def _productions(t):
    from policyguard.logic import And, App, Constructor, IntLit, Or, iter_subterms

    for s in iter_subterms(t):
        if isinstance(s, And):
            yield "and"
        elif isinstance(s, Or):
            yield "or"
        elif isinstance(s, Not):
            yield "not"
        elif isinstance(s, Implies):
            yield "=>"
        elif isinstance(s, App):
            yield s.op
        elif isinstance(s, IntLit):
            yield "int"
        elif isinstance(s, RealLit):
            yield "real"
        elif isinstance(s, BoolLit):
            yield "bool"
        elif isinstance(s, Constructor):
            yield "ctor"
        elif isinstance(s, Var):
            yield "var"


# -- sort checking against a brute-force derivation

_OPS = ["and", "or", "not", "=>", "=", "<", ">=", "+", "-", "*", "/"]
_LEAVES = ["p", "q", "n", "x", "c", "RED", "true", "3", "0.5"]


def _random_sexp(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        return rng.choice(_LEAVES)
    op = rng.choice(_OPS)
    arity = rng.choice([1, 2, 2, 2, 3])
    return [op] + [_random_sexp(rng, depth - 1) for _ in range(arity)]


def _text(s):
    return s if isinstance(s, str) else "(" + " ".join(_text(a) for a in s) + ")"


def _derive(s):
    """Sort of an untyped tree by the grammar rules, or None if underivable."""
    if isinstance(s, str):
        if s in VARIABLES:
            v = VARIABLES[s]
            return "Color" if v.is_datatype else v.name
        return {"RED": "Color", "true": "Bool", "3": "Int", "0.5": "Real"}[s]
    op, args = s[0], [_derive(a) for a in s[1:]]
    if None in args:
        return None
    num = {"Int", "Real"}
    if op in ("and", "or"):
        return "Bool" if len(args) >= 2 and all(a == "Bool" for a in args) else None
    if op == "not":
        return "Bool" if args == ["Bool"] else None
    if op == "=>":
        return "Bool" if args == ["Bool", "Bool"] else None
    if op == "=":
        if len(args) != 2:
            return None
        same = args[0] == args[1] or set(args) <= num
        return "Bool" if same else None
    if op in ("<", ">="):
        return "Bool" if len(args) == 2 and set(args) <= num else None
    # arithmetic; unary minus only
    if len(args) == 1 and op == "-" and args[0] in num:
        return args[0]
    if len(args) != 2 or not set(args) <= num:
        return None
    return "Real" if op == "/" or "Real" in args else "Int"


def test_sort_checker_matches_derivation():
    rng = random.Random(5)
    e = env()
    accepted = rejected = 0
    for _ in range(5000):
        s = _random_sexp(rng, 4)
        want = _derive(s)
        try:
            got = parse_term(_text(s), e).sort
        except (SortError, SmtSyntaxError):
            got = None
        if want is None:
            assert got is None, _text(s)
            rejected += 1
        else:
            assert got is not None and (got.name == want), _text(s)
            accepted += 1
    assert accepted > 500 and rejected > 500


# -- scripts


def test_script_round_trip():
    text = (
        "(declare-datatype Color ((RED) (GREEN) (BLUE)))\n"
        "(declare-const p Bool)\n(declare-const c Color)\n"
        "(assert (=> p (= c RED)))\n"
    )
    script = parse_script(text)
    assert parse_script(print_script(script)) == script
    assert len(script.assertions) == 1


def test_script_requires_declarations_first():
    with pytest.raises(SmtSyntaxError):
        parse_script("(declare-const p Bool)\n(assert p)\n(declare-const q Bool)\n")


# -- evaluator


def test_evaluate_mixed_and_datatype():
    t = parse_term("(and (= c GREEN) (> (/ n 4) x))", env())
    assert evaluate(t, {"c": "GREEN", "n": 3, "x": Fraction("0.7")}) is True
    assert evaluate(t, {"c": "RED", "n": 3, "x": Fraction("0.7")}) is False


# -- s-expression readers agree

sexp_text = st.recursive(
    st.sampled_from(["a", "b1", "x_y", "12", "3.5", "=>", '"s t"', '"q""q"']),
    lambda inner: st.lists(inner, max_size=4).map(lambda xs: "(" + " ".join(xs) + ")"),
    max_leaves=30,
)


@given(st.lists(sexp_text, min_size=1, max_size=3).map(lambda xs: " ; c\n".join(xs)))
@settings(max_examples=300)
def test_readers_agree_on_valid_input(text):
    assert _reader_py.read_all(text) == sexp.read_all(text)


@given(st.text(alphabet='()ab "|;\n', max_size=20))
@settings(max_examples=300)
def test_readers_agree_on_arbitrary_input(text):
    def run(reader):
        try:
            return ("ok", reader(text))
        except SmtSyntaxError as exc:
            return ("err", exc.message, exc.position)

    assert run(_reader_py.read_all) == run(sexp.read_all)


def test_backend_is_reported():
    assert sexp.BACKEND in ("cython", "python")


def test_color_fixture_declared():
    assert COLOR.constructors == ("RED", "GREEN", "BLUE")
