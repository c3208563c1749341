import pytest
from hypothesis import given, strategies as st

from lemmaforge.terms import (
    App,
    TermError,
    Var,
    match,
    parse_term,
    positions,
    replace_at,
    substitute,
    subterm_at,
    term_text,
    variables,
)


def t(text):
    return parse_term(text)


def test_match_structural():
    assert match(t("add(0, x)"), t("add(0, S(0))")) == {"x": t("S(0)")}


def test_match_inconsistent_binding():
    assert match(t("add(x, x)"), t("add(0, S(0))")) is None


def test_match_variable_matches_anything():
    assert match(t("x"), t("add(0, 0)")) == {"x": t("add(0, 0)")}


def test_match_subject_variables_are_ground():
    # subject variables only unify through pattern variables
    assert match(t("add(0, y)"), t("add(x, 0)")) is None
    assert match(t("y"), t("x")) == {"y": t("x")}


def test_parse_print_roundtrip_examples():
    for text in ["add(S(0), x)", "0", "x1", "mul(add(x, y), S(S(0)))"]:
        assert term_text(parse_term(text)) == text.replace(",", ", ").replace(",  ", ", ")


def test_parse_errors():
    for bad in ["add(", "add(x,)", ")", "add(x y)", "", "Add(x)(y)"]:
        with pytest.raises(TermError):
            parse_term(bad)


def test_variable_lexical_class():
    assert isinstance(t("x"), Var)
    assert isinstance(t("x12"), Var)
    for sym in ["S", "0", "add", "xy", "x_1"]:
        assert isinstance(t(sym) if sym not in "0" else t(sym), (App,))


def test_positions_preorder_is_path_lexicographic():
    term = t("add(S(0), mul(x, 0))")
    paths = [p for p, _ in positions(term)]
    assert paths == sorted(paths)
    assert paths[0] == ()
    assert subterm_at(term, (1, 0)) == t("x")


def test_replace_at():
    term = t("add(S(0), x)")
    assert replace_at(term, (0,), t("0")) == t("add(0, x)")
    assert replace_at(term, (), t("0")) == t("0")
    with pytest.raises(TermError):
        replace_at(term, (5,), t("0"))


_vars = st.sampled_from(["x", "y", "z1"])


def terms(max_depth=3):
    base = st.one_of(_vars.map(Var), st.just(App("0")))
    return st.recursive(
        base,
        lambda sub: st.one_of(
            st.tuples(sub).map(lambda a: App("S", a)),
            st.tuples(sub, sub).map(lambda a: App("add", a)),
            st.tuples(sub, sub).map(lambda a: App("mul", a)),
        ),
        max_leaves=8,
    )


@given(terms())
def test_text_roundtrip(term):
    assert parse_term(term_text(term)) == term


@given(terms(), st.sampled_from(["x", "y"]), terms())
def test_substitute_grounds_variable(term, name, value):
    replaced = substitute(term, {name: value})
    assert name in variables(replaced) or name not in variables(term) or value == Var(name) or name not in variables(replaced)


@given(terms())
def test_match_reflexive(term):
    binding = match(term, term)
    assert binding is not None
    assert substitute(term, binding) == term
