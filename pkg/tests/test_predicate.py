import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from predgen import DOMAINS, _value, random_predicate
from gridbox.errors import InvalidQuery, UnknownAttribute
from gridbox.harness.oracle import holds
from gridbox.query import evaluate, parse_predicate, to_doc
from gridbox.query.predicate import depth, path_spec


def random_fact(rng: random.Random) -> dict:
    fact = {}
    for path, (kind, domain) in DOMAINS.items():
        if path_spec(path).get("multi"):
            fact[path] = [_value(rng, kind, domain) for _ in range(rng.randrange(0, 3))]
        elif rng.random() < 0.85:
            fact[path] = _value(rng, kind, domain)
    return fact


@given(st.integers(0, 2**32))
def test_engine_agrees_with_oracle(seed):
    rng = random.Random(seed)
    doc = random_predicate(rng)
    pred = parse_predicate(doc)
    assert depth(pred) <= 4
    for _ in range(10):
        fact = random_fact(rng)
        assert evaluate(pred, fact) == holds(doc, fact)


@given(st.integers(0, 2**32))
def test_doc_round_trip(seed):
    doc = random_predicate(random.Random(seed))
    pred = parse_predicate(doc)
    assert parse_predicate(to_doc(pred)) == pred


def leaf(path, op, *operands):
    return parse_predicate({"path": path, "op": op, "operands": list(operands)})


def test_missing_value_semantics():
    fact = {"patient.age_at_study": 52}
    assert not evaluate(leaf("image.laterality", "NE", "L"), fact)
    assert not evaluate(leaf("image.laterality", "EQ", "L"), fact)
    assert evaluate(parse_predicate({"not": {"path": "image.laterality", "op": "EQ", "operands": ["L"]}}), fact)
    assert not evaluate(leaf("image.laterality", "EXISTS"), fact)
    assert evaluate(leaf("patient.age_at_study", "EXISTS"), fact)


def test_between_is_inclusive():
    pred = leaf("patient.age_at_study", "BETWEEN", 50, 55)
    assert [a for a in range(45, 60) if evaluate(pred, {"patient.age_at_study": a})] == list(range(50, 56))


def test_multi_valued_paths_match_any():
    fact = {"assessment.finding_type": ["CALCIFICATION", "MASS"]}
    assert evaluate(leaf("assessment.finding_type", "EQ", "MASS"), fact)
    assert evaluate(leaf("assessment.finding_type", "NE", "MASS"), fact)
    assert not evaluate(leaf("assessment.finding_type", "EXISTS"), {"assessment.finding_type": []})


def test_empty_connectives():
    assert evaluate(parse_predicate({"and": []}), {})
    assert not evaluate(parse_predicate({"or": []}), {})
    assert evaluate(parse_predicate(None), {})


def test_bool_never_orders():
    assert not evaluate(leaf("patient.age_at_study", "GT", 3), {"patient.age_at_study": True})


@pytest.mark.parametrize(
    "doc",
    [
        {"path": "patient.age_at_study", "op": "BETWEEN", "operands": [55, 50]},
        {"path": "patient.age_at_study", "op": "EQ", "operands": ["52"]},
        {"path": "patient.age_at_study", "op": "CONTAINS", "operands": [5]},
        {"path": "clinical.hrt_treatment", "op": "GT", "operands": [True]},
        {"path": "patient.sex", "op": "EQ", "operands": ["X"]},
        {"path": "study.study_date", "op": "EQ", "operands": ["2004-01-01"]},
        {"path": "patient.sex", "op": "EXISTS", "operands": ["F"]},
        {"path": "patient.sex", "op": "LIKE", "operands": ["F"]},
        {"path": "patient.sex", "op": "EQ", "operands": []},
        {"bogus": 1},
        [1, 2],
    ],
)
def test_invalid_predicates(doc):
    with pytest.raises(InvalidQuery):
        parse_predicate(doc)


def test_unknown_attribute_names_the_path():
    with pytest.raises(UnknownAttribute) as info:
        parse_predicate({"path": "patient.shoe_size", "op": "EQ", "operands": [4]})
    assert info.value.path == "patient.shoe_size"


def test_depth_limit():
    doc = {"path": "patient.sex", "op": "EQ", "operands": ["F"]}
    for _ in range(8):
        doc = {"not": doc}
    with pytest.raises(InvalidQuery):
        parse_predicate(doc)
