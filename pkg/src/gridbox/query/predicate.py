"""Predicate trees over catalogue attribute paths.

Wire form (JSON)::

    {"and": [p, ...]}   {"or": [p, ...]}   {"not": p}
    {"path": "patient.age_at_study", "op": "BETWEEN", "operands": [50, 55]}

An empty ``and`` is true and an empty ``or`` is false.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from gridbox.errors import InvalidQuery, UnknownAttribute

OPERATORS = ("EQ", "NE", "LT", "LE", "GT", "GE", "BETWEEN", "CONTAINS", "EXISTS")
_DATE = re.compile(r"^\d{8}$")


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("gridbox.query").joinpath("data/query_schema.json").read_text()
    return json.loads(text)


def path_spec(path: str) -> dict:
    try:
        return schema()["paths"][path]
    except KeyError:
        raise UnknownAttribute(path) from None


@dataclass(frozen=True)
class Leaf:
    path: str
    op: str
    operands: tuple = ()


@dataclass(frozen=True)
class And:
    children: tuple = ()


@dataclass(frozen=True)
class Or:
    children: tuple = ()


@dataclass(frozen=True)
class Not:
    child: object


TRUE = And(())


def depth(pred) -> int:
    if isinstance(pred, Leaf):
        return 1
    if isinstance(pred, Not):
        return 1 + depth(pred.child)
    return 1 + max((depth(c) for c in pred.children), default=0)


def _check_operand(path: str, spec: dict, value):
    kind = spec["type"]
    if kind == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == "bool":
        ok = isinstance(value, bool)
    elif kind == "date":
        ok = isinstance(value, str) and bool(_DATE.match(value))
    elif kind == "enum":
        ok = isinstance(value, str) and value in spec["values"]
    else:
        ok = isinstance(value, str)
    if not ok:
        raise InvalidQuery(f"operand {value!r} does not fit {path} ({kind})")


def validate_leaf(leaf: Leaf) -> None:
    spec = path_spec(leaf.path)
    if leaf.op not in OPERATORS:
        raise InvalidQuery(f"unknown operator {leaf.op!r}")
    kind = spec["type"]
    n = len(leaf.operands)
    if leaf.op == "EXISTS":
        if n:
            raise InvalidQuery("EXISTS takes no operands")
        return
    if leaf.op == "BETWEEN":
        if n != 2:
            raise InvalidQuery("BETWEEN takes exactly two operands")
    elif n != 1:
        raise InvalidQuery(f"{leaf.op} takes exactly one operand")
    if kind == "bool" and leaf.op not in ("EQ", "NE"):
        raise InvalidQuery(f"{leaf.op} is not defined on boolean {leaf.path}")
    if leaf.op == "CONTAINS" and kind in ("int", "bool"):
        raise InvalidQuery(f"CONTAINS is not defined on {kind} {leaf.path}")
    for value in leaf.operands:
        _check_operand(leaf.path, spec, value)
    if leaf.op == "BETWEEN" and leaf.operands[0] > leaf.operands[1]:
        raise InvalidQuery("BETWEEN operands must be ordered low, high")


def parse_predicate(doc, max_depth: int | None = None):
    if max_depth is None:
        max_depth = schema()["max_depth"]
    pred = _parse(doc)
    if depth(pred) > max_depth:
        raise InvalidQuery(f"predicate depth {depth(pred)} exceeds {max_depth}")
    return pred


def _parse(doc):
    if doc is None:
        return TRUE
    if not isinstance(doc, dict):
        raise InvalidQuery(f"predicate node must be an object, got {type(doc).__name__}")
    if "and" in doc:
        return And(tuple(_parse(c) for c in doc["and"]))
    if "or" in doc:
        return Or(tuple(_parse(c) for c in doc["or"]))
    if "not" in doc:
        return Not(_parse(doc["not"]))
    if "path" in doc:
        leaf = Leaf(str(doc["path"]), str(doc.get("op", "")).upper(), tuple(doc.get("operands", ())))
        validate_leaf(leaf)
        return leaf
    raise InvalidQuery(f"unrecognized predicate node {sorted(doc)}")


def to_doc(pred) -> dict:
    if isinstance(pred, Leaf):
        return {"path": pred.path, "op": pred.op, "operands": list(pred.operands)}
    if isinstance(pred, Not):
        return {"not": to_doc(pred.child)}
    key = "and" if isinstance(pred, And) else "or"
    return {key: [to_doc(c) for c in pred.children]}


def _compare(op: str, value, operands) -> bool:
    if op == "EQ":
        return value == operands[0]
    if op == "NE":
        return value != operands[0]
    if op == "CONTAINS":
        return isinstance(value, str) and operands[0] in value
    if type(value) is bool or value is None:
        return False
    if op == "BETWEEN":
        return operands[0] <= value <= operands[1]
    if op == "LT":
        return value < operands[0]
    if op == "LE":
        return value <= operands[0]
    if op == "GT":
        return value > operands[0]
    if op == "GE":
        return value >= operands[0]
    raise InvalidQuery(op)


def _leaf(leaf: Leaf, fact: dict) -> bool:
    value = fact.get(leaf.path)
    if path_spec(leaf.path).get("multi"):
        values = value or []
        if leaf.op == "EXISTS":
            return bool(values)
        return any(_compare(leaf.op, v, leaf.operands) for v in values if v is not None)
    if leaf.op == "EXISTS":
        return value is not None
    if value is None:
        return False
    return _compare(leaf.op, value, leaf.operands)


def evaluate(pred, fact: dict) -> bool:
    if isinstance(pred, Leaf):
        return _leaf(pred, fact)
    if isinstance(pred, And):
        return all(evaluate(c, fact) for c in pred.children)
    if isinstance(pred, Or):
        return any(evaluate(c, fact) for c in pred.children)
    if isinstance(pred, Not):
        return not evaluate(pred.child, fact)
    raise InvalidQuery(f"not a predicate: {pred!r}")


def referenced_paths(pred) -> set[str]:
    if isinstance(pred, Leaf):
        return {pred.path}
    if isinstance(pred, Not):
        return referenced_paths(pred.child)
    return set().union(*(referenced_paths(c) for c in pred.children)) if pred.children else set()
