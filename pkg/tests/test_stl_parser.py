# tests/test_stl_parser.py
import numpy as np
import pytest

from src.core.stl_formula import (
    IntervalError,
    NodeKind,
    format_formula,
    horizon,
    linear_predicate,
    node_count,
)
from src.core.stl_parser import StlSyntaxError, UnknownPredicateError, parse_stl, predicate_names
from tests.conftest import CHANNEL_PREDICATES

REGISTRY = {name: linear_predicate(name, np.eye(3)[i]) for i, name in enumerate(("a", "b", "c"))}


def test_parse_always_with_interval():
    f = parse_stl("G[0,20] a", REGISTRY)
    assert f.kind is NodeKind.ALWAYS
    assert f.interval == (0, 20)
    assert f.children[0].predicate.name == "a"
    assert horizon(f) == 20


def test_precedence_and_binds_tighter_than_or():
    f = parse_stl("a & b | c", REGISTRY)
    assert f.kind is NodeKind.OR
    assert f.children[0].kind is NodeKind.AND
    assert f.children[1].predicate.name == "c"


def test_until_with_negated_lhs():
    f = parse_stl("!a U[1,3] b", REGISTRY)
    assert f.kind is NodeKind.UNTIL
    assert f.interval == (1, 3)
    assert f.children[0].kind is NodeKind.NOT


def test_unary_temporal_nesting():
    f = parse_stl("F[0,2] G[1,4] (a | !b)", REGISTRY)
    assert [n.kind for n in (f, f.children[0], f.children[0].children[0])] == [
        NodeKind.EVENTUALLY,
        NodeKind.ALWAYS,
        NodeKind.OR,
    ]
    assert node_count(f) == 6
    assert horizon(f) == 6


@pytest.mark.parametrize(
    "text",
    [
        "a",
        "!a",
        "a & b & c",
        "(a | b) & c",
        "F[0,3] (a U[0,2] b)",
        "G[2,5] !(a & F[0,1] c)",
        "a U[0,4] (b | c)",
    ],
)
def test_format_then_parse_gives_same_formula(text):
    f = parse_stl(text, REGISTRY)
    again = parse_stl(format_formula(f), REGISTRY)
    assert again == f


def test_corpus_formulas_reparse_to_themselves(stl_corpus):
    registry = {p.name: p for p in CHANNEL_PREDICATES}
    for f, _ in stl_corpus[:200]:
        assert parse_stl(format_formula(f), registry) == f


def test_unknown_predicate_reports_offset():
    with pytest.raises(UnknownPredicateError) as info:
        parse_stl("a & zz", REGISTRY)
    assert info.value.name == "zz"
    assert info.value.offset == 5


def test_syntax_error_is_reported_with_offset():
    with pytest.raises(StlSyntaxError) as info:
        parse_stl("G[0,] a", REGISTRY)
    assert info.value.offset >= 1


@pytest.mark.parametrize("text", ["", "a &", "(a | b", "F a", "a b"])
def test_malformed_formulas_are_rejected(text):
    with pytest.raises(StlSyntaxError):
        parse_stl(text, REGISTRY)


def test_inverted_interval_is_rejected():
    with pytest.raises(IntervalError):
        parse_stl("F[5,2] a", REGISTRY)


def test_predicate_names_collects_used_predicates():
    f = parse_stl("a U[0,1] (b & a)", REGISTRY)
    assert set(predicate_names(f)) == {"a", "b"}
