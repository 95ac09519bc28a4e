# src/core/stl_parser.py
"""
Parser de fórmulas STL.

Gramática (precedencia de mayor a menor: `!`/temporales, `U`, `&`, `|`):

    phi := PRED | !phi | phi & phi | phi "|" phi
         | F[a,b] phi | G[a,b] phi | phi U[a,b] phi | (phi)
"""
import threading
from typing import Any, Dict, List, Mapping

import pyparsing as pp

from .stl_formula import (
    IntervalError,
    NodeKind,
    Predicate,
    StlError,
    StlFormula,
    always,
    conj,
    disj,
    eventually,
    negate,
    pred,
    until,
    walk,
)


class StlSyntaxError(StlError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class UnknownPredicateError(StlError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"predicado desconocido '{name}' (offset {offset})")
        self.name = name
        self.offset = offset


def _build_grammar() -> pp.ParserElement:
    lbrack, rbrack, comma = map(pp.Suppress, "[],")
    integer = pp.Word(pp.nums).set_parse_action(lambda t: int(t[0]))
    # Tras '[' cualquier fallo es definitivo y conserva la posición exacta
    interval = lbrack - integer - comma - integer - rbrack

    reserved = pp.Keyword("F") | pp.Keyword("G") | pp.Keyword("U")
    identifier = ~reserved + pp.Word(pp.alphas + "_", pp.alphanums + "_")
    operand = identifier.copy().set_parse_action(lambda s, loc, t: ("pred", t[0], loc))

    not_op = pp.Group(pp.Literal("!"))
    eventually_op = pp.Group(pp.Keyword("F") + interval)
    always_op = pp.Group(pp.Keyword("G") + interval)
    until_op = pp.Group(pp.Keyword("U") + interval)

    return pp.infix_notation(
        operand,
        [
            (not_op | eventually_op | always_op, 1, pp.OpAssoc.RIGHT, _unary_action),
            (until_op, 2, pp.OpAssoc.LEFT, _until_action),
            (pp.Literal("&"), 2, pp.OpAssoc.LEFT, _nary_action("and")),
            (pp.Literal("|"), 2, pp.OpAssoc.LEFT, _nary_action("or")),
        ],
    )


def _unary_action(s: str, loc: int, tokens: pp.ParseResults) -> Any:
    items = tokens[0]
    # Operadores unarios encadenados: '! ! a' llega como [op, op, operando]
    node = items[-1]
    for op in reversed(list(items[:-1])):
        if op[0] == "!":
            node = ("not", node)
        else:
            node = (op[0], op[1], op[2], node, loc)
    return [node]


def _until_action(s: str, loc: int, tokens: pp.ParseResults) -> Any:
    items = tokens[0]
    node = items[0]
    for i in range(1, len(items), 2):
        op = items[i]
        node = ("U", op[1], op[2], node, items[i + 1], loc)
    return [node]


def _nary_action(kind: str):
    def action(s: str, loc: int, tokens: pp.ParseResults) -> Any:
        items = tokens[0]
        return [(kind, [items[i] for i in range(0, len(items), 2)])]

    return action


_GRAMMAR = _build_grammar()
# El estado interno de pyparsing no es seguro entre hilos; se serializa el análisis
_LOCK = threading.Lock()


def parse_stl(text: str, registry: Mapping[str, Predicate]) -> StlFormula:
    """Analiza `text` y resuelve los nombres de predicado en `registry`."""
    with _LOCK:
        try:
            raw = _GRAMMAR.parse_string(text, parse_all=True)[0]
        except pp.ParseBaseException as e:
            # Offset 1-based sobre la línea (la gramática es de una sola línea)
            raise StlSyntaxError(f"error de sintaxis: {e.msg}", e.col) from None
    return _resolve(raw, registry)


def _resolve(raw: Any, registry: Mapping[str, Predicate]) -> StlFormula:
    tag = raw[0]
    if tag == "pred":
        _, name, loc = raw
        if name not in registry:
            raise UnknownPredicateError(name, loc + 1)
        return pred(registry[name])
    if tag == "not":
        return negate(_resolve(raw[1], registry))
    if tag in ("F", "G"):
        _, a, b, child, loc = raw
        _check_interval(a, b, loc)
        builder = eventually if tag == "F" else always
        return builder(a, b, _resolve(child, registry))
    if tag == "U":
        _, a, b, lhs, rhs, loc = raw
        _check_interval(a, b, loc)
        return until(a, b, _resolve(lhs, registry), _resolve(rhs, registry))
    children: List[StlFormula] = [_resolve(c, registry) for c in raw[1]]
    return conj(*children) if tag == "and" else disj(*children)


def _check_interval(a: int, b: int, loc: int) -> None:
    if a > b:
        raise IntervalError(f"intervalo invertido [{a},{b}] (offset {loc + 1})")


def predicate_names(f: StlFormula) -> Dict[str, Predicate]:
    """Tabla nombre → predicado usada por la fórmula (útil para re-analizar su impresión)."""
    return {n.predicate.name: n.predicate for n in walk(f) if n.kind is NodeKind.PRED}
