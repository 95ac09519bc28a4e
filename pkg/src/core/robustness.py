# src/core/robustness.py
"""
Semántica booleana y cuantitativa (exacta) de STL sobre señales discretas.

Los empates en min/max se resuelven con el primer índice; solo afecta a los
instantes críticos que se reportan en el árbol, nunca a los valores.
"""
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
import orjson

from .stl_formula import NodeKind, Signal, StlFormula, check_window, format_formula


def eval_satisfaction(f: StlFormula, s: Signal, t: int = 0) -> bool:
    """Validez recursiva de f sobre s en el nudo t."""
    check_window(f, len(s), t)
    return _sat(f, s, t)


def _sat(f: StlFormula, s: Signal, t: int) -> bool:
    kind = f.kind
    if kind is NodeKind.PRED:
        return f.predicate.eval(s.samples[t], s.anchors[t]) >= 0.0
    if kind is NodeKind.NOT:
        return not _sat(f.children[0], s, t)
    if kind is NodeKind.AND:
        return all(_sat(c, s, t) for c in f.children)
    if kind is NodeKind.OR:
        return any(_sat(c, s, t) for c in f.children)
    a, b = f.interval
    if kind is NodeKind.EVENTUALLY:
        return any(_sat(f.children[0], s, k) for k in range(t + a, t + b + 1))
    if kind is NodeKind.ALWAYS:
        return all(_sat(f.children[0], s, k) for k in range(t + a, t + b + 1))
    # Until: existe t' en la ventana con ψ(t') y φ en todo [t, t']
    lhs, rhs = f.children
    return any(
        _sat(rhs, s, k) and all(_sat(lhs, s, j) for j in range(t, k + 1))
        for k in range(t + a, t + b + 1)
    )


@dataclass(frozen=True)
class RobustnessTree:
    """Robustez por nodo en preorden; `times` es el nudo en que se evaluó cada nodo."""

    values: np.ndarray
    times: Tuple[int, ...]
    nodes: Tuple[StlFormula, ...]

    @property
    def root(self) -> float:
        return float(self.values[0])

    def __len__(self) -> int:
        return len(self.values)

    def to_json(self) -> bytes:
        payload = [
            {"node": format_formula(n), "kind": n.kind.value, "t": t, "rho": float(v)}
            for n, t, v in zip(self.nodes, self.times, self.values)
        ]
        return orjson.dumps(payload, option=orjson.OPT_INDENT_2)


class _Exact:
    def __init__(self, s: Signal):
        self.s = s
        self.cache: Dict[Tuple[int, int], float] = {}

    def value(self, f: StlFormula, t: int) -> float:
        key = (id(f), t)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        kind = f.kind
        if kind is NodeKind.PRED:
            v = f.predicate.eval(self.s.samples[t], self.s.anchors[t])
        elif kind is NodeKind.NOT:
            v = -self.value(f.children[0], t)
        elif kind is NodeKind.AND:
            v = min(self.value(c, t) for c in f.children)
        elif kind is NodeKind.OR:
            v = max(self.value(c, t) for c in f.children)
        elif kind is NodeKind.EVENTUALLY:
            v = max(self.window(f, t))
        elif kind is NodeKind.ALWAYS:
            v = min(self.window(f, t))
        else:
            v = max(self.until_terms(f, t))
        self.cache[key] = v
        return v

    def window(self, f: StlFormula, t: int) -> List[float]:
        a, b = f.interval
        return [self.value(f.children[0], k) for k in range(t + a, t + b + 1)]

    def until_terms(self, f: StlFormula, t: int) -> List[float]:
        a, b = f.interval
        lhs, rhs = f.children
        terms = []
        running = np.inf
        for k in range(t, t + b + 1):
            running = min(running, self.value(lhs, k))
            if k >= t + a:
                terms.append(min(self.value(rhs, k), running))
        return terms


def robustness(f: StlFormula, s: Signal, t: int = 0) -> float:
    """Grado de robustez de la raíz."""
    check_window(f, len(s), t)
    return float(_Exact(s).value(f, t))


def eval_robustness(f: StlFormula, s: Signal, t: int = 0) -> RobustnessTree:
    """Árbol de robustez completo; los hijos temporales se reportan en su instante crítico."""
    check_window(f, len(s), t)
    ev = _Exact(s)
    values: List[float] = []
    times: List[int] = []
    nodes: List[StlFormula] = []

    def visit(node: StlFormula, k: int) -> None:
        values.append(ev.value(node, k))
        times.append(k)
        nodes.append(node)
        kind = node.kind
        if kind is NodeKind.PRED:
            return
        if kind in (NodeKind.NOT, NodeKind.AND, NodeKind.OR):
            for c in node.children:
                visit(c, k)
            return
        a = node.interval[0]
        if kind is NodeKind.EVENTUALLY:
            visit(node.children[0], k + a + int(np.argmax(ev.window(node, k))))
            return
        if kind is NodeKind.ALWAYS:
            visit(node.children[0], k + a + int(np.argmin(ev.window(node, k))))
            return
        lhs, rhs = node.children
        k_star = k + a + int(np.argmax(ev.until_terms(node, k)))
        lhs_values = [ev.value(lhs, j) for j in range(k, k_star + 1)]
        visit(lhs, k + int(np.argmin(lhs_values)))
        visit(rhs, k_star)

    visit(f, t)
    return RobustnessTree(np.asarray(values, dtype=float), tuple(times), tuple(nodes))
