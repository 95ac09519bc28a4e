# src/core/stl_formula.py
"""
AST de lógica temporal de señales (STL) sobre señales discretas.

Los intervalos temporales son índices de nudo, no segundos.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np


class StlError(Exception):
    """Base de los errores de STL."""


class IntervalError(StlError):
    pass


class WindowError(StlError):
    """La ventana temporal de la fórmula sale de la señal."""


PredicateFn = Callable[[np.ndarray, np.ndarray], float]
PredicateGrad = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class Predicate:
    """
    Predicado π := μ(y, anchor) − c ≥ 0.

    `fn` devuelve μ − c para una muestra y (y el ancla mundial del pie de apoyo);
    `grad_fn` devuelve (∂/∂y, ∂/∂anchor).
    """

    name: str
    fn: PredicateFn = field(compare=False, repr=False)
    grad_fn: PredicateGrad = field(compare=False, repr=False)

    def eval(self, y: np.ndarray, anchor: Optional[np.ndarray] = None) -> float:
        return float(self.fn(y, _anchor(anchor)))

    def grad(self, y: np.ndarray, anchor: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        gy, ga = self.grad_fn(y, _anchor(anchor))
        return np.asarray(gy, dtype=float), np.asarray(ga, dtype=float)


def _anchor(anchor: Optional[np.ndarray]) -> np.ndarray:
    return np.zeros(2) if anchor is None else np.asarray(anchor, dtype=float)


def linear_predicate(
    name: str,
    coeffs: Sequence[float],
    offset: float = 0.0,
    anchor_coeffs: Optional[Sequence[float]] = None,
) -> Predicate:
    """Predicado afín: a·y + b·anchor − offset."""
    a = np.asarray(coeffs, dtype=float)
    b = np.zeros(2) if anchor_coeffs is None else np.asarray(anchor_coeffs, dtype=float)

    def fn(y: np.ndarray, anchor: np.ndarray) -> float:
        return float(a @ y + b @ anchor - offset)

    def grad_fn(y: np.ndarray, anchor: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return a.copy(), b.copy()

    return Predicate(name, fn, grad_fn)


@dataclass(frozen=True)
class Signal:
    """Muestras (n, d) por nudo, más el ancla mundial (n, 2) del pie de apoyo."""

    samples: np.ndarray
    anchors: Optional[np.ndarray] = None

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.ndim != 2:
            raise ValueError("samples debe ser una matriz (n, d)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("la señal contiene valores no finitos")
        anchors = np.zeros((samples.shape[0], 2)) if self.anchors is None else np.asarray(self.anchors, dtype=float)
        if anchors.shape != (samples.shape[0], 2):
            raise ValueError(f"anchors debe tener forma ({samples.shape[0]}, 2)")
        samples.setflags(write=False)
        anchors.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "anchors", anchors)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


class NodeKind(str, Enum):
    PRED = "Pred"
    NOT = "Not"
    AND = "And"
    OR = "Or"
    EVENTUALLY = "Eventually"
    ALWAYS = "Always"
    UNTIL = "Until"


TEMPORAL = (NodeKind.EVENTUALLY, NodeKind.ALWAYS, NodeKind.UNTIL)


@dataclass(frozen=True)
class StlFormula:
    kind: NodeKind
    children: Tuple["StlFormula", ...] = ()
    interval: Optional[Tuple[int, int]] = None
    predicate: Optional[Predicate] = None

    def __post_init__(self):
        arity = len(self.children)
        if self.kind is NodeKind.PRED:
            if self.predicate is None or arity:
                raise StlError("Pred requiere un predicado y ningún hijo")
        elif self.kind in (NodeKind.NOT, NodeKind.EVENTUALLY, NodeKind.ALWAYS) and arity != 1:
            raise StlError(f"{self.kind.value} requiere exactamente un hijo")
        elif self.kind in (NodeKind.AND, NodeKind.OR) and arity < 2:
            raise StlError(f"{self.kind.value} requiere al menos dos hijos")
        elif self.kind is NodeKind.UNTIL and arity != 2:
            raise StlError("Until requiere exactamente dos hijos")

        if self.kind in TEMPORAL:
            if self.interval is None:
                raise IntervalError(f"{self.kind.value} requiere intervalo")
            a, b = self.interval
            if a < 0 or a > b:
                raise IntervalError(f"intervalo inválido [{a},{b}]")
        elif self.interval is not None:
            raise IntervalError(f"{self.kind.value} no admite intervalo")

    def __str__(self) -> str:
        return format_formula(self)


# Constructores

def pred(p: Predicate) -> StlFormula:
    return StlFormula(NodeKind.PRED, predicate=p)


def negate(f: StlFormula) -> StlFormula:
    return StlFormula(NodeKind.NOT, (f,))


def conj(*fs: StlFormula) -> StlFormula:
    return StlFormula(NodeKind.AND, tuple(fs))


def disj(*fs: StlFormula) -> StlFormula:
    return StlFormula(NodeKind.OR, tuple(fs))


def eventually(a: int, b: int, f: StlFormula) -> StlFormula:
    return StlFormula(NodeKind.EVENTUALLY, (f,), (int(a), int(b)))


def always(a: int, b: int, f: StlFormula) -> StlFormula:
    return StlFormula(NodeKind.ALWAYS, (f,), (int(a), int(b)))


def until(a: int, b: int, lhs: StlFormula, rhs: StlFormula) -> StlFormula:
    return StlFormula(NodeKind.UNTIL, (lhs, rhs), (int(a), int(b)))


def walk(f: StlFormula) -> Iterator[StlFormula]:
    """Recorrido en preorden."""
    stack = [f]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def node_count(f: StlFormula) -> int:
    return sum(1 for _ in walk(f))


def horizon(f: StlFormula) -> int:
    """Último desplazamiento de nudo que lee la fórmula evaluada en t=0."""
    if f.kind is NodeKind.PRED:
        return 0
    inner = max(horizon(c) for c in f.children)
    if f.kind in TEMPORAL:
        return f.interval[1] + inner
    return inner


def check_window(f: StlFormula, length: int, t: int) -> None:
    if t < 0:
        raise WindowError(f"instante negativo t={t}")
    end = t + horizon(f)
    if end >= length:
        raise WindowError(f"la fórmula lee el nudo {end} y la señal tiene {length} muestras")


_PRECEDENCE = {
    NodeKind.PRED: 4,
    NodeKind.NOT: 3,
    NodeKind.EVENTUALLY: 3,
    NodeKind.ALWAYS: 3,
    NodeKind.UNTIL: 2,
    NodeKind.AND: 1,
    NodeKind.OR: 0,
}


def format_formula(f: StlFormula) -> str:
    """Imprime la fórmula con la gramática del parser; parse(format(f)) == f."""
    kind = f.kind
    if kind is NodeKind.PRED:
        return f.predicate.name
    if kind in (NodeKind.NOT, NodeKind.EVENTUALLY, NodeKind.ALWAYS):
        prefix = "!" if kind is NodeKind.NOT else f"{'F' if kind is NodeKind.EVENTUALLY else 'G'}[{f.interval[0]},{f.interval[1]}] "
        return prefix + _operand(f.children[0], _PRECEDENCE[kind])
    if kind is NodeKind.UNTIL:
        a, b = f.interval
        lhs = _operand(f.children[0], _PRECEDENCE[kind])
        rhs = _operand(f.children[1], _PRECEDENCE[kind])
        return f"{lhs} U[{a},{b}] {rhs}"
    symbol = " & " if kind is NodeKind.AND else " | "
    return symbol.join(_operand(c, _PRECEDENCE[kind]) for c in f.children)


def _operand(child: StlFormula, parent_level: int) -> str:
    text = format_formula(child)
    # Los hijos binarios se parentizan siempre: el parser aplana solo dentro de un nivel
    if _PRECEDENCE[child.kind] <= parent_level or child.kind in (NodeKind.AND, NodeKind.OR, NodeKind.UNTIL):
        return f"({text})"
    return text
