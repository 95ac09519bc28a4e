# src/core/smooth_robustness.py
"""
Robustez suave de STL con gradiente analítico.

    miñ(ρ; k1) = −(1/k1) ln Σ exp(−k1 ρ_i)            (log-sum-exp, ≤ min)
    max̃(ρ; k2) = Σ ρ_i exp(k2 ρ_i) / Σ exp(k2 ρ_i)     (media softmax, ≤ max)

Bajo una negación la cota debe invertirse, así que los nodos con polaridad
negativa usan los operadores duales (≥ max, ≥ min):

    max̂(ρ; k2) = (1/k2) ln Σ exp(k2 ρ_i)
    min̂(ρ; k1) = Σ ρ_i exp(−k1 ρ_i) / Σ exp(−k1 ρ_i)

Con ello ρ̃ ≤ ρ para cualquier fórmula.
"""
from typing import Dict, List, Tuple

import numpy as np

from .stl_formula import NodeKind, Signal, StlFormula, check_window

Grad = Tuple[np.ndarray, np.ndarray]


def _softmax(z: np.ndarray) -> np.ndarray:
    # Desplazamiento por el máximo para evitar desbordes
    e = np.exp(z - np.max(z))
    return e / np.sum(e)


def smooth_min(values: np.ndarray, k: float) -> Tuple[float, np.ndarray]:
    """Cota inferior log-sum-exp del mínimo y sus pesos ∂/∂ρ_i."""
    rho = np.asarray(values, dtype=float)
    m = np.min(rho)
    value = m - np.log(np.sum(np.exp(-k * (rho - m)))) / k
    return float(value), _softmax(-k * rho)


def smooth_max(values: np.ndarray, k: float) -> Tuple[float, np.ndarray]:
    """Media ponderada softmax (cota inferior del máximo) y sus derivadas."""
    rho = np.asarray(values, dtype=float)
    w = _softmax(k * rho)
    value = float(w @ rho)
    return value, w * (1.0 + k * (rho - value))


def smooth_max_upper(values: np.ndarray, k: float) -> Tuple[float, np.ndarray]:
    rho = np.asarray(values, dtype=float)
    m = np.max(rho)
    value = m + np.log(np.sum(np.exp(k * (rho - m)))) / k
    return float(value), _softmax(k * rho)


def smooth_min_upper(values: np.ndarray, k: float) -> Tuple[float, np.ndarray]:
    rho = np.asarray(values, dtype=float)
    w = _softmax(-k * rho)
    value = float(w @ rho)
    return value, w * (1.0 - k * (rho - value))


class _Smooth:
    def __init__(self, s: Signal, k1: float, k2: float):
        self.s = s
        self.k1 = k1
        self.k2 = k2
        self.shape_y = s.samples.shape
        self.shape_a = s.anchors.shape
        self.cache: Dict[Tuple[int, int, bool], Tuple[float, Grad]] = {}

    def zero(self) -> Grad:
        return np.zeros(self.shape_y), np.zeros(self.shape_a)

    def combine(self, parts: List[Tuple[float, Grad]], weights: np.ndarray) -> Grad:
        gy, ga = self.zero()
        for (_, (py, pa)), w in zip(parts, weights):
            if w != 0.0:
                gy += w * py
                ga += w * pa
        return gy, ga

    def minimum(self, parts: List[Tuple[float, Grad]], positive: bool) -> Tuple[float, Grad]:
        values = np.array([v for v, _ in parts])
        op = smooth_min if positive else smooth_min_upper
        value, weights = op(values, self.k1)
        return value, self.combine(parts, weights)

    def maximum(self, parts: List[Tuple[float, Grad]], positive: bool) -> Tuple[float, Grad]:
        values = np.array([v for v, _ in parts])
        op = smooth_max if positive else smooth_max_upper
        value, weights = op(values, self.k2)
        return value, self.combine(parts, weights)

    def eval(self, f: StlFormula, t: int, positive: bool) -> Tuple[float, Grad]:
        key = (id(f), t, positive)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        kind = f.kind
        if kind is NodeKind.PRED:
            y, anchor = self.s.samples[t], self.s.anchors[t]
            gy, ga = self.zero()
            py, pa = f.predicate.grad(y, anchor)
            gy[t] = py
            ga[t] = pa
            out = (f.predicate.eval(y, anchor), (gy, ga))
        elif kind is NodeKind.NOT:
            v, (gy, ga) = self.eval(f.children[0], t, not positive)
            out = (-v, (-gy, -ga))
        elif kind is NodeKind.AND:
            out = self.minimum([self.eval(c, t, positive) for c in f.children], positive)
        elif kind is NodeKind.OR:
            out = self.maximum([self.eval(c, t, positive) for c in f.children], positive)
        elif kind is NodeKind.EVENTUALLY:
            out = self.maximum(self.window(f, t, positive), positive)
        elif kind is NodeKind.ALWAYS:
            out = self.minimum(self.window(f, t, positive), positive)
        else:
            out = self.until(f, t, positive)
        self.cache[key] = out
        return out

    def window(self, f: StlFormula, t: int, positive: bool) -> List[Tuple[float, Grad]]:
        a, b = f.interval
        return [self.eval(f.children[0], k, positive) for k in range(t + a, t + b + 1)]

    def until(self, f: StlFormula, t: int, positive: bool) -> Tuple[float, Grad]:
        a, b = f.interval
        lhs, rhs = f.children
        lhs_parts = [self.eval(lhs, k, positive) for k in range(t, t + b + 1)]
        terms = []
        for k in range(t + a, t + b + 1):
            prefix = self.minimum(lhs_parts[: k - t + 1], positive) if k > t else lhs_parts[0]
            terms.append(self.minimum([self.eval(rhs, k, positive), prefix], positive))
        return self.maximum(terms, positive)


def eval_smooth_robustness(
    f: StlFormula, s: Signal, t: int = 0, k1: float = 10.0, k2: float = 10.0
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Devuelve (ρ̃, ∂ρ̃/∂samples, ∂ρ̃/∂anchors).

    Los gradientes tienen la forma de `s.samples` y `s.anchors`.
    """
    if k1 <= 0.0 or k2 <= 0.0:
        raise ValueError("k1 y k2 deben ser positivos")
    check_window(f, len(s), t)
    value, (gy, ga) = _Smooth(s, k1, k2).eval(f, t, True)
    return value, gy, ga
