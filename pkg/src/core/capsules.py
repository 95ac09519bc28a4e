# src/core/capsules.py
"""
Geometría de cápsulas de las piernas y distancia analítica entre cápsulas.

Modelo paramétrico: cadera a ±hip_half_width del CoM, muslo y pierna inferior
resueltos con cinemática inversa plana de dos eslabones (rodilla hacia delante).
La pierna inferior se divide en espinilla y tarso; la barra de Aquiles corre
paralela por detrás.
"""
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..config.settings import LegGeometrySettings
from .dynamics import StanceParity

PAIR_NAMES = ("LSRS", "LSRT", "LSRA", "LTRS", "LTRT", "LARS")
# Índices (capsula izquierda, capsula derecha) sobre el orden shin, tarsus, achilles
_PAIR_LINKS = ((0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0))
# Reflejar y ↔ −y intercambia piernas: LSRT ↔ LTRS, LSRA ↔ LARS
MIRROR_PERMUTATION = (0, 3, 5, 1, 4, 2)


@dataclass(frozen=True)
class Capsule:
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float

    def __post_init__(self):
        a = np.asarray(self.endpoint_a, dtype=float).reshape(3)
        b = np.asarray(self.endpoint_b, dtype=float).reshape(3)
        if self.radius <= 0.0:
            raise ValueError("el radio debe ser positivo")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("extremos no finitos")
        object.__setattr__(self, "endpoint_a", a)
        object.__setattr__(self, "endpoint_b", b)


def _project_point_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        return a
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return a + t * ab


def closest_points_between_segments(
    p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray, eps: float = 1e-12
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Puntos más cercanos entre [p0,p1] y [q0,q1] y su distancia."""
    u, v, w0 = p1 - p0, q1 - q0, p0 - q0
    a, b, c = float(u @ u), float(u @ v), float(v @ v)
    d, e = float(u @ w0), float(v @ w0)
    D = a * c - b * b

    candidates = []
    # Mínimo interior (solo si las rectas no son paralelas)
    if D > eps:
        s = (b * e - c * d) / D
        t = (a * e - b * d) / D
        if 0.0 <= s <= 1.0 and 0.0 <= t <= 1.0:
            candidates.append((p0 + s * u, q0 + t * v))
    # Bordes del cuadrado (s, t) ∈ [0,1]²
    candidates.append((_project_point_to_segment(q0, p0, p1), q0))
    candidates.append((_project_point_to_segment(q1, p0, p1), q1))
    candidates.append((p0, _project_point_to_segment(p0, q0, q1)))
    candidates.append((p1, _project_point_to_segment(p1, q0, q1)))

    best = min(candidates, key=lambda pq: float(np.sum((pq[0] - pq[1]) ** 2)))
    return best[0], best[1], float(np.linalg.norm(best[0] - best[1]))


def capsule_distance(a: Capsule, b: Capsule) -> float:
    """Distancia entre segmentos menos la suma de radios (negativa si hay penetración)."""
    _, _, dist = closest_points_between_segments(a.endpoint_a, a.endpoint_b, b.endpoint_a, b.endpoint_b)
    return dist - a.radius - b.radius


def sampled_capsule_distance(a: Capsule, b: Capsule, n: int = 2000) -> float:
    """Oráculo por muestreo denso: n puntos por segmento, en bloques para acotar memoria."""
    s = np.linspace(0.0, 1.0, n)[:, None]
    pa = a.endpoint_a + s * (a.endpoint_b - a.endpoint_a)
    pb = b.endpoint_a + s * (b.endpoint_b - b.endpoint_a)
    best = np.inf
    for start in range(0, n, 200):
        block = pa[start : start + 200]
        d2 = np.sum((block[:, None, :] - pb[None, :, :]) ** 2, axis=-1)
        best = min(best, float(np.min(d2)))
    return float(np.sqrt(best)) - a.radius - b.radius


class LegGeometryModel:
    """Mapa determinista y continuo (p_com, p_swing, paridad) → 6 cápsulas."""

    def __init__(self, settings: LegGeometrySettings, z0: float):
        self.settings = settings
        self.z0 = z0

    def _knee(self, hip: np.ndarray, foot: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = self.settings
        l1, l2 = g.thigh_length, g.lower_leg_length
        d = foot - hip
        length = float(np.linalg.norm(d))
        u = d / length if length > 1e-9 else np.array([0.0, 0.0, -1.0])
        length = min(max(length, abs(l1 - l2) + 1e-6), l1 + l2 - 1e-6)
        # La rodilla se dobla hacia +x, proyectado ortogonal al eje cadera-pie
        n = np.array([1.0, 0.0, 0.0]) - u[0] * u
        norm = float(np.linalg.norm(n))
        n = n / norm if norm > 1e-9 else np.array([0.0, 0.0, 1.0])
        a = (l1 * l1 - l2 * l2 + length * length) / (2.0 * length)
        h = np.sqrt(max(l1 * l1 - a * a, 0.0))
        return hip + a * u + h * n, n

    def leg(self, hip: np.ndarray, foot: np.ndarray) -> Tuple[Capsule, Capsule, Capsule]:
        """(espinilla, tarso, Aquiles) de una pierna."""
        g = self.settings
        knee, bend = self._knee(hip, foot)
        ankle = knee + g.shin_fraction * (foot - knee)
        rod_top = knee + g.achilles_start * (hip - knee) - g.achilles_offset * bend
        rod_bottom = ankle - g.achilles_offset * bend
        return (
            Capsule(knee, ankle, g.shin_radius),
            Capsule(ankle, foot, g.tarsus_radius),
            Capsule(rod_top, rod_bottom, g.achilles_radius),
        )

    def capsules(
        self, p_com: np.ndarray, p_swing: np.ndarray, parity: StanceParity
    ) -> Dict[str, Tuple[Capsule, Capsule, Capsule]]:
        """Cápsulas por pierna ('left', 'right') en el marco del pie de apoyo."""
        w = self.settings.hip_half_width
        com = np.array([p_com[0], p_com[1], self.z0 if len(p_com) < 3 else p_com[2]], dtype=float)
        left_hip = com + np.array([0.0, w, 0.0])
        right_hip = com - np.array([0.0, w, 0.0])
        stance_foot = np.zeros(3)
        swing_foot = np.asarray(p_swing, dtype=float)
        if parity is StanceParity.LEFT:
            return {"left": self.leg(left_hip, stance_foot), "right": self.leg(right_hip, swing_foot)}
        return {"left": self.leg(left_hip, swing_foot), "right": self.leg(right_hip, stance_foot)}

    def pair_distances(self, p_com: np.ndarray, p_swing: np.ndarray, parity: StanceParity) -> np.ndarray:
        """Distancias del oráculo en el orden LSRS, LSRT, LSRA, LTRS, LTRT, LARS."""
        legs = self.capsules(p_com, p_swing, parity)
        return np.array([capsule_distance(legs["left"][i], legs["right"][j]) for i, j in _PAIR_LINKS])

    def min_distance(self, p_com: np.ndarray, p_swing: np.ndarray, parity: StanceParity) -> float:
        return float(np.min(self.pair_distances(p_com, p_swing, parity)))

    def sampled_pair_distances(self, p_com: np.ndarray, p_swing: np.ndarray, parity: StanceParity, n: int = 2000) -> np.ndarray:
        """Las mismas seis distancias con el oráculo de muestreo denso."""
        legs = self.capsules(p_com, p_swing, parity)
        return np.array([sampled_capsule_distance(legs["left"][i], legs["right"][j], n) for i, j in _PAIR_LINKS])


def mirror_features(features: np.ndarray) -> np.ndarray:
    """Refleja y ↔ −y en (p_com.x, p_com.y, p_swing.x, p_swing.y, p_swing.z)."""
    out = np.array(features, dtype=float)
    out[..., 1] *= -1.0
    out[..., 3] *= -1.0
    return out


def collision_landscape(
    model: LegGeometryModel,
    p_com: np.ndarray,
    x_range: Tuple[float, float] = (-0.5, 0.5),
    y_range: Tuple[float, float] = (-0.6, 0.2),
    resolution: Tuple[int, int] = (51, 41),
    swing_height: float = 0.0,
    parity: StanceParity = StanceParity.LEFT,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rejilla de distancia mínima del oráculo sobre el barrido del pie en vuelo (1 × 0.8 m²)."""
    xs = np.linspace(x_range[0], x_range[1], resolution[0])
    ys = np.linspace(y_range[0], y_range[1], resolution[1])
    grid = np.empty((len(ys), len(xs)))
    for i, y in enumerate(ys):
        for j, x in enumerate(xs):
            grid[i, j] = model.min_distance(p_com, np.array([x, y, swing_height]), parity)
    return xs, ys, grid


def _batch_project(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = np.sum(ab * ab, axis=1)
    safe = np.where(denom < 1e-12, 1.0, denom)
    t = np.clip(np.sum((p - a) * ab, axis=1) / safe, 0.0, 1.0)
    t = np.where(denom < 1e-12, 0.0, t)
    return a + t[:, None] * ab


def batch_segment_distance(
    p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray, eps: float = 1e-12
) -> np.ndarray:
    """Versión vectorizada de `closest_points_between_segments` (solo distancias)."""
    u, v, w0 = p1 - p0, q1 - q0, p0 - q0
    a = np.sum(u * u, axis=1)
    b = np.sum(u * v, axis=1)
    c = np.sum(v * v, axis=1)
    d = np.sum(u * w0, axis=1)
    e = np.sum(v * w0, axis=1)
    D = a * c - b * b
    safe = np.where(D > eps, D, 1.0)
    s = (b * e - c * d) / safe
    t = (a * e - b * d) / safe
    interior = (D > eps) & (s >= 0.0) & (s <= 1.0) & (t >= 0.0) & (t <= 1.0)
    gap = (p0 + s[:, None] * u) - (q0 + t[:, None] * v)
    best = np.where(interior, np.sum(gap * gap, axis=1), np.inf)
    for pp, qq in (
        (_batch_project(q0, p0, p1), q0),
        (_batch_project(q1, p0, p1), q1),
        (p0, _batch_project(p0, q0, q1)),
        (p1, _batch_project(p1, q0, q1)),
    ):
        best = np.minimum(best, np.sum((pp - qq) ** 2, axis=1))
    return np.sqrt(best)


def _batch_leg(settings: LegGeometrySettings, hip: np.ndarray, foot: np.ndarray):
    l1, l2 = settings.thigh_length, settings.lower_leg_length
    d = foot - hip
    length = np.linalg.norm(d, axis=1)
    u = np.where(length[:, None] > 1e-9, d / np.maximum(length, 1e-9)[:, None], np.array([0.0, 0.0, -1.0]))
    length = np.clip(length, abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6)
    n = np.array([1.0, 0.0, 0.0]) - u[:, :1] * u
    norm = np.linalg.norm(n, axis=1)
    n = np.where(norm[:, None] > 1e-9, n / np.maximum(norm, 1e-9)[:, None], np.array([0.0, 0.0, 1.0]))
    a = (l1 * l1 - l2 * l2 + length * length) / (2.0 * length)
    h = np.sqrt(np.maximum(l1 * l1 - a * a, 0.0))
    knee = hip + a[:, None] * u + h[:, None] * n
    ankle = knee + settings.shin_fraction * (foot - knee)
    rod_top = knee + settings.achilles_start * (hip - knee) - settings.achilles_offset * n
    rod_bottom = ankle - settings.achilles_offset * n
    radii = (settings.shin_radius, settings.tarsus_radius, settings.achilles_radius)
    return ((knee, ankle), (ankle, foot), (rod_top, rod_bottom)), radii


def batch_pair_distances(model: LegGeometryModel, features: np.ndarray) -> np.ndarray:
    """Distancias del oráculo (B, 6) para características con apoyo izquierdo."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    count = features.shape[0]
    w = model.settings.hip_half_width
    com = np.column_stack([features[:, 0], features[:, 1], np.full(count, model.z0)])
    swing = features[:, 2:5]
    left, radii = _batch_leg(model.settings, com + np.array([0.0, w, 0.0]), np.zeros((count, 3)))
    right, _ = _batch_leg(model.settings, com - np.array([0.0, w, 0.0]), swing)
    out = np.empty((count, len(PAIR_NAMES)))
    for k, (i, j) in enumerate(_PAIR_LINKS):
        dist = batch_segment_distance(left[i][0], left[i][1], right[j][0], right[j][1])
        out[:, k] = dist - radii[i] - radii[j]
    return out
