# src/services/spec_builder.py
"""
Construcción de las especificaciones de locomoción como fórmulas STL sobre la
señal de la MPC y = [p_com(3), v_com(3), p_swing(3), u(3)].
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from ..config.settings import ExperimentConfig, StoneSettings
from ..core.dynamics import SIGNAL_DIM, StanceParity
from ..core.riemannian import BOUND_NAMES, RiemannianRegion, bound_distance_jacobian
from ..core.stl_formula import (
    Predicate,
    StlFormula,
    always,
    conj,
    disj,
    eventually,
    format_formula,
    linear_predicate,
    pred,
)

logger = logging.getLogger(__name__)

# Canales de la señal
P_COM = slice(0, 3)
V_COM = slice(3, 6)
P_SWING = slice(6, 9)
U = slice(9, 12)
PX, PY, VX, VY, SWX, SWY = 0, 1, 3, 4, 6, 7


class SpecBuildError(Exception):
    pass


@dataclass(frozen=True)
class StoneRect:
    center: Tuple[float, float]
    yaw: float
    half_extents: Tuple[float, float]

    def __post_init__(self):
        if min(self.half_extents) <= 0.0:
            raise SpecBuildError("half_extents deben ser positivos")

    @classmethod
    def from_settings(cls, stone: StoneSettings) -> "StoneRect":
        return cls(tuple(stone.center), float(stone.yaw), tuple(stone.half_extents))

    def edge_distances(self, foothold: np.ndarray) -> np.ndarray:
        """Distancias con signo a los 4 bordes (positivas dentro)."""
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        d = np.asarray(foothold, dtype=float)[:2] - np.asarray(self.center)
        lx, ly = c * d[0] + s * d[1], -s * d[0] + c * d[1]
        hx, hy = self.half_extents
        return np.array([hx - lx, hx + lx, hy - ly, hy + ly])

    def contains(self, foothold: np.ndarray) -> bool:
        return bool(np.min(self.edge_distances(foothold)) >= 0.0)


@dataclass(frozen=True)
class SpecConfig:
    horizon_knots: int
    steps: int
    knots_per_step: int
    e_left: float
    e_right: float
    region: RiemannianRegion
    parity_schedule: Tuple[StanceParity, ...]
    keyframe_tolerance: float = 0.1
    stones: Tuple[StoneRect, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.knots_per_step * (self.steps + 1) != self.horizon_knots:
            raise SpecBuildError("knots_per_step × (N+1) debe ser igual a M")
        if not self.e_left > self.e_right:
            raise SpecBuildError("e_left debe ser mayor que e_right")
        if len(self.parity_schedule) != self.steps + 1:
            raise SpecBuildError("la secuencia de paridades debe tener N+1 entradas")

    @classmethod
    def from_settings(cls, cfg: ExperimentConfig, parity: StanceParity) -> "SpecConfig":
        spec = cfg.spec
        region = RiemannianRegion.from_settings(cfg.model, cfg.gait, cfg.region)
        schedule = [parity]
        for _ in range(spec.steps):
            schedule.append(schedule[-1].flipped())
        return cls(
            horizon_knots=spec.knots_per_step * (spec.steps + 1),
            steps=spec.steps,
            knots_per_step=spec.knots_per_step,
            e_left=spec.e_left,
            e_right=spec.e_right,
            region=region,
            parity_schedule=tuple(schedule),
            keyframe_tolerance=spec.keyframe_tolerance,
            stones=tuple(StoneRect.from_settings(s) for s in spec.stones),
        )

    def with_parity(self, parity: StanceParity) -> "SpecConfig":
        schedule = [parity]
        for _ in range(self.steps):
            schedule.append(schedule[-1].flipped())
        return SpecConfig(
            self.horizon_knots,
            self.steps,
            self.knots_per_step,
            self.e_left,
            self.e_right,
            self.region,
            tuple(schedule),
            self.keyframe_tolerance,
            self.stones,
        )

    def step_of(self, knot: int) -> int:
        return knot // self.knots_per_step

    def step_window(self, step: int) -> Tuple[int, int]:
        start = step * self.knots_per_step
        return start, start + self.knots_per_step - 1

    @property
    def contact_knots(self) -> List[int]:
        """Último nudo (pre-contacto) de cada paso."""
        return [self.step_window(j)[1] for j in range(self.steps + 1)]


def _unit(index: int) -> np.ndarray:
    e = np.zeros(SIGNAL_DIM)
    e[index] = 1.0
    return e


def keyframe_predicates(tolerance: float = 0.0) -> Tuple[Predicate, Predicate]:
    """(p_x ≤ tol) y (p_x ≥ −tol) como predicados μ − c ≥ 0; con tolerancia se llaman kf_band_*."""
    e = _unit(PX)
    tag = "kf" if tolerance == 0.0 else "kf_band"
    return linear_predicate(f"{tag}_le", -e, -tolerance), linear_predicate(f"{tag}_ge", e, -tolerance)


def build_phi_keyframe(cfg: SpecConfig, tolerance: float = 0.0) -> StlFormula:
    """Ápice sagital como igualdad p_com.x = 0 (dos desigualdades opuestas)."""
    le, ge = keyframe_predicates(tolerance)
    return conj(pred(le), pred(ge))


def riem_predicates(region: RiemannianRegion, parity: StanceParity) -> List[Predicate]:
    predicates = []
    for index, name in enumerate(BOUND_NAMES):

        def fn(y: np.ndarray, anchor: np.ndarray, index=index) -> float:
            r, _ = bound_distance_jacobian(y[[PX, PY, VX, VY]], region, parity)
            return float(r[index])

        def grad_fn(y: np.ndarray, anchor: np.ndarray, index=index) -> Tuple[np.ndarray, np.ndarray]:
            _, J = bound_distance_jacobian(y[[PX, PY, VX, VY]], region, parity)
            gy = np.zeros(SIGNAL_DIM)
            gy[[PX, PY, VX, VY]] = J[index]
            return gy, np.zeros(2)

        predicates.append(Predicate(f"riem_{name}_{parity.name.lower()}", fn, grad_fn))
    return predicates


def build_phi_riem(cfg: SpecConfig, parity: StanceParity) -> StlFormula:
    """Conjunción de las 8 distancias a las cotas de la región riemanniana."""
    return conj(*(pred(p) for p in riem_predicates(cfg.region, parity)))


def build_phi_stable(cfg: SpecConfig) -> StlFormula:
    """◊ sobre el último paso de (ápice dentro de la tolerancia ∧ región riemanniana)."""
    start, end = cfg.step_window(cfg.steps)
    parity = cfg.parity_schedule[cfg.steps]
    le, ge = keyframe_predicates(cfg.keyframe_tolerance)
    riem = riem_predicates(cfg.region, parity)
    return eventually(start, end, conj(pred(le), pred(ge), *(pred(p) for p in riem)))


def foot_predicates(cfg: SpecConfig) -> Tuple[Predicate, Predicate]:
    """Bordes de la cinta en coordenada mundial: ancla_y + p_swing_y."""
    e = _unit(SWY)
    a = np.array([0.0, 1.0])
    return (
        linear_predicate("foot_left", -e, -cfg.e_left, anchor_coeffs=-a),
        linear_predicate("foot_right", e, cfg.e_right, anchor_coeffs=a),
    )


def build_phi_foot(cfg: SpecConfig) -> StlFormula:
    left, right = foot_predicates(cfg)
    return conj(pred(left), pred(right))


def build_phi_loco(cfg: SpecConfig) -> StlFormula:
    """φ_stable ∧ □ φ_foot sobre todos los nudos."""
    return conj(build_phi_stable(cfg), always(0, cfg.horizon_knots - 1, build_phi_foot(cfg)))


def stone_predicates(stone: StoneRect, index: int) -> List[Predicate]:
    """Cuatro distancias a bordes del apoyo previsto (ancla + p_swing) en el marco mundial."""
    c, s = np.cos(stone.yaw), np.sin(stone.yaw)
    cx, cy = stone.center
    hx, hy = stone.half_extents
    # l = R(−yaw)·(anchor + p_swing − center)
    rows = [np.array([c, s]), np.array([-s, c])]
    offsets = [c * cx + s * cy, -s * cx + c * cy]
    predicates = []
    for axis, (row, off, half) in enumerate(zip(rows, offsets, (hx, hy))):
        for sign, tag in ((-1.0, "hi"), (1.0, "lo")):
            coeffs = np.zeros(SIGNAL_DIM)
            coeffs[SWX], coeffs[SWY] = sign * row
            # half ∓ l  →  sign·(row·(a + p)) − sign·off + half
            predicates.append(
                linear_predicate(f"stone{index}_{'xy'[axis]}_{tag}", coeffs, sign * off - half, anchor_coeffs=sign * row)
            )
    return predicates


def build_phi_stones(cfg: SpecConfig) -> StlFormula:
    """∧ sobre los nudos de contacto futuros de ∨ sobre piedras de la conjunción de bordes."""
    if not cfg.stones:
        raise SpecBuildError("se requiere al menos una piedra")
    stones = [conj(*(pred(p) for p in stone_predicates(stone, i))) for i, stone in enumerate(cfg.stones)]
    on_stone = stones[0] if len(stones) == 1 else disj(*stones)
    pinned = [always(k, k, on_stone) for k in cfg.contact_knots]
    return pinned[0] if len(pinned) == 1 else conj(*pinned)


def build_phi_loco_stones(cfg: SpecConfig) -> StlFormula:
    return conj(build_phi_loco(cfg), build_phi_stones(cfg))


def build_step_audit_formula(cfg: SpecConfig, parity: StanceParity, samples: int) -> StlFormula:
    """Comprobación de un paso realizado remuestreado en `samples` puntos."""
    le, ge = keyframe_predicates(cfg.keyframe_tolerance)
    riem = riem_predicates(cfg.region, parity)
    stable = eventually(0, samples - 1, conj(pred(le), pred(ge), *(pred(p) for p in riem)))
    return conj(stable, always(0, samples - 1, build_phi_foot(cfg)))


def build_registry(cfg: SpecConfig) -> Dict[str, Predicate]:
    """Predicados con nombre disponibles para `parse-stl`."""
    registry: Dict[str, Predicate] = {}
    for p in keyframe_predicates(0.0) + keyframe_predicates(cfg.keyframe_tolerance) + foot_predicates(cfg):
        registry[p.name] = p
    for parity in StanceParity:
        for p in riem_predicates(cfg.region, parity):
            registry[p.name] = p
    for i, stone in enumerate(cfg.stones):
        for p in stone_predicates(stone, i):
            registry[p.name] = p
    return registry


def dump_specs(cfg: SpecConfig) -> Dict[str, str]:
    """Texto de las fórmulas generadas, en la gramática del parser."""
    specs = {
        "phi_keyframe": format_formula(build_phi_keyframe(cfg)),
        "phi_stable": format_formula(build_phi_stable(cfg)),
        "phi_loco": format_formula(build_phi_loco(cfg)),
    }
    if cfg.stones:
        specs["phi_stones"] = format_formula(build_phi_stones(cfg))
    return specs
