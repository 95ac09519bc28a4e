# src/core/dynamics.py
"""
Modelo híbrido del péndulo invertido lineal aumentado (LIPM + pie en vuelo).

Estado en el marco del pie de apoyo, vector de 9 componentes:
    [p_com(3), v_com(3), p_swing(3)]
Control: velocidad del pie en vuelo (3). La altura del CoM es constante y el
par sobre el CoM se asume nulo.
"""
import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config.settings import GaitSettings, ModelParams

STATE_DIM = 9
CONTROL_DIM = 3
SIGNAL_DIM = STATE_DIM + CONTROL_DIM

# Par sobre el CoM: fijado a cero, no es un control
TAU_COM = 0.0

GUARD_TOLERANCE = 1e-6


class DynamicsError(Exception):
    pass


class GuardViolationError(DynamicsError):
    """Se intentó un cambio de contacto con el pie en vuelo fuera del suelo."""


class StanceParity(str, Enum):
    LEFT = "LeftStance"
    RIGHT = "RightStance"

    def flipped(self) -> "StanceParity":
        return StanceParity.RIGHT if self is StanceParity.LEFT else StanceParity.LEFT

    @property
    def side(self) -> float:
        """Signo lateral del CoM respecto al pie de apoyo (apoyo izquierdo → CoM a la derecha)."""
        return -1.0 if self is StanceParity.LEFT else 1.0


@dataclass(frozen=True)
class AugmentedState:
    p_com: np.ndarray
    v_com: np.ndarray
    p_swing: np.ndarray

    def __post_init__(self):
        for name in ("p_com", "v_com", "p_swing"):
            value = np.array(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(value)):
                raise DynamicsError(f"{name} contiene valores no finitos")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p_com, self.v_com, self.p_swing])

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> "AugmentedState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:9])

    def replace(self, **changes) -> "AugmentedState":
        data = {"p_com": self.p_com, "v_com": self.v_com, "p_swing": self.p_swing}
        data.update(changes)
        return AugmentedState(**data)


def flow_analytic(
    p0: Union[float, np.ndarray], v0: Union[float, np.ndarray], t: float, omega: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Solución cerrada del LIPM, eje a eje."""
    if t < 0.0:
        raise ValueError("t debe ser no negativo")
    c, s = np.cosh(omega * t), np.sinh(omega * t)
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    return p0 * c + v0 / omega * s, omega * p0 * s + v0 * c


def flow_state(x: AugmentedState, t: float, params: ModelParams, u: Optional[np.ndarray] = None) -> AugmentedState:
    """Avanza el estado con el flujo exacto del CoM y el pie en vuelo a velocidad constante."""
    p, v = flow_analytic(x.p_com[:2], x.v_com[:2], t, params.omega)
    swing = x.p_swing if u is None else x.p_swing + np.asarray(u, dtype=float) * t
    return AugmentedState(
        np.array([p[0], p[1], x.p_com[2]]), np.array([v[0], v[1], x.v_com[2]]), swing
    )


def step_vector(x: np.ndarray, u: np.ndarray, dt: float, omega: float) -> np.ndarray:
    """Taylor de segundo orden para el CoM horizontal, Euler para el pie en vuelo."""
    w2 = omega * omega
    out = np.array(x, dtype=float)
    p, v = x[0:2], x[3:5]
    out[0:2] = p + v * dt + 0.5 * w2 * p * dt * dt
    out[3:5] = v + w2 * p * dt + 0.5 * w2 * v * dt * dt
    out[6:9] = x[6:9] + np.asarray(u, dtype=float) * dt
    return out


def step_discrete(x: AugmentedState, u: Sequence[float], dt: float, params: ModelParams) -> AugmentedState:
    if dt < 0.0:
        raise ValueError("dt debe ser no negativo")
    return AugmentedState.from_vector(step_vector(x.to_vector(), np.asarray(u, dtype=float), dt, params.omega))


def discrete_jacobians(x: np.ndarray, u: np.ndarray, dt: float, omega: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(∂f/∂x 9×9, ∂f/∂u 9×3, ∂f/∂dt 9) de `step_vector`."""
    w2 = omega * omega
    A = np.eye(STATE_DIM)
    B = np.zeros((STATE_DIM, CONTROL_DIM))
    d = np.zeros(STATE_DIM)
    diag = 1.0 + 0.5 * w2 * dt * dt
    for axis in (0, 1):
        p_i, v_i = axis, 3 + axis
        A[p_i, p_i] = diag
        A[p_i, v_i] = dt
        A[v_i, p_i] = w2 * dt
        A[v_i, v_i] = diag
        p, v = x[p_i], x[v_i]
        d[p_i] = v + w2 * p * dt
        d[v_i] = w2 * p + w2 * v * dt
    B[6:9, :] = dt * np.eye(3)
    d[6:9] = u
    return A, B, d


# Mapa de reinicio lineal: x⁺ = R x. Sólo se re-anclan x e y; las alturas son
# absolutas, así que p_com.z se conserva y el nuevo pie en vuelo sigue en el terreno.
_HORIZONTAL = np.diag([1.0, 1.0, 0.0])
RESET_MATRIX = np.block(
    [
        [np.eye(3), np.zeros((3, 3)), -_HORIZONTAL],
        [np.zeros((3, 3)), np.eye(3), np.zeros((3, 3))],
        [np.zeros((3, 3)), np.zeros((3, 3)), np.diag([-1.0, -1.0, 1.0])],
    ]
)


def reset_map(
    x_minus: AugmentedState,
    parity: StanceParity,
    params: Optional[ModelParams] = None,
    tolerance: float = GUARD_TOLERANCE,
) -> Tuple[AugmentedState, StanceParity]:
    """Re-ancla el marco al nuevo pie de apoyo y alterna la paridad."""
    terrain = 0.0 if params is None else params.terrain_height
    gap = x_minus.p_swing[2] - terrain
    if abs(gap) > tolerance:
        raise GuardViolationError(f"pie en vuelo a {gap:+.4f} m del terreno en el cambio de contacto")
    x_plus = AugmentedState.from_vector(RESET_MATRIX @ x_minus.to_vector())
    return x_plus, parity.flipped()


def detect_keyframe(traj: Sequence[Union[AugmentedState, np.ndarray]]) -> Optional[int]:
    """Primer índice donde p_com.x pasa de negativo a no negativo; None si no hay ápice."""
    px = _px(traj)
    for i in range(1, len(px)):
        if px[i - 1] < 0.0 <= px[i]:
            return i
    return None


def interpolate_keyframe(traj: Sequence[Union[AugmentedState, np.ndarray]], index: int) -> np.ndarray:
    """Estado interpolado linealmente en p_com.x = 0 entre index-1 e index."""
    rows = np.array([_vector(x) for x in traj])
    x0, x1 = rows[index - 1], rows[index]
    span = x1[0] - x0[0]
    alpha = 1.0 if span == 0.0 else -x0[0] / span
    return x0 + alpha * (x1 - x0)


def _vector(x: Union[AugmentedState, np.ndarray]) -> np.ndarray:
    return x.to_vector() if isinstance(x, AugmentedState) else np.asarray(x, dtype=float)


def _px(traj: Iterable[Union[AugmentedState, np.ndarray]]) -> List[float]:
    return [float(_vector(x)[0]) for x in traj]


def nominal_contact_state(params: ModelParams, gait: GaitSettings, parity: StanceParity) -> Tuple[np.ndarray, np.ndarray]:
    """Estado del CoM (p, v) por eje al inicio del paso nominal (medio paso antes del ápice)."""
    w = params.omega
    half = 0.5 * gait.step_duration
    s = parity.side * gait.lateral_apex_offset
    p = np.array([-(gait.apex_velocity / w) * np.sinh(w * half), s * np.cosh(w * half)])
    v = np.array([gait.apex_velocity * np.cosh(w * half), -s * w * np.sinh(w * half)])
    return p, v


def nominal_foothold(params: ModelParams, gait: GaitSettings, parity: StanceParity) -> np.ndarray:
    """Posición de aterrizaje periódica del pie en vuelo en el marco de apoyo."""
    w = params.omega
    half = 0.5 * gait.step_duration
    s = parity.side * gait.lateral_apex_offset
    return np.array([2.0 * (gait.apex_velocity / w) * np.sinh(w * half), 2.0 * s * np.cosh(w * half), params.terrain_height])


def nominal_step(params: ModelParams, gait: GaitSettings, parity: StanceParity, n: int) -> np.ndarray:
    """n estados (n×9) equiespaciados a lo largo de un paso nominal completo."""
    p0, v0 = nominal_contact_state(params, gait, parity)
    target = nominal_foothold(params, gait, parity)
    start = -nominal_foothold(params, gait, parity.flipped())
    start[2] = params.terrain_height
    rows = []
    for i, t in enumerate(np.linspace(0.0, gait.step_duration, n)):
        p, v = flow_analytic(p0, v0, t, params.omega)
        phase = i / (n - 1)
        swing = start + phase * (target - start)
        swing[2] = params.terrain_height + gait.swing_height * np.sin(np.pi * phase)
        rows.append(np.concatenate([[p[0], p[1], params.z0], [v[0], v[1], 0.0], swing]))
    return np.array(rows)


TRAJECTORY_COLUMNS = (
    ["knot", "time"]
    + [f"p_com_{a}" for a in "xyz"]
    + [f"v_com_{a}" for a in "xyz"]
    + [f"p_swing_{a}" for a in "xyz"]
    + [f"u_{a}" for a in "xyz"]
    + ["parity"]
)


def write_trajectory_csv(
    path: Union[str, Path],
    times: Sequence[float],
    states: np.ndarray,
    controls: np.ndarray,
    parities: Sequence[StanceParity],
) -> None:
    """Columnas fijas: knot, time, 12 canales de señal, parity."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRAJECTORY_COLUMNS)
        for k, (t, x, u, parity) in enumerate(zip(times, states, controls, parities)):
            writer.writerow([k, f"{t:.6f}"] + [f"{value:.9f}" for value in np.concatenate([x, u])] + [parity.value])


def read_trajectory_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[StanceParity]]:
    times, states, controls, parities = [], [], [], []
    with open(path, "r", newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            times.append(float(row["time"]))
            values = [float(row[c]) for c in TRAJECTORY_COLUMNS[2:14]]
            states.append(values[:STATE_DIM])
            controls.append(values[STATE_DIM:])
            parities.append(StanceParity(row["parity"]))
    return np.array(times), np.array(states), np.array(controls), parities
