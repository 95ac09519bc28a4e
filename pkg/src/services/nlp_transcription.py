# src/services/nlp_transcription.py
"""
Transcripción por disparo múltiple del problema de la MPC a un NLP denso.

Vector de decisión z = [X (M×9); U (M×3); T (N+1)]. Cada paso j ocupa los
nudos [K·j, K·j + K − 1] con dt_j = T^j / (K − 1); el último nudo de cada
paso es el nudo de contacto y el siguiente nudo se une a él por el mapa de
reinicio.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config.settings import ExperimentConfig, GaitSettings, ModelParams
from ..core.dynamics import (
    CONTROL_DIM,
    RESET_MATRIX,
    STATE_DIM,
    AugmentedState,
    StanceParity,
    discrete_jacobians,
    nominal_foothold,
    step_vector,
)
from ..core.smooth_robustness import eval_smooth_robustness
from ..core.stl_formula import Signal, StlFormula, conj
from .spec_builder import (
    SpecConfig,
    build_phi_loco,
    build_phi_stones,
    foot_predicates,
)
from .surrogate_service import DistanceSurrogate, UntrainedSurrogateError

logger = logging.getLogger(__name__)

# Columnas del estado usadas como características del sustituto
FEATURE_COLUMNS = (0, 1, 6, 7, 8)
COM_BOX_COLUMNS = {"p_x": 0, "p_y": 1, "v_x": 3, "v_y": 4}


class TranscriptionError(Exception):
    pass


@dataclass(frozen=True)
class MpcProblem:
    """Datos de un único problema de la MPC, pasados por valor."""

    x0: AugmentedState
    parity: StanceParity
    durations: Tuple[float, ...]
    spec: SpecConfig
    model: ModelParams
    gait: GaitSettings
    w: float = 0.01
    epsilon: float = 0.03
    t_min: float = 0.3
    t_max: float = 0.5
    u_max: Tuple[float, float, float] = (2.5, 2.5, 1.5)
    freeze_t0: bool = False
    elapsed: float = 0.0
    min_remaining: float = 0.02
    anchor: Tuple[float, float] = (0.0, 0.0)
    k1: float = 100.0
    k2: float = 100.0
    max_step_length: float = 0.6
    max_swing_height: float = 0.3
    mode: str = "full"
    stl_objective: bool = True
    collision: bool = True
    knot_boxes: Tuple[Tuple[int, Tuple[Tuple[str, Tuple[float, float]], ...]], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.w < 0.0:
            raise TranscriptionError("w debe ser no negativo")
        if not 0.0 < self.t_min <= self.t_max:
            raise TranscriptionError("se requiere 0 < T_min <= T_max")
        if self.epsilon < 0.0:
            raise TranscriptionError("ε debe ser no negativo")
        if self.parity is not self.spec.parity_schedule[0]:
            raise TranscriptionError("la paridad no coincide con la secuencia de la especificación")

    @classmethod
    def from_settings(
        cls,
        cfg: ExperimentConfig,
        x0: AugmentedState,
        parity: StanceParity,
        spec: Optional[SpecConfig] = None,
        durations: Optional[Tuple[float, ...]] = None,
        **overrides,
    ) -> "MpcProblem":
        spec = spec.with_parity(parity) if spec is not None else SpecConfig.from_settings(cfg, parity)
        m = cfg.mpc
        if durations is None:
            durations = tuple([cfg.gait.step_duration] * (spec.steps + 1))
        problem = cls(
            x0=x0,
            parity=parity,
            durations=tuple(durations),
            spec=spec,
            model=cfg.model,
            gait=cfg.gait,
            w=m.w,
            epsilon=m.epsilon,
            t_min=m.t_min,
            t_max=m.t_max,
            u_max=tuple(cfg.model.u_max),
            min_remaining=m.min_remaining,
            k1=m.k1,
            k2=m.k2,
            max_step_length=m.max_step_length,
            max_swing_height=m.max_swing_height,
        )
        return replace(problem, **overrides) if overrides else problem


@dataclass(frozen=True)
class VarLayout:
    knots: int
    steps: int

    @property
    def n_x(self) -> int:
        return self.knots * STATE_DIM

    @property
    def n_u(self) -> int:
        return self.knots * CONTROL_DIM

    @property
    def size(self) -> int:
        return self.n_x + self.n_u + self.steps + 1

    def x(self, k: int, column: Optional[int] = None) -> int:
        base = k * STATE_DIM
        return base if column is None else base + column

    def u(self, k: int) -> int:
        return self.n_x + k * CONTROL_DIM

    def t(self, j: int) -> int:
        return self.n_x + self.n_u + j

    def unpack(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        X = z[: self.n_x].reshape(self.knots, STATE_DIM)
        U = z[self.n_x : self.n_x + self.n_u].reshape(self.knots, CONTROL_DIM)
        T = z[self.n_x + self.n_u :]
        return X, U, T

    def pack(self, X: np.ndarray, U: np.ndarray, T: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(X, dtype=float).ravel(), np.asarray(U, dtype=float).ravel(), np.asarray(T, dtype=float)])


def knot_anchors(X: np.ndarray, spec: SpecConfig, anchor: Tuple[float, float]) -> np.ndarray:
    """Posición mundial (M, 2) del pie de apoyo en cada nudo, acumulando los reinicios."""
    anchors = np.zeros((spec.horizon_knots, 2))
    current = np.asarray(anchor, dtype=float).copy()
    for j in range(spec.steps + 1):
        start, end = spec.step_window(j)
        anchors[start : end + 1] = current
        current = current + X[end, 6:8]
    return anchors


class NlpInstance:
    """Objetivo, restricciones y jacobianos densos de un `MpcProblem`."""

    def __init__(self, problem: MpcProblem, surrogate: Optional[DistanceSurrogate]):
        self.problem = problem
        self.spec = problem.spec
        self.layout = VarLayout(self.spec.horizon_knots, self.spec.steps)
        self.surrogate = surrogate
        self.dt_divisor = float(self.spec.knots_per_step - 1)
        self.formula = self._objective_formula()
        self.right_stance = np.array(
            [self.spec.parity_schedule[self.spec.step_of(k)] is StanceParity.RIGHT for k in range(1, self.layout.knots)]
        )
        self._cache_key: Optional[bytes] = None
        self._cache_value: Optional[Tuple[float, np.ndarray]] = None

    def _objective_formula(self) -> Optional[StlFormula]:
        if not self.problem.stl_objective:
            return None
        formula = build_phi_loco(self.spec)
        if self.spec.stones:
            formula = conj(formula, build_phi_stones(self.spec))
        return formula

    @property
    def audit_formula(self) -> StlFormula:
        """Fórmula evaluada en las auditorías, también en los modos sin objetivo STL."""
        if self.formula is not None:
            return self.formula
        formula = build_phi_loco(self.spec)
        return conj(formula, build_phi_stones(self.spec)) if self.spec.stones else formula

    # Señal

    def signal(self, z: np.ndarray) -> Signal:
        X, U, _ = self.layout.unpack(z)
        return Signal(np.hstack([X, U]), knot_anchors(X, self.spec, self.problem.anchor))

    # Objetivo

    def smooth_robustness(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        """ρ̃(φ_loco) y su gradiente respecto a z."""
        key = z.tobytes()
        if self._cache_key == key and self._cache_value is not None:
            return self._cache_value[0], self._cache_value[1].copy()
        grad = np.zeros(self.layout.size)
        if self.formula is None:
            return 0.0, grad
        value, gy, ga = eval_smooth_robustness(self.formula, self.signal(z), 0, self.problem.k1, self.problem.k2)
        lay = self.layout
        grad[: lay.n_x] = gy[:, :STATE_DIM].ravel()
        grad[lay.n_x : lay.n_x + lay.n_u] = gy[:, STATE_DIM:].ravel()
        # El ancla del paso j depende de los apoyos planificados de los pasos anteriores
        for j in range(1, self.spec.steps + 1):
            start, end = self.spec.step_window(j)
            g_anchor = ga[start : end + 1].sum(axis=0)
            for i in range(j):
                contact = self.spec.step_window(i)[1]
                grad[lay.x(contact, 6) : lay.x(contact, 8)] += g_anchor
        self._cache_key = key
        self._cache_value = (value, grad.copy())
        return value, grad

    def objective(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        """w·Σ‖u‖² − ρ̃(φ_loco)."""
        lay = self.layout
        u = z[lay.n_x : lay.n_x + lay.n_u]
        rho, g_rho = self.smooth_robustness(z)
        grad = -g_rho
        grad[lay.n_x : lay.n_x + lay.n_u] += 2.0 * self.problem.w * u
        return float(self.problem.w * u @ u - rho), grad

    # Restricciones de igualdad: estado inicial, defectos, reinicios y guardas

    def equality(self, z: np.ndarray) -> np.ndarray:
        return self._equality(z, jacobian=False)[0]

    def equality_jac(self, z: np.ndarray) -> np.ndarray:
        return self._equality(z, jacobian=True)[1]

    def _equality(self, z: np.ndarray, jacobian: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        lay, spec = self.layout, self.spec
        X, U, T = lay.unpack(z)
        omega = self.problem.model.omega
        rows: List[np.ndarray] = [X[0] - self.problem.x0.to_vector()]
        blocks: List[np.ndarray] = []
        if jacobian:
            J = np.zeros((STATE_DIM, lay.size))
            J[:, lay.x(0) : lay.x(0) + STATE_DIM] = np.eye(STATE_DIM)
            blocks.append(J)
        for j in range(spec.steps + 1):
            start, end = spec.step_window(j)
            dt = T[j] / self.dt_divisor
            for k in range(start, end):
                rows.append(X[k + 1] - step_vector(X[k], U[k], dt, omega))
                if jacobian:
                    A, B, d = discrete_jacobians(X[k], U[k], dt, omega)
                    J = np.zeros((STATE_DIM, lay.size))
                    J[:, lay.x(k + 1) : lay.x(k + 1) + STATE_DIM] = np.eye(STATE_DIM)
                    J[:, lay.x(k) : lay.x(k) + STATE_DIM] -= A
                    J[:, lay.u(k) : lay.u(k) + CONTROL_DIM] = -B
                    J[:, lay.t(j)] = -d / self.dt_divisor
                    blocks.append(J)
            if j < spec.steps:
                rows.append(X[end + 1] - RESET_MATRIX @ X[end])
                if jacobian:
                    J = np.zeros((STATE_DIM, lay.size))
                    J[:, lay.x(end + 1) : lay.x(end + 1) + STATE_DIM] = np.eye(STATE_DIM)
                    J[:, lay.x(end) : lay.x(end) + STATE_DIM] = -RESET_MATRIX
                    blocks.append(J)
        guards = np.array([X[c, 8] - self.problem.model.terrain_height for c in spec.contact_knots])
        rows.append(guards)
        if jacobian:
            J = np.zeros((len(guards), lay.size))
            for i, c in enumerate(spec.contact_knots):
                J[i, lay.x(c, 8)] = 1.0
            blocks.append(J)
        value = np.concatenate(rows)
        return value, (np.vstack(blocks) if jacobian else None)

    # Restricciones de desigualdad: colisión y, en modos sin STL, bordes de la cinta

    def inequality(self, z: np.ndarray) -> np.ndarray:
        return self._inequality(z, jacobian=False)[0]

    def inequality_jac(self, z: np.ndarray) -> np.ndarray:
        return self._inequality(z, jacobian=True)[1]

    @property
    def n_inequality(self) -> int:
        n = 0
        if self.problem.collision:
            n += 6 * (self.layout.knots - 1)
        if not self.problem.stl_objective:
            n += 2 * self.layout.knots
        return n

    def _inequality(self, z: np.ndarray, jacobian: bool) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        lay = self.layout
        X, U, _ = lay.unpack(z)
        values: List[np.ndarray] = []
        blocks: List[np.ndarray] = []
        if self.problem.collision:
            features = X[1:, list(FEATURE_COLUMNS)]
            dist, grads = self.surrogate.eval_grad_parity(features, self.right_stance)
            values.append((dist - self.problem.epsilon).ravel())
            if jacobian:
                J = np.zeros((6 * (lay.knots - 1), lay.size))
                for i, k in enumerate(range(1, lay.knots)):
                    for col, state_col in enumerate(FEATURE_COLUMNS):
                        J[6 * i : 6 * i + 6, lay.x(k, state_col)] = grads[i, :, col]
                blocks.append(J)
        if not self.problem.stl_objective:
            anchors = knot_anchors(X, self.spec, self.problem.anchor)
            signal = np.hstack([X, U])
            predicates = foot_predicates(self.spec)
            rows = []
            J = np.zeros((2 * lay.knots, lay.size)) if jacobian else None
            for k in range(lay.knots):
                for i, p in enumerate(predicates):
                    rows.append(p.eval(signal[k], anchors[k]))
                    if jacobian:
                        gy, ga = p.grad(signal[k], anchors[k])
                        r = 2 * k + i
                        J[r, lay.x(k) : lay.x(k) + STATE_DIM] = gy[:STATE_DIM]
                        for prev in range(self.spec.step_of(k)):
                            contact = self.spec.step_window(prev)[1]
                            J[r, lay.x(contact, 6) : lay.x(contact, 8)] += ga
            values.append(np.array(rows))
            if jacobian:
                blocks.append(J)
        if not values:
            return np.zeros(0), (np.zeros((0, lay.size)) if jacobian else None)
        return np.concatenate(values), (np.vstack(blocks) if jacobian else None)

    # Cotas de las variables

    def duration_bounds(self, j: int) -> Tuple[float, float]:
        p = self.problem
        if j > 0:
            return p.t_min, p.t_max
        if p.freeze_t0:
            return p.durations[0], p.durations[0]
        low = max(p.t_min - p.elapsed, p.min_remaining)
        high = max(p.t_max - p.elapsed, p.min_remaining)
        return low, high

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        p, lay = self.problem, self.layout
        lower = np.full(lay.size, -np.inf)
        upper = np.full(lay.size, np.inf)
        terrain = p.model.terrain_height
        for k in range(1, lay.knots):
            for col in (6, 7):
                lower[lay.x(k, col)], upper[lay.x(k, col)] = -p.max_step_length, p.max_step_length
            lower[lay.x(k, 8)], upper[lay.x(k, 8)] = terrain, terrain + p.max_swing_height
        for knot, box in p.knot_boxes:
            for name, (low, high) in box:
                col = COM_BOX_COLUMNS[name]
                lower[lay.x(knot, col)], upper[lay.x(knot, col)] = low, high
        u_max = np.asarray(p.u_max, dtype=float)
        for k in range(lay.knots):
            lower[lay.u(k) : lay.u(k) + CONTROL_DIM] = -u_max
            upper[lay.u(k) : lay.u(k) + CONTROL_DIM] = u_max
        for j in range(lay.steps + 1):
            lower[lay.t(j)], upper[lay.t(j)] = self.duration_bounds(j)
        return lower, upper

    # Arranque en frío

    def cold_start(self) -> np.ndarray:
        """Despliegue desde el estado medido hacia los apoyos nominales."""
        p, spec, lay = self.problem, self.spec, self.layout
        omega = p.model.omega
        terrain = p.model.terrain_height
        X = np.zeros((lay.knots, STATE_DIM))
        U = np.zeros((lay.knots, CONTROL_DIM))
        T = np.array([np.clip(d, *self.duration_bounds(j)) for j, d in enumerate(p.durations)])
        x = p.x0.to_vector()
        u_max = np.asarray(p.u_max, dtype=float)
        for j in range(spec.steps + 1):
            start, end = spec.step_window(j)
            parity = spec.parity_schedule[j]
            target = nominal_foothold(p.model, p.gait, parity)
            origin = x[6:9].copy()
            dt = T[j] / self.dt_divisor
            n = end - start
            lift = p.gait.swing_height if origin[2] <= terrain + 1e-9 else 0.0
            X[start] = x
            for i, k in enumerate(range(start, end)):
                s = (i + 1) / n
                waypoint = origin + s * (target - origin)
                waypoint[2] = (1.0 - s) * origin[2] + s * terrain + lift * np.sin(np.pi * s)
                U[k] = np.clip((waypoint - x[6:9]) / dt, -u_max, u_max)
                x = step_vector(x, U[k], dt, omega)
                X[k + 1] = x
            # La guarda se impone en la solución; el arranque sólo la aproxima
            x = X[end].copy()
            x[8] = terrain
            X[end] = x
            if j < spec.steps:
                x = RESET_MATRIX @ x
        return lay.pack(X, U, T)


def transcribe(problem: MpcProblem, surrogate: Optional[DistanceSurrogate] = None) -> NlpInstance:
    """Construye el NLP; falla si el horizonte es degenerado o falta el sustituto."""
    spec = problem.spec
    if spec.steps < 1:
        raise TranscriptionError("el horizonte necesita al menos un paso futuro (N >= 1)")
    if spec.knots_per_step < 2:
        raise TranscriptionError("se necesitan al menos dos nudos por paso")
    if len(problem.durations) != spec.steps + 1:
        raise TranscriptionError(f"se esperaban {spec.steps + 1} duraciones, hay {len(problem.durations)}")
    if problem.collision and surrogate is None:
        raise UntrainedSurrogateError("el sustituto de colisión no está entrenado")
    for knot, _ in problem.knot_boxes:
        if not 0 <= knot < spec.horizon_knots:
            raise TranscriptionError(f"nudo de caja fuera del horizonte: {knot}")
    nlp = NlpInstance(problem, surrogate)
    logger.debug(
        f"NLP: {nlp.layout.size} variables, {len(nlp.equality(nlp.cold_start()))} igualdades, "
        f"{nlp.n_inequality} desigualdades"
    )
    return nlp


def constraint_summary(nlp: NlpInstance) -> Dict[str, int]:
    """
    Orden de las filas de restricción, en el orden en que se ensamblan. Las filas de
    colisión empiezan en el nudo 1: el nudo 0 lo fija la restricción de estado inicial.
    """
    spec = nlp.spec
    intra = spec.steps + 1
    return {
        "initial_state": STATE_DIM,
        "dynamics_defects": intra * (spec.knots_per_step - 1) * STATE_DIM,
        "reset_defects": spec.steps * STATE_DIM,
        "contact_guards": spec.steps + 1,
        "collision": 6 * (nlp.layout.knots - 1) if nlp.problem.collision else 0,
        "foot_edges": 0 if nlp.problem.stl_objective else 2 * nlp.layout.knots,
    }
