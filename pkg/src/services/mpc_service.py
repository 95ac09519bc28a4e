# src/services/mpc_service.py
"""
Resolución del NLP de la MPC, variantes de ablación, auditorías y el bucle
de horizonte deslizante con arranque en caliente y plan de respaldo.
"""
import logging
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import orjson
from scipy.optimize import Bounds, minimize
from tenacity import Retrying, retry_if_result, stop_after_attempt

from ..config.settings import ExperimentConfig, MpcSettings
from ..core.capsules import LegGeometryModel
from ..core.dynamics import (
    RESET_MATRIX,
    STATE_DIM,
    AugmentedState,
    StanceParity,
    nominal_step,
    step_vector,
    write_trajectory_csv,
)
from ..core.riemannian import phase_box
from ..core.robustness import eval_satisfaction, robustness
from ..core.smooth_robustness import eval_smooth_robustness
from .nlp_transcription import MpcProblem, NlpInstance, TranscriptionError, transcribe
from .spec_builder import SpecConfig
from .surrogate_service import DistanceSurrogate

logger = logging.getLogger(__name__)

ACTIVE_TOLERANCE = 1e-5


class SolverStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


class AblationMode(str, Enum):
    FULL = "full"
    NO_STL_APEX = "no-stl-apex"
    NO_STL_CONTACT = "no-stl-contact"
    NO_COLLISION = "no-collision"


class InjectedFault(RuntimeError):
    """Fallo forzado desde el gancho de inyección del controlador."""


@dataclass(frozen=True)
class SolveBudget:
    max_iter: int = 100
    ftol: float = 1e-8
    feasibility_tol: float = 1e-6
    stationarity_tol: float = 1e-4
    time_limit: Optional[float] = None

    @classmethod
    def from_settings(cls, mpc: MpcSettings) -> "SolveBudget":
        return cls(mpc.max_iter, mpc.ftol, mpc.feasibility_tol, mpc.stationarity_tol)


@dataclass
class MpcSolution:
    X: np.ndarray
    U: np.ndarray
    T: np.ndarray
    objective: float
    rho_smooth: float
    rho_exact: float
    status: SolverStatus
    iterations: int
    wall_time: float
    feasibility: float = 0.0
    stationarity: float = 0.0
    parity: StanceParity = StanceParity.LEFT
    anchor: Tuple[float, float] = (0.0, 0.0)
    mode: str = AblationMode.FULL.value
    message: str = ""
    fallback: bool = False

    @property
    def feasible(self) -> bool:
        return self.status is not SolverStatus.INFEASIBLE

    def footholds(self, spec: SpecConfig) -> np.ndarray:
        """Apoyos planificados (N+1, 3) en el marco de cada paso."""
        return np.array([self.X[c, 6:9] for c in spec.contact_knots])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status.value,
            "mode": self.mode,
            "parity": self.parity.value,
            "objective": self.objective,
            "rho_smooth": self.rho_smooth,
            "rho_exact": self.rho_exact,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "feasibility": self.feasibility,
            "stationarity": self.stationarity,
            "fallback": self.fallback,
            "message": self.message,
            "anchor": list(self.anchor),
            "durations": self.T,
            "states": self.X,
            "controls": self.U,
        }

    def to_json(self) -> bytes:
        return orjson.dumps(self.to_dict(), option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2)

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_json())
        return path

    def write_csv(self, path: Union[str, Path], spec: SpecConfig) -> Path:
        """Trayectoria planificada nudo a nudo (tiempos acumulados sobre el horizonte)."""
        times, t = [], 0.0
        for k in range(len(self.X)):
            times.append(t)
            j = spec.step_of(k)
            if k != spec.step_window(j)[1]:
                t += float(self.T[j]) / (spec.knots_per_step - 1)
        parities = [spec.parity_schedule[spec.step_of(k)] for k in range(len(self.X))]
        write_trajectory_csv(path, times, self.X, self.U, parities)
        return Path(path)


def ablation_variant(problem: MpcProblem, mode: Union[str, AblationMode]) -> MpcProblem:
    """Sustituye el objetivo STL por cajas de estado o elimina las restricciones de colisión."""
    try:
        mode = AblationMode(mode)
    except ValueError:
        raise TranscriptionError(f"modo de ablación desconocido: {mode}") from None
    if mode is AblationMode.FULL:
        return problem
    if mode is AblationMode.NO_COLLISION:
        return replace(problem, mode=mode.value, collision=False)
    spec = problem.spec
    last = spec.steps
    parity = spec.parity_schedule[last]
    start, end = spec.step_window(last)
    region = spec.region
    lateral = region.lateral(parity)
    center = (0.0, lateral.lateral_apex, float(np.sqrt(region.sagittal.manifold.energy0)), 0.0)
    if mode is AblationMode.NO_STL_APEX:
        # Ápice fijado al nudo central del último paso
        knot, flow_time = start + (spec.knots_per_step - 1) // 2, 0.0
    else:
        knot, flow_time = end, 0.5 * problem.gait.step_duration
    box = phase_box(region, parity, problem.model.omega, flow_time, center)
    return replace(
        problem,
        mode=mode.value,
        stl_objective=False,
        knot_boxes=((knot, tuple(sorted(box.items()))),),
    )


def _warm_vector(nlp: NlpInstance, warm: MpcSolution) -> np.ndarray:
    X = np.array(warm.X, dtype=float)
    X[0] = nlp.problem.x0.to_vector()
    return nlp.layout.pack(X, warm.U, warm.T)


def _feasibility(nlp: NlpInstance, z: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    residual = float(np.max(np.abs(nlp.equality(z)), initial=0.0))
    if nlp.n_inequality:
        residual = max(residual, float(np.max(-nlp.inequality(z), initial=0.0)))
    residual = max(residual, float(np.max(lower - z, initial=0.0)), float(np.max(z - upper, initial=0.0)))
    return residual


def _stationarity(nlp: NlpInstance, z: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """Residuo de estacionariedad con multiplicadores ajustados por mínimos cuadrados."""
    _, grad = nlp.objective(z)
    jacobians = [nlp.equality_jac(z)]
    if nlp.n_inequality:
        values = nlp.inequality(z)
        active = values <= ACTIVE_TOLERANCE
        if np.any(active):
            jacobians.append(nlp.inequality_jac(z)[active])
    J = np.vstack(jacobians)
    scale = np.maximum(1.0, np.abs(z))
    free = (z - lower > ACTIVE_TOLERANCE * scale) & (upper - z > ACTIVE_TOLERANCE * scale)
    if not np.any(free):
        return 0.0
    g, A = grad[free], J[:, free]
    multipliers, *_ = np.linalg.lstsq(A.T, g, rcond=None)
    residual = g - A.T @ multipliers
    return float(np.max(np.abs(residual)) / (1.0 + np.max(np.abs(grad))))


class _BudgetExceeded(Exception):
    pass


def solve(nlp: NlpInstance, warm: Optional[MpcSolution] = None, budget: SolveBudget = SolveBudget()) -> MpcSolution:
    """
    SQP (SLSQP de scipy) sobre el NLP denso. Nunca propaga excepciones: un fallo
    del solver devuelve el mejor iterado con estado Infeasible o MaxIter.
    """
    lower, upper = nlp.bounds()
    z0 = _warm_vector(nlp, warm) if warm is not None else nlp.cold_start()
    z0 = np.clip(z0, lower, upper)
    constraints = [{"type": "eq", "fun": nlp.equality, "jac": nlp.equality_jac}]
    if nlp.n_inequality:
        constraints.append({"type": "ineq", "fun": nlp.inequality, "jac": nlp.inequality_jac})

    best = {"z": z0, "nit": 0}
    started = time.perf_counter()

    def callback(zk: np.ndarray) -> None:
        best["z"] = np.array(zk)
        best["nit"] += 1
        if budget.time_limit is not None and time.perf_counter() - started > budget.time_limit:
            raise _BudgetExceeded()

    code, message = -1, ""
    try:
        result = minimize(
            nlp.objective,
            z0,
            jac=True,
            method="SLSQP",
            bounds=Bounds(lower, upper),
            constraints=constraints,
            callback=callback,
            options={"maxiter": budget.max_iter, "ftol": budget.ftol},
        )
        z, code, iterations, message = result.x, int(result.status), int(result.nit), str(result.message)
    except _BudgetExceeded:
        z, iterations, message = best["z"], best["nit"], "límite de tiempo alcanzado"
        code = 9
    except Exception as e:
        logger.error(f"❌ Error en el solver: {e}")
        z, iterations, message = best["z"], best["nit"], str(e)
    wall = time.perf_counter() - started

    if not np.all(np.isfinite(z)):
        z, message = z0, message or "iterado no finito"
        code = -1
    feasibility = _feasibility(nlp, z, lower, upper)
    stationarity = _stationarity(nlp, z, lower, upper) if feasibility <= budget.feasibility_tol else float("inf")
    if feasibility > budget.feasibility_tol:
        status = SolverStatus.INFEASIBLE
    elif code == 0 and stationarity <= budget.stationarity_tol:
        status = SolverStatus.OPTIMAL
    else:
        status = SolverStatus.MAX_ITER

    objective, _ = nlp.objective(z)
    signal = nlp.signal(z)
    formula = nlp.audit_formula
    rho_smooth, _, _ = eval_smooth_robustness(formula, signal, 0, nlp.problem.k1, nlp.problem.k2)
    X, U, T = nlp.layout.unpack(z)
    solution = MpcSolution(
        X=X.copy(),
        U=U.copy(),
        T=T.copy(),
        objective=float(objective),
        rho_smooth=float(rho_smooth),
        rho_exact=float(robustness(formula, signal)),
        status=status,
        iterations=iterations,
        wall_time=wall,
        feasibility=feasibility,
        stationarity=stationarity,
        parity=nlp.problem.parity,
        anchor=tuple(nlp.problem.anchor),
        mode=nlp.problem.mode,
        message=message,
    )
    logger.debug(
        f"Solver {status.value}: iter={iterations} t={wall * 1e3:.1f}ms ρ={solution.rho_exact:.4f} "
        f"ρ̃={solution.rho_smooth:.4f} feas={feasibility:.1e}"
    )
    return solution


def shift_solution(prev: MpcSolution, elapsed: float, stepped: bool, spec: SpecConfig, min_remaining: float = 0.02) -> MpcSolution:
    """
    Solución previa desplazada en el tiempo para el arranque en caliente.

    Sin cambio de contacto se descuenta el tiempo transcurrido de T⁰ y el paso actual
    se remuestrea desde `elapsed`: los nudos del pie en vuelo siguen sobre la trayectoria
    anterior y el último conserva el apoyo planificado. Tras un contacto se descarta
    el paso actual y el último paso se repite reflejado en y.
    """
    X, U, T = np.array(prev.X), np.array(prev.U), np.array(prev.T, dtype=float)
    parity, anchor = prev.parity, prev.anchor
    if stepped:
        K = spec.knots_per_step
        start, end = spec.step_window(spec.steps)
        mirror = np.ones(STATE_DIM)
        mirror[[1, 4, 7]] = -1.0
        X = np.vstack([X[K:], X[start : end + 1] * mirror])
        U = np.vstack([U[K:], U[start : end + 1] * np.array([1.0, -1.0, 1.0])])
        T = np.concatenate([T[1:], T[-1:]])
        anchor = (anchor[0] + float(prev.X[K - 1, 6]), anchor[1] + float(prev.X[K - 1, 7]))
        parity = parity.flipped()
    else:
        # Remuestreo en el tiempo: los nudos del paso actual caen sobre el plan anterior
        K = spec.knots_per_step
        old = np.linspace(0.0, T[0], K)
        times = np.linspace(min(max(elapsed, 0.0), T[0]), T[0], K)
        X[:K] = np.column_stack([np.interp(times, old, X[:K, c]) for c in range(STATE_DIM)])
        T[0] = max(T[0] - elapsed, min_remaining)
        U[: K - 1] = np.diff(X[:K, 6:9], axis=0) / (T[0] / (K - 1))
    return replace(prev, X=X, U=U, T=T, parity=parity, anchor=anchor)


def rollout(x0: np.ndarray, U: np.ndarray, T: np.ndarray, spec: SpecConfig, omega: float) -> np.ndarray:
    """Re-integra los controles resueltos con el modelo discreto y los reinicios."""
    X = np.zeros((spec.horizon_knots, STATE_DIM))
    X[0] = x0
    for j in range(spec.steps + 1):
        start, end = spec.step_window(j)
        dt = T[j] / (spec.knots_per_step - 1)
        for k in range(start, end):
            X[k + 1] = step_vector(X[k], U[k], dt, omega)
        if j < spec.steps:
            X[end + 1] = RESET_MATRIX @ X[end]
    return X


def dynamics_defect(solution: MpcSolution, spec: SpecConfig, omega: float) -> float:
    return float(np.max(np.abs(rollout(solution.X[0], solution.U, solution.T, spec, omega) - solution.X)))


def oracle_clearance(solution: MpcSolution, spec: SpecConfig, geometry: LegGeometryModel) -> float:
    """Distancia mínima entre cápsulas según el oráculo analítico a lo largo del plan."""
    clearance = np.inf
    for k in range(1, spec.horizon_knots):
        parity = spec.parity_schedule[spec.step_of(k)]
        clearance = min(clearance, geometry.min_distance(solution.X[k, 0:3], solution.X[k, 6:9], parity))
    return float(clearance)


def soundness_audit(solution: MpcSolution, nlp: NlpInstance) -> bool:
    """ρ ≥ ρ̃ y, si ρ̃ ≥ 0, satisfacción booleana confirmada."""
    sound = solution.rho_exact >= solution.rho_smooth - 1e-9
    if solution.rho_smooth >= 0.0:
        z = nlp.layout.pack(solution.X, solution.U, solution.T)
        sound = sound and eval_satisfaction(nlp.audit_formula, nlp.signal(z))
    if not sound:
        logger.warning(f"⚠️ Auditoría de solidez fallida: ρ={solution.rho_exact:.5f} ρ̃={solution.rho_smooth:.5f}")
    return sound


class MpcController:
    """Sesión de horizonte deslizante. No es reentrante: una instancia por hilo o proceso."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        surrogate: Optional[DistanceSurrogate],
        mode: Union[str, AblationMode, None] = None,
        spec: Optional[SpecConfig] = None,
        fault_hook: Optional[Callable[[int], bool]] = None,
    ):
        self.cfg = cfg
        self.surrogate = surrogate
        self.mode = AblationMode(mode or cfg.mpc.mode)
        self.spec = spec
        self.fault_hook = fault_hook
        self.budget = SolveBudget.from_settings(cfg.mpc)
        self.previous: Optional[MpcSolution] = None
        self._previous_elapsed = 0.0
        self.replans = 0
        self.failures = 0
        self.infeasible = 0
        self.fallbacks = 0
        self.consecutive_failures = 0
        self.solve_times: List[float] = []
        self.iterations: List[int] = []
        self.frozen = 0

    def reset(self) -> None:
        self.previous = None
        self._previous_elapsed = 0.0
        self.consecutive_failures = 0

    def _remaining(self, elapsed: float, stepped: bool) -> float:
        if self.previous is None or stepped:
            return self.cfg.gait.step_duration - elapsed
        return float(self.previous.T[0]) - (elapsed - self._previous_elapsed)

    def _solve_with_retry(self, nlp: NlpInstance, warm: Optional[MpcSolution]) -> MpcSolution:
        """Primero en caliente; si resulta inviable, un segundo intento en frío."""
        starts = iter([warm, None] if warm is not None else [None])

        def attempt() -> MpcSolution:
            return solve(nlp, next(starts), self.budget)

        retrying = Retrying(
            stop=stop_after_attempt(2 if warm is not None else 1),
            retry=retry_if_result(lambda s: s.status is SolverStatus.INFEASIBLE),
            retry_error_callback=lambda state: state.outcome.result(),
        )
        return retrying(attempt)

    def replan_step(
        self,
        x: Union[AugmentedState, np.ndarray],
        parity: StanceParity,
        elapsed: float,
        anchor: Tuple[float, float] = (0.0, 0.0),
        stepped: bool = False,
    ) -> MpcSolution:
        """
        Un replanteo: congela T⁰ cerca del contacto, resuelve con arranque en
        caliente y, ante un fallo, devuelve el plan anterior desplazado (o, sin plan
        previo, el despliegue en frío). No propaga errores del solver.
        """
        x = x if isinstance(x, AugmentedState) else AugmentedState.from_vector(x)
        self.replans += 1
        remaining = self._remaining(elapsed, stepped)
        mpc = self.cfg.mpc
        spec = self._spec(parity)
        warm = None
        if self.previous is not None:
            since = 0.0 if stepped else elapsed - self._previous_elapsed
            warm = shift_solution(self.previous, since, stepped, spec, mpc.min_remaining)
        durations = list(warm.T) if warm is not None else [self.cfg.gait.step_duration] * (spec.steps + 1)
        freeze = remaining < mpc.freeze_threshold
        if freeze:
            self.frozen += 1
            durations[0] = max(remaining, mpc.min_remaining)
        solution: Optional[MpcSolution] = None
        problem: Optional[MpcProblem] = None
        try:
            problem = MpcProblem.from_settings(
                self.cfg,
                x,
                parity,
                spec=spec,
                durations=tuple(durations),
                elapsed=elapsed,
                anchor=tuple(anchor),
                freeze_t0=freeze,
            )
            problem = ablation_variant(problem, self.mode)
            nlp = transcribe(problem, self.surrogate)
            if self.fault_hook is not None and self.fault_hook(self.replans):
                raise InjectedFault(f"fallo inyectado en el replanteo {self.replans}")
            solution = self._solve_with_retry(nlp, warm if mpc.warm_start else None)
        except Exception as e:
            logger.error(f"❌ Replanteo {self.replans} fallido: {e}")

        if solution is not None:
            self.solve_times.append(solution.wall_time)
            self.iterations.append(solution.iterations)
            if solution.status is SolverStatus.INFEASIBLE:
                self.infeasible += 1

        if solution is None or not solution.feasible:
            self.failures += 1
            self.consecutive_failures += 1
            if warm is not None:
                self.fallbacks += 1
                logger.warning(f"⚠️ Usando el plan anterior desplazado (fallos seguidos: {self.consecutive_failures})")
                fallback = replace(warm, status=SolverStatus.INFEASIBLE, fallback=True)
                self.previous, self._previous_elapsed = fallback, elapsed
                return fallback
            if solution is None:
                solution = self._cold_fallback(problem, x, parity, spec, anchor)
            self.previous, self._previous_elapsed = solution, elapsed
            return solution

        self.consecutive_failures = 0
        self.previous, self._previous_elapsed = solution, elapsed
        return solution

    def _cold_fallback(
        self,
        problem: Optional[MpcProblem],
        x: AugmentedState,
        parity: StanceParity,
        spec: SpecConfig,
        anchor: Tuple[float, float],
    ) -> MpcSolution:
        """Sin plan previo: el despliegue en frío marcado como Infeasible y de respaldo."""
        if problem is None:
            problem = MpcProblem.from_settings(self.cfg, x, parity, spec=spec, anchor=tuple(anchor))
        nlp = transcribe(replace(problem, collision=False))
        X, U, T = nlp.layout.unpack(nlp.cold_start())
        logger.warning("⚠️ Primer replanteo fallido: se usa el despliegue en frío")
        return MpcSolution(
            X,
            U,
            T,
            float("nan"),
            float("nan"),
            float("nan"),
            SolverStatus.INFEASIBLE,
            0,
            0.0,
            parity=parity,
            anchor=tuple(anchor),
            mode=self.mode.value,
            message="despliegue en frío sin resolver",
            fallback=True,
        )

    def _spec(self, parity: StanceParity) -> SpecConfig:
        if self.spec is None:
            self.spec = SpecConfig.from_settings(self.cfg, parity)
        return self.spec.with_parity(parity)

    def stats(self) -> Dict[str, float]:
        return {
            "replans": self.replans,
            "failures": self.failures,
            "infeasible": self.infeasible,
            "infeasible_rate": self.infeasible / self.replans if self.replans else 0.0,
            "fallbacks": self.fallbacks,
            "frozen_replans": self.frozen,
            "median_solve_time": float(np.median(self.solve_times)) if self.solve_times else 0.0,
            "median_iterations": float(np.median(self.iterations)) if self.iterations else 0.0,
        }


def plan_once(
    cfg: ExperimentConfig,
    surrogate: Optional[DistanceSurrogate],
    mode: Union[str, AblationMode] = AblationMode.FULL,
    warm: bool = False,
    x0: Optional[AugmentedState] = None,
    parity: StanceParity = StanceParity.LEFT,
) -> Tuple[MpcSolution, NlpInstance]:
    """Una resolución desde el estado nominal de contacto (o `x0`)."""
    if x0 is None:
        x0 = AugmentedState.from_vector(nominal_step(cfg.model, cfg.gait, parity, 2)[0])
    problem = ablation_variant(MpcProblem.from_settings(cfg, x0, parity), mode)
    nlp = transcribe(problem, surrogate)
    budget = SolveBudget.from_settings(cfg.mpc)
    solution = solve(nlp, None, budget)
    if warm:
        # Segundo solve arrancando de la primera solución
        solution = solve(nlp, solution, budget)
    return solution, nlp
