# src/services/simulation_service.py
"""
Simulación en lazo cerrado del modelo reducido con empujones impulsivos,
barridos omnidireccionales, escenarios de piedras, comparación de ablaciones
y ejecuciones de resistencia.
"""
import csv
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..config.settings import ExperimentConfig
from ..core.capsules import LegGeometryModel
from ..core.dynamics import (
    AugmentedState,
    GUARD_TOLERANCE,
    GuardViolationError,
    StanceParity,
    detect_keyframe,
    flow_state,
    nominal_step,
    reset_map,
    write_trajectory_csv,
)
from ..core.robustness import eval_satisfaction, robustness
from ..core.stl_formula import Signal, always, conj, disj, pred
from .mpc_service import AblationMode, MpcController, MpcSolution
from .spec_builder import SpecConfig, StoneRect, build_step_audit_formula, stone_predicates
from .surrogate_service import DistanceSurrogate

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["direction", "phase", "magnitude", "outcome", "steps_to_recovery", "min_margin"]


class Outcome(str, Enum):
    RECOVERED = "Recovered"
    FELL = "Fell"
    DRIFT_EXCEEDED = "DriftExceeded"
    COLLISION = "Collision"
    SOLVER_BREAKDOWN = "SolverBreakdown"


@dataclass(frozen=True)
class PerturbationSpec:
    """Empujón sobre la pelvis; dirección 0° = +y (lado del apoyo izquierdo inicial), 90° = +x."""

    magnitude: float
    direction: float
    phase: float
    duration: float = 0.1
    step: int = 1

    def __post_init__(self):
        if self.magnitude < 0.0:
            raise ValueError("la magnitud debe ser no negativa")
        if self.duration <= 0.0:
            raise ValueError("la duración debe ser positiva")
        if not 0.0 <= self.direction < 360.0:
            raise ValueError("la dirección debe estar en [0, 360)")
        if not 0.0 <= self.phase < 1.0:
            raise ValueError("la fase debe estar en [0, 1)")

    def delta_v(self, mass: float) -> np.ndarray:
        """Impulso convertido en salto de velocidad del CoM (marco mundial)."""
        theta = np.deg2rad(self.direction)
        return self.magnitude * self.duration / mass * np.array([np.sin(theta), np.cos(theta)])

    def onset(self, step_duration: float) -> float:
        return self.phase * step_duration


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    parities: List[StanceParity] = field(default_factory=list)
    anchors: List[np.ndarray] = field(default_factory=list)

    def append(self, t: float, x: AugmentedState, u: np.ndarray, parity: StanceParity, anchor: np.ndarray) -> None:
        self.times.append(t)
        self.states.append(x.to_vector())
        self.controls.append(np.array(u, dtype=float))
        self.parities.append(parity)
        self.anchors.append(np.array(anchor, dtype=float))

    def write_csv(self, path: Union[str, Path]) -> Path:
        write_trajectory_csv(path, self.times, np.array(self.states), np.array(self.controls), self.parities)
        return Path(path)


@dataclass
class TrialResult:
    outcome: Outcome
    steps_to_recovery: Optional[int]
    robustness_trace: List[float]
    min_margin: float
    footholds: List[np.ndarray]
    min_clearance: float
    steps_completed: int
    perturbations: Tuple[PerturbationSpec, ...] = ()
    mode: str = AblationMode.FULL.value
    stats: Dict[str, float] = field(default_factory=dict)
    trajectory: Optional[Trajectory] = None
    message: str = ""

    @property
    def recovered(self) -> bool:
        return self.outcome is Outcome.RECOVERED

    def post_push_robustness(self, window: int = 2) -> float:
        """Mínimo ρ exacto de los `window` pasos posteriores al empujón."""
        start = max((p.step for p in self.perturbations), default=-1) + 1
        values = self.robustness_trace[start : start + window]
        return float(min(values)) if values else float("-inf")


def _resample(times: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    grid = np.linspace(times[0], times[-1], n)
    return np.column_stack([np.interp(grid, times, rows[:, c]) for c in range(rows.shape[1])])


def audit_step(
    spec: SpecConfig, parity: StanceParity, times: Sequence[float], signal_rows: Sequence[np.ndarray], anchor: np.ndarray, samples: int
) -> Tuple[float, bool]:
    """ρ exacto y satisfacción booleana de un paso realizado remuestreado en `samples` puntos."""
    t = np.asarray(times, dtype=float)
    rows = np.asarray(signal_rows, dtype=float)
    if len(t) < 2 or t[-1] <= t[0]:
        rows = np.repeat(rows[-1:], samples, axis=0)
    else:
        rows = _resample(t, rows, samples)
    signal = Signal(rows, np.repeat(np.asarray(anchor, dtype=float)[None, :], samples, axis=0))
    formula = build_step_audit_formula(spec, parity, samples)
    return float(robustness(formula, signal)), eval_satisfaction(formula, signal)


def _recovery(trace: List[float], push_step: Optional[int], window: int) -> Tuple[Outcome, Optional[int]]:
    """Primer paso tras el empujón desde el que todos los pasos auditados cumplen ρ ≥ 0."""
    if not trace:
        return Outcome.FELL, None
    reference = -1 if push_step is None else push_step
    first = None
    for k in range(len(trace) - 1, reference, -1):
        if trace[k] < 0.0:
            break
        first = k
    if first is None:
        return Outcome.FELL, None
    steps = 0 if push_step is None else first - reference
    if push_step is None and first != 0:
        return Outcome.FELL, None
    return (Outcome.RECOVERED if steps <= window else Outcome.FELL), steps


def initial_state(cfg: ExperimentConfig, parity: StanceParity = StanceParity.LEFT) -> AugmentedState:
    """Estado nominal en el cambio de contacto."""
    return AugmentedState.from_vector(nominal_step(cfg.model, cfg.gait, parity, 2)[0])


def swing_velocity(x: AugmentedState, plan: MpcSolution, knot: int, to_knot: float) -> np.ndarray:
    """Velocidad que lleva el pie en vuelo hasta el nudo planificado `knot + 1` justo a tiempo."""
    if to_knot <= 1e-9:
        return np.array(plan.U[knot], dtype=float)
    return (plan.X[knot + 1, 6:9] - x.p_swing) / to_knot


def run_closed_loop(
    cfg: ExperimentConfig,
    perturbations: Sequence[PerturbationSpec],
    surrogate: Optional[DistanceSurrogate],
    sim_dt: Optional[float] = None,
    total_steps: Optional[int] = None,
    mode: Union[str, AblationMode, None] = None,
    fault_hook: Optional[Callable[[int], bool]] = None,
    keep_trajectory: bool = False,
) -> TrialResult:
    """
    Planta: flujo analítico del LIPM a `sim_dt` con el pie en vuelo siguiendo las
    posiciones planificadas nudo a nudo. Controlador: replanteo cada
    `replan_period` y en cada contacto. La guarda de contacto se comprueba con
    tolerancia GUARD_TOLERANCE antes de auditar el paso; violarla termina en FELL.
    Siempre devuelve un TrialResult.
    """
    sim = cfg.simulation
    params = cfg.model
    sim_dt = sim_dt or sim.sim_dt
    total_steps = total_steps or sim.total_steps
    mode_value = AblationMode(mode or cfg.mpc.mode).value
    parity = StanceParity.LEFT
    spec = SpecConfig.from_settings(cfg, parity)
    knot_dt = cfg.gait.step_duration / (spec.knots_per_step - 1)
    if sim_dt > knot_dt / 4.0:
        logger.warning(f"⚠️ sim_dt={sim_dt} supera dt de nudo / 4 ({knot_dt / 4.0:.4f})")
    geometry = LegGeometryModel(cfg.surrogate.geometry, params.z0)
    controller = MpcController(cfg, surrogate, mode_value, spec, fault_hook=fault_hook)

    x = initial_state(cfg, parity)
    anchor = np.zeros(2)
    trajectory = Trajectory()
    trace: List[float] = []
    footholds: List[np.ndarray] = []
    min_clearance = np.inf
    absent = 0
    applied = set()
    push_step = max((p.step for p in perturbations), default=None)
    step_index, t_global, t_in_step = 0, 0.0, 0.0
    step_times: List[float] = []
    step_rows: List[np.ndarray] = []

    def result(outcome: Outcome, message: str = "") -> TrialResult:
        steps = None
        if outcome is Outcome.RECOVERED:
            outcome, steps = _recovery(trace, push_step, sim.recovery_window_steps)
        after = trace[(push_step + 1 if push_step is not None else 0) :]
        margin = float(min(after)) if after else float("-inf")
        if outcome is not Outcome.RECOVERED:
            logger.info(f"📉 Ensayo terminado: {outcome.value} en el paso {step_index} {message}")
        return TrialResult(
            outcome=outcome,
            steps_to_recovery=steps,
            robustness_trace=list(trace),
            min_margin=margin,
            footholds=footholds,
            min_clearance=float(min_clearance),
            steps_completed=step_index,
            perturbations=tuple(perturbations),
            mode=mode_value,
            stats=controller.stats(),
            trajectory=trajectory if keep_trajectory else None,
            message=message,
        )

    plan = controller.replan_step(x, parity, 0.0, tuple(anchor))
    plan_time = 0.0
    last = spec.knots_per_step - 1

    while step_index < total_steps:
        since = t_in_step - plan_time
        dt0 = float(plan.T[0]) / last
        knot = min(int((since + 1e-12) / dt0), last - 1)
        to_knot = max((knot + 1) * dt0 - since, 0.0)
        u = swing_velocity(x, plan, knot, to_knot)
        step_times.append(t_in_step)
        step_rows.append(np.concatenate([x.to_vector(), u]))
        trajectory.append(t_global, x, u, parity, anchor)

        remaining = float(plan.T[0]) - since
        h = min(sim_dt, to_knot, max(remaining, 0.0)) if to_knot > 1e-9 else min(sim_dt, max(remaining, 0.0))
        x = flow_state(x, h, params, u)
        t_in_step += h
        t_global += h

        for i, p in enumerate(perturbations):
            if i not in applied and p.step == step_index and t_in_step >= p.onset(cfg.gait.step_duration):
                dv = p.delta_v(params.mass)
                x = x.replace(v_com=x.v_com + np.array([dv[0], dv[1], 0.0]))
                applied.add(i)
                logger.debug(f"Empujón {p.magnitude:.0f} N a {p.direction:.0f}° en t={t_global:.3f}s")

        # Detección de fallos en cada paso de simulación
        if x.p_swing[2] < params.terrain_height - GUARD_TOLERANCE:
            return result(Outcome.FELL, f"contacto anticipado: pie a {x.p_swing[2] - params.terrain_height:+.2e} m")
        if np.linalg.norm(x.v_com[:2]) > sim.fall_velocity:
            return result(Outcome.FELL, "velocidad del CoM excesiva")
        if abs(anchor[1] + x.p_com[1]) > sim.drift_bound:
            return result(Outcome.DRIFT_EXCEEDED, "deriva lateral")
        clearance = geometry.min_distance(x.p_com, x.p_swing, parity)
        min_clearance = min(min_clearance, clearance)
        if clearance < 0.0:
            return result(Outcome.COLLISION, f"distancia {clearance:.4f} m")
        if controller.consecutive_failures > cfg.mpc.failure_limit:
            return result(Outcome.SOLVER_BREAKDOWN, "fallos consecutivos del solver")

        if remaining - h <= 1e-12:
            step_times.append(t_in_step)
            step_rows.append(np.concatenate([x.to_vector(), u]))
            try:
                x_next, parity_next = reset_map(x, parity, params)
            except GuardViolationError as e:
                return result(Outcome.FELL, f"guarda de contacto: {e}")
            rho, _ = audit_step(spec, parity, step_times, step_rows, anchor, sim.audit_samples)
            trace.append(rho)
            if detect_keyframe([r[:9] for r in step_rows]) is None:
                absent += 1
                if absent >= sim.keyframe_absent_limit:
                    return result(Outcome.FELL, "ápice ausente")
            else:
                absent = 0
            foothold = anchor + x.p_swing[:2]
            footholds.append(foothold)
            x, parity = x_next, parity_next
            anchor = foothold
            step_index += 1
            t_in_step = 0.0
            step_times, step_rows = [], []
            if step_index >= total_steps:
                break
            plan = controller.replan_step(x, parity, 0.0, tuple(anchor), stepped=True)
            plan_time = 0.0
        elif since + h >= cfg.mpc.replan_period - 1e-12:
            plan = controller.replan_step(x, parity, t_in_step, tuple(anchor))
            plan_time = t_in_step

    return result(Outcome.RECOVERED)


# Ejecución en paralelo: el orden de salida es el de la lista de ensayos


def _trial_worker(payload: Tuple[ExperimentConfig, Optional[DistanceSurrogate], str, Tuple[PerturbationSpec, ...]]) -> TrialResult:
    cfg, surrogate, mode, perturbations = payload
    try:
        return run_closed_loop(cfg, perturbations, surrogate, mode=mode)
    except Exception as e:
        logger.error(f"❌ Ensayo abortado: {e}")
        return TrialResult(Outcome.SOLVER_BREAKDOWN, None, [], float("-inf"), [], float("nan"), 0, perturbations, mode, message=str(e))


def run_trials(
    cfg: ExperimentConfig,
    surrogate: Optional[DistanceSurrogate],
    trials: Sequence[Tuple[PerturbationSpec, ...]],
    mode: Union[str, AblationMode, None] = None,
    workers: Optional[int] = None,
    description: str = "ensayos",
) -> List[TrialResult]:
    mode_value = AblationMode(mode or cfg.mpc.mode).value
    payloads = [(cfg, surrogate, mode_value, tuple(t)) for t in trials]
    workers = workers or cfg.workers
    if workers <= 1:
        return [_trial_worker(p) for p in tqdm(payloads, desc=description)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(_trial_worker, payloads), total=len(payloads), desc=description))


@dataclass
class SweepResult:
    rows: List[Dict[str, object]]
    max_force: Dict[Tuple[float, float], Optional[float]]
    anomalies: List[Dict[str, float]]

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Formato fijo para que ejecuciones con la misma semilla sean idénticas byte a byte."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(SWEEP_COLUMNS)
            for row in self.rows:
                steps = row["steps_to_recovery"]
                writer.writerow(
                    [
                        f"{row['direction']:.1f}",
                        f"{row['phase']:.2f}",
                        f"{row['magnitude']:.1f}",
                        row["outcome"],
                        "" if steps is None else steps,
                        f"{row['min_margin']:.9f}",
                    ]
                )
        return path

    def write_max_force_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["direction", "phase", "max_force"])
            for (direction, phase), force in sorted(self.max_force.items()):
                writer.writerow([f"{direction:.1f}", f"{phase:.2f}", "" if force is None else f"{force:.1f}"])
        return path

    def write_anomalies_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["direction", "phase", "failed_magnitude", "recovered_magnitude"])
            for a in self.anomalies:
                writer.writerow([f"{a['direction']:.1f}", f"{a['phase']:.2f}", f"{a['failed_magnitude']:.1f}", f"{a['recovered_magnitude']:.1f}"])
        return path


def summarize_sweep(rows: List[Dict[str, object]]) -> Tuple[Dict[Tuple[float, float], Optional[float]], List[Dict[str, float]]]:
    """Fuerza máxima recuperable por (dirección, fase) y filas de frontera no monótona."""
    cells: Dict[Tuple[float, float], List[Tuple[float, bool]]] = {}
    for row in rows:
        cells.setdefault((row["direction"], row["phase"]), []).append((row["magnitude"], row["outcome"] == Outcome.RECOVERED.value))
    max_force: Dict[Tuple[float, float], Optional[float]] = {}
    anomalies: List[Dict[str, float]] = []
    for key, values in cells.items():
        values.sort()
        recovered = [m for m, ok in values if ok]
        max_force[key] = max(recovered) if recovered else None
        for m, ok in values:
            if ok:
                continue
            for m2, ok2 in values:
                if ok2 and m2 > m:
                    anomalies.append({"direction": key[0], "phase": key[1], "failed_magnitude": m, "recovered_magnitude": m2})
    return max_force, anomalies


def sweep_omnidirectional(
    cfg: ExperimentConfig,
    surrogate: Optional[DistanceSurrogate],
    magnitudes: Optional[Sequence[float]] = None,
    directions: Optional[Sequence[float]] = None,
    phases: Optional[Sequence[float]] = None,
    mode: Union[str, AblationMode, None] = None,
    workers: Optional[int] = None,
) -> SweepResult:
    """Rejilla magnitud × dirección × fase; una fila por ensayo."""
    magnitudes = list(magnitudes if magnitudes is not None else cfg.sweep.magnitudes)
    directions = list(directions if directions is not None else cfg.sweep.directions)
    phases = list(phases if phases is not None else cfg.sweep.phases)
    if not (magnitudes and directions and phases):
        raise ValueError("las rejillas de barrido no pueden estar vacías")
    grid = [(d, p, m) for d in directions for p in phases for m in magnitudes]
    trials = [
        (PerturbationSpec(m, d, p, cfg.sweep.duration, cfg.simulation.push_step),) for d, p, m in grid
    ]
    logger.info(f"🚀 Barrido de {len(trials)} ensayos con {workers or cfg.workers} procesos")
    results = run_trials(cfg, surrogate, trials, mode, workers, "barrido")
    rows = [
        {
            "direction": d,
            "phase": p,
            "magnitude": m,
            "outcome": r.outcome.value,
            "steps_to_recovery": r.steps_to_recovery,
            "min_margin": r.min_margin,
        }
        for (d, p, m), r in zip(grid, results)
    ]
    max_force, anomalies = summarize_sweep(rows)
    if anomalies:
        logger.warning(f"⚠️ {len(anomalies)} filas con frontera de recuperación no monótona")
    return SweepResult(rows, max_force, anomalies)


@dataclass
class StonesReport:
    feasible: bool
    unreachable_gap: Optional[Tuple[int, int, float]] = None
    trial: Optional[TrialResult] = None
    foothold_robustness: Optional[float] = None
    foothold_margins: List[float] = field(default_factory=list)


def first_unreachable_gap(stones: Sequence[StoneRect], max_step_length: float) -> Optional[Tuple[int, int, float]]:
    """Primer hueco entre piedras consecutivas que ningún paso puede salvar."""
    for i in range(len(stones) - 1):
        a, b = stones[i], stones[i + 1]
        center_gap = float(np.linalg.norm(np.subtract(b.center, a.center)))
        gap = center_gap - float(np.linalg.norm(a.half_extents)) - float(np.linalg.norm(b.half_extents))
        if gap > max_step_length:
            return i, i + 1, gap
    return None


def foothold_audit(stones: Sequence[StoneRect], footholds: Sequence[np.ndarray]) -> Tuple[float, List[float]]:
    """ρ exacto de □(∨ piedras) sobre los apoyos realizados y margen por apoyo."""
    on_stone = disj(*[conj(*(pred(p) for p in stone_predicates(s, i))) for i, s in enumerate(stones)]) if len(stones) > 1 else conj(
        *(pred(p) for p in stone_predicates(stones[0], 0))
    )
    n = len(footholds)
    signal = Signal(np.zeros((n, 12)), np.array(footholds, dtype=float).reshape(n, 2))
    rho = robustness(always(0, n - 1, on_stone), signal)
    margins = [max(float(np.min(s.edge_distances(f))) for s in stones) for f in footholds]
    return float(rho), margins


def run_stones_scenario(
    cfg: ExperimentConfig,
    surrogate: Optional[DistanceSurrogate],
    perturbations: Sequence[PerturbationSpec] = (),
) -> StonesReport:
    """Recorre las piedras de `cfg.spec.stones`; informa del primer hueco inalcanzable."""
    stones = [StoneRect.from_settings(s) for s in cfg.spec.stones]
    if not stones:
        raise ValueError("el escenario no define piedras")
    gap = first_unreachable_gap(stones, cfg.mpc.max_step_length)
    if gap is not None:
        logger.error(f"❌ Hueco inalcanzable entre las piedras {gap[0]} y {gap[1]}: {gap[2]:.3f} m")
        return StonesReport(feasible=False, unreachable_gap=gap)
    trial = run_closed_loop(cfg, perturbations, surrogate, total_steps=len(stones), keep_trajectory=True)
    if not trial.footholds:
        return StonesReport(feasible=False, trial=trial)
    rho, margins = foothold_audit(stones, trial.footholds)
    feasible = rho >= 0.0 and trial.steps_completed == len(stones)
    if feasible:
        logger.info(f"✅ {len(margins)} apoyos sobre piedras, ρ={rho:.4f}")
    else:
        logger.warning(f"⚠️ Apoyos fuera de las piedras: ρ={rho:.4f}")
    return StonesReport(feasible=feasible, trial=trial, foothold_robustness=rho, foothold_margins=margins)


@dataclass
class AblationReport:
    samples: Dict[Tuple[str, float], List[float]]
    recovered: Dict[Tuple[str, float, float], bool]

    def table(self) -> List[Dict[str, object]]:
        rows = []
        for (mode, direction), values in sorted(self.samples.items()):
            finite = [v for v in values if np.isfinite(v)] or [float("-inf")]
            rows.append(
                {
                    "mode": mode,
                    "direction": direction,
                    "min": float(np.min(finite)),
                    "median": float(np.median(finite)),
                    "max": float(np.max(finite)),
                }
            )
        return rows

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["mode", "direction", "min", "median", "max"])
            for row in self.table():
                writer.writerow([row["mode"], f"{row['direction']:.1f}", f"{row['min']:.6f}", f"{row['median']:.6f}", f"{row['max']:.6f}"])
        return path


def compare_ablations(
    cfg: ExperimentConfig,
    surrogate: Optional[DistanceSurrogate],
    directions: Optional[Sequence[float]] = None,
    magnitudes: Optional[Sequence[float]] = None,
    phase: float = 0.0,
    modes: Sequence[Union[str, AblationMode]] = (AblationMode.FULL, AblationMode.NO_STL_APEX, AblationMode.NO_STL_CONTACT),
    workers: Optional[int] = None,
) -> AblationReport:
    """Distribución del ρ exacto tras el empujón, por modo y dirección, con los mismos ensayos."""
    directions = list(directions if directions is not None else cfg.sweep.directions)
    magnitudes = list(magnitudes if magnitudes is not None else cfg.sweep.magnitudes[:3])
    grid = [(d, m) for d in directions for m in magnitudes]
    trials = [(PerturbationSpec(m, d, phase, cfg.sweep.duration, cfg.simulation.push_step),) for d, m in grid]
    samples: Dict[Tuple[str, float], List[float]] = {}
    recovered: Dict[Tuple[str, float, float], bool] = {}
    for mode in modes:
        value = AblationMode(mode).value
        results = run_trials(cfg, surrogate, trials, value, workers, f"ablación {value}")
        for (d, m), r in zip(grid, results):
            samples.setdefault((value, d), []).append(r.post_push_robustness(cfg.simulation.recovery_window_steps))
            recovered[(value, d, m)] = r.recovered
    return AblationReport(samples, recovered)


@dataclass
class SoakReport:
    replans: int
    infeasible: int
    failures: int
    fallbacks: int
    injected: int
    trials: int
    outcomes: Dict[str, int]

    @property
    def infeasible_rate(self) -> float:
        return self.infeasible / self.replans if self.replans else 0.0


def run_soak(
    cfg: ExperimentConfig,
    surrogate: Optional[DistanceSurrogate],
    n_replans: int = 500,
    seed: Optional[int] = None,
    fault_every: int = 100,
) -> SoakReport:
    """Ensayos con empujones aleatorios hasta acumular `n_replans` replanteos, con fallos inyectados."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    injected = {"count": 0, "total": 0}

    def hook(_: int) -> bool:
        injected["total"] += 1
        if fault_every > 0 and injected["total"] % fault_every == 0:
            injected["count"] += 1
            return True
        return False

    totals = Counter()
    outcomes: Counter = Counter()
    trials = 0
    max_force = 0.5 * max(cfg.sweep.magnitudes)
    while totals["replans"] < n_replans:
        push = PerturbationSpec(
            float(rng.uniform(0.0, max_force)),
            float(rng.uniform(0.0, 360.0)),
            float(rng.choice(cfg.sweep.phases)),
            cfg.sweep.duration,
            cfg.simulation.push_step,
        )
        trial = run_closed_loop(cfg, [push], surrogate, fault_hook=hook)
        trials += 1
        outcomes[trial.outcome.value] += 1
        for key in ("replans", "infeasible", "failures", "fallbacks"):
            totals[key] += int(trial.stats.get(key, 0))
        if trial.stats.get("replans", 0) == 0:
            break
    report = SoakReport(
        replans=totals["replans"],
        infeasible=totals["infeasible"],
        failures=totals["failures"],
        fallbacks=totals["fallbacks"],
        injected=injected["count"],
        trials=trials,
        outcomes=dict(outcomes),
    )
    logger.info(f"💾 Resistencia: {report.replans} replanteos, tasa inviable {report.infeasible_rate:.2%}")
    return report


def solution_footholds_world(solution: MpcSolution, spec: SpecConfig) -> np.ndarray:
    """Apoyos planificados en el marco mundial."""
    anchor = np.asarray(solution.anchor, dtype=float)
    out = []
    for c in spec.contact_knots:
        anchor = anchor + solution.X[c, 6:8]
        out.append(anchor.copy())
    return np.array(out)
