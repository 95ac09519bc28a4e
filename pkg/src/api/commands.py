# src/api/commands.py
"""
Comandos de la línea de órdenes. Cada comando carga la configuración, llama a
un servicio y escribe sus artefactos bajo `output_dir`.

Códigos de salida: 0 éxito, 1 error de validación o configuración, 2 fallo en
tiempo de ejecución (incluye planes o escenarios inviables).
"""
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, Optional

import orjson
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from ..config.settings import ConfigError, ExperimentConfig, load_config
from ..core.capsules import LegGeometryModel
from ..core.dynamics import StanceParity
from ..core.riemannian import self_check
from ..core.stl_formula import StlError, format_formula, horizon, node_count
from ..core.stl_parser import parse_stl
from ..services.mpc_service import AblationMode, plan_once
from ..services.plot_service import emit_plots
from ..services.simulation_service import (
    Outcome,
    PerturbationSpec,
    compare_ablations,
    run_closed_loop,
    run_soak,
    run_stones_scenario,
    sweep_omnidirectional,
)
from ..services.spec_builder import SpecBuildError, SpecConfig, build_registry, dump_specs
from ..services.surrogate_service import (
    DistanceSurrogate,
    evaluate_surrogate,
    generate_dataset,
    gradient_check,
    oracle_benchmark,
    train_surrogates,
)

logger = logging.getLogger(__name__)
console = Console()

ConfigOption = Annotated[Optional[Path], typer.Option("--config", "-c", help="Archivo YAML del experimento")]
ModeOption = Annotated[Optional[str], typer.Option("--mode", help="full | no-stl-apex | no-stl-contact | no-collision")]
WorkersOption = Annotated[Optional[int], typer.Option("--workers", "-w", min=1, help="Procesos paralelos")]

# Umbrales de la autocomprobación de la carta
IDENTITY_TOLERANCE = 1e-9


@contextmanager
def _cli_errors() -> Iterator[None]:
    """Traduce excepciones a códigos de salida."""
    try:
        yield
    except typer.Exit:
        raise
    except (ConfigError, ValidationError, StlError, SpecBuildError, ValueError) as e:
        console.print(f"[red]❌ {escape(str(e))}[/red]")
        raise typer.Exit(code=1)
    except Exception as e:
        logger.error(f"❌ Fallo en tiempo de ejecución: {e}")
        console.print(f"[red]❌ {type(e).__name__}: {escape(str(e))}[/red]")
        raise typer.Exit(code=2)


def weights_path(cfg: ExperimentConfig) -> Path:
    """Rutas relativas de pesos se resuelven dentro de `output_dir`."""
    path = Path(cfg.surrogate.weights_path)
    return path if path.is_absolute() else cfg.output_path / path


def _mode(cfg: ExperimentConfig, mode: Optional[str]) -> AblationMode:
    return AblationMode(mode or cfg.mpc.mode)


def _surrogate_for(cfg: ExperimentConfig, mode: AblationMode) -> Optional[DistanceSurrogate]:
    if mode is AblationMode.NO_COLLISION:
        return None
    # UntrainedSurrogateError termina con código 2
    return DistanceSurrogate.load(weights_path(cfg))


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
    return path


def _key_values(title: str, rows: Dict[str, Any]) -> None:
    table = Table(title=title)
    table.add_column("campo")
    table.add_column("valor", justify="right")
    for key, value in rows.items():
        table.add_row(key, f"{value:.6g}" if isinstance(value, float) else str(value))
    console.print(table)


def plan(
    config: ConfigOption = None,
    mode: ModeOption = None,
    warm: Annotated[bool, typer.Option("--warm/--cold", help="Re-resolver arrancando de la primera solución")] = False,
) -> None:
    """Una resolución de la MPC desde el estado nominal: JSON + CSV de espacio de fases."""
    with _cli_errors():
        cfg = load_config(config)
        mode_value = _mode(cfg, mode)
        solution, nlp = plan_once(cfg, _surrogate_for(cfg, mode_value), mode_value, warm=warm)
        out = cfg.output_path
        solution.write_json(out / "plan.json")
        solution.write_csv(out / "plan_phase_space.csv", nlp.problem.spec)
        _key_values(
            "Plan",
            {
                "estado": solution.status.value,
                "ρ exacto": solution.rho_exact,
                "ρ suave": solution.rho_smooth,
                "objetivo": solution.objective,
                "iteraciones": solution.iterations,
                "tiempo [s]": solution.wall_time,
                "duraciones": ", ".join(f"{t:.3f}" for t in solution.T),
            },
        )
        if not solution.feasible:
            console.print(f"[red]❌ Plan inviable: {escape(solution.message)}[/red]")
            raise typer.Exit(code=2)


def simulate(
    config: ConfigOption = None,
    magnitude: Annotated[float, typer.Option(min=0.0, help="Fuerza del empujón [N]")] = 0.0,
    direction: Annotated[float, typer.Option(help="Dirección [°], 0 = +y, 90 = +x")] = 0.0,
    phase: Annotated[float, typer.Option(help="Fase del paso en [0, 1)")] = 0.0,
    steps: Annotated[Optional[int], typer.Option(min=1, help="Pasos a simular")] = None,
    mode: ModeOption = None,
) -> None:
    """Lazo cerrado con un empujón opcional; escribe la trayectoria y el resumen."""
    with _cli_errors():
        cfg = load_config(config)
        mode_value = _mode(cfg, mode)
        perturbations = []
        if magnitude > 0.0:
            perturbations.append(PerturbationSpec(magnitude, direction, phase, cfg.sweep.duration, cfg.simulation.push_step))
        trial = run_closed_loop(
            cfg, perturbations, _surrogate_for(cfg, mode_value), total_steps=steps, mode=mode_value, keep_trajectory=True
        )
        out = cfg.output_path
        if trial.trajectory is not None:
            trial.trajectory.write_csv(out / "trajectory.csv")
        _write_json(
            out / "simulate.json",
            {
                "outcome": trial.outcome.value,
                "steps_to_recovery": trial.steps_to_recovery,
                "steps_completed": trial.steps_completed,
                "robustness_trace": trial.robustness_trace,
                "min_margin": trial.min_margin,
                "min_clearance": trial.min_clearance,
                "footholds": [list(map(float, f)) for f in trial.footholds],
                "stats": trial.stats,
                "message": trial.message,
            },
        )
        _key_values(
            "Simulación",
            {
                "resultado": trial.outcome.value,
                "pasos": trial.steps_completed,
                "pasos hasta recuperar": trial.steps_to_recovery,
                "margen mínimo": trial.min_margin,
                "holgura mínima [m]": trial.min_clearance,
            },
        )
        if trial.outcome is Outcome.SOLVER_BREAKDOWN:
            raise typer.Exit(code=2)


def sweep(config: ConfigOption = None, workers: WorkersOption = None, mode: ModeOption = None) -> None:
    """Rejilla omnidireccional de empujones; una fila por ensayo."""
    with _cli_errors():
        cfg = load_config(config)
        mode_value = _mode(cfg, mode)
        result = sweep_omnidirectional(cfg, _surrogate_for(cfg, mode_value), mode=mode_value, workers=workers)
        out = cfg.output_path
        result.write_csv(out / "sweep.csv")
        result.write_max_force_csv(out / "sweep_max_force.csv")
        result.write_anomalies_csv(out / "sweep_anomalies.csv")
        recovered = sum(1 for row in result.rows if row["outcome"] == Outcome.RECOVERED.value)
        console.print(f"✅ {len(result.rows)} ensayos, {recovered} recuperados → {out / 'sweep.csv'}")


def stones(config: ConfigOption = None) -> None:
    """Escenario de piedras; sale con 2 si algún hueco es inalcanzable o un apoyo cae fuera."""
    with _cli_errors():
        cfg = load_config(config)
        report = run_stones_scenario(cfg, _surrogate_for(cfg, _mode(cfg, None)))
        out = cfg.output_path
        payload: Dict[str, Any] = {
            "feasible": report.feasible,
            "unreachable_gap": report.unreachable_gap,
            "foothold_robustness": report.foothold_robustness,
            "foothold_margins": report.foothold_margins,
        }
        if report.trial is not None:
            payload["outcome"] = report.trial.outcome.value
            payload["footholds"] = [list(map(float, f)) for f in report.trial.footholds]
            if report.trial.trajectory is not None:
                report.trial.trajectory.write_csv(out / "stones_trajectory.csv")
        _write_json(out / "stones.json", payload)
        if report.unreachable_gap is not None:
            i, j, gap = report.unreachable_gap
            console.print(f"[red]❌ Inviable: hueco de {gap:.3f} m entre las piedras {i} y {j}[/red]")
            raise typer.Exit(code=2)
        if not report.feasible:
            console.print(f"[red]❌ Apoyos fuera de las piedras (ρ={report.foothold_robustness})[/red]")
            raise typer.Exit(code=2)
        console.print(f"✅ {len(report.foothold_margins)} apoyos sobre piedras, ρ={report.foothold_robustness:.4f}")


def _metrics_table(title: str, rows) -> None:
    table = Table(title=title)
    table.add_column("par")
    table.add_column("error máx [m]", justify="right")
    table.add_column("error medio [m]", justify="right")
    for name, mx, mn in rows:
        table.add_row(name, f"{mx:.5f}", f"{mn:.5f}")
    console.print(table)


def train_mlp(
    config: ConfigOption = None,
    samples: Annotated[Optional[int], typer.Option(min=1, help="Tamaño del dataset")] = None,
    epochs: Annotated[Optional[int], typer.Option(min=1, help="Épocas de entrenamiento")] = None,
    save_dataset: Annotated[bool, typer.Option("--save-dataset", help="Escribir el dataset en CSV")] = False,
) -> None:
    """Genera el dataset con el oráculo analítico y entrena las seis redes."""
    with _cli_errors():
        cfg = load_config(config)
        updates = {key: value for key, value in (("dataset_size", samples), ("epochs", epochs)) if value is not None}
        hyper = cfg.surrogate.model_copy(update=updates)
        geometry = LegGeometryModel(hyper.geometry, cfg.model.z0)
        dataset = generate_dataset(geometry, hyper.dataset_size, hyper, cfg.seed)
        if save_dataset:
            dataset.to_csv(cfg.output_path / "collision_dataset.csv")
        surrogate, metrics = train_surrogates(dataset, hyper, cfg.seed)
        path = weights_path(cfg)
        surrogate.save(path)
        _metrics_table("Error en el conjunto de prueba", metrics.as_rows())
        console.print(f"💾 Pesos en {path} (dataset sha256 {dataset.checksum()[:12]})")
        if not metrics.meets():
            console.print("[yellow]⚠️ Fuera del objetivo de error (0.03 m máx, 0.005 m medio)[/yellow]")


def eval_mlp(
    config: ConfigOption = None,
    samples: Annotated[int, typer.Option(min=1, help="Consultas de evaluación")] = 20_000,
) -> None:
    """Error sobre datos nuevos, verificación de gradientes y velocidad frente al oráculo denso."""
    with _cli_errors():
        cfg = load_config(config)
        surrogate = DistanceSurrogate.load(weights_path(cfg))
        geometry = LegGeometryModel(cfg.surrogate.geometry, cfg.model.z0)
        dataset = generate_dataset(geometry, samples, cfg.surrogate, cfg.seed + 1)
        metrics = evaluate_surrogate(surrogate, dataset)
        grad_error = gradient_check(surrogate, dataset.features[:200])
        speed = oracle_benchmark(surrogate, geometry, dataset.features)
        _metrics_table("Error sobre datos nuevos", metrics.as_rows())
        _key_values(
            "Sustituto",
            {
                "error relativo de gradiente": grad_error,
                "sustituto [s/consulta]": speed.surrogate_seconds,
                "oráculo denso [s/consulta]": speed.oracle_seconds,
                "aceleración": speed.speedup,
            },
        )
        path = cfg.output_path / "eval_mlp.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["pair,max_abs_error,mean_abs_error"] + [f"{n},{mx:.9f},{mn:.9f}" for n, mx, mn in metrics.as_rows()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        ok = metrics.meets() and grad_error <= 1e-4 and speed.speedup >= 100.0
        console.print("✅ Sustituto dentro de objetivo" if ok else "[yellow]⚠️ Sustituto fuera de objetivo[/yellow]")


def check_riemannian(config: ConfigOption = None) -> None:
    """Autocomprobación de las identidades de la carta (σ, ζ) y del margen en el centro."""
    with _cli_errors():
        cfg = load_config(config)
        residuals = self_check(cfg.model, cfg.gait, cfg.region, seed=cfg.seed)
        _key_values("Identidades de la carta", residuals)
        failed = [
            name
            for name, ok in (
                ("sigma_conservation", residuals["sigma_conservation"] <= IDENTITY_TOLERANCE),
                ("gradient_orthogonality", residuals["gradient_orthogonality"] <= IDENTITY_TOLERANCE),
                ("center_margin", abs(residuals["center_margin"] - cfg.region.margin_unit) <= IDENTITY_TOLERANCE),
            )
            if not ok
        ]
        if failed:
            console.print(f"[red]❌ Fallan: {', '.join(failed)}[/red]")
            raise typer.Exit(code=2)
        console.print("✅ Identidades verificadas")


def parse_stl_command(
    text: Annotated[Optional[str], typer.Argument(help="Fórmula, p. ej. 'G[0,20] foot_left'")] = None,
    config: ConfigOption = None,
    dump: Annotated[bool, typer.Option("--dump", help="Imprimir las especificaciones generadas")] = False,
) -> None:
    """Analiza una fórmula con los predicados con nombre y la vuelve a imprimir."""
    with _cli_errors():
        cfg = load_config(config)
        spec = SpecConfig.from_settings(cfg, StanceParity.LEFT)
        if text is None and not dump:
            raise ValueError("indique una fórmula o --dump")
        if text is not None:
            formula = parse_stl(text, build_registry(spec))
            console.print(format_formula(formula), markup=False, soft_wrap=True)
            console.print(f"nodos={node_count(formula)} horizonte={horizon(formula)}")
        if dump:
            for name, formula_text in dump_specs(spec).items():
                console.print(f"{name} := {formula_text}", markup=False, soft_wrap=True)


def plot(
    kind: Annotated[str, typer.Argument(help="phase_space | polar | landscape")],
    source: Annotated[Optional[Path], typer.Option("--source", "-s", help="trajectory.csv o sweep.csv")] = None,
    config: ConfigOption = None,
) -> None:
    """Emite CSV (siempre) y SVG (si se puede) bajo output_dir/plots."""
    with _cli_errors():
        cfg = load_config(config)
        for path in emit_plots(cfg, kind, source):
            console.print(f"💾 {path}")


def soak(
    config: ConfigOption = None,
    replans: Annotated[int, typer.Option(min=1, help="Replanteos a acumular")] = 500,
    fault_every: Annotated[int, typer.Option(min=0, help="Inyectar un fallo cada N replanteos (0 = nunca)")] = 100,
) -> None:
    """Empujones aleatorios con fallos inyectados; informa la tasa de inviabilidad."""
    with _cli_errors():
        cfg = load_config(config)
        report = run_soak(cfg, _surrogate_for(cfg, _mode(cfg, None)), replans, cfg.seed, fault_every)
        payload = {
            "replans": report.replans,
            "infeasible": report.infeasible,
            "infeasible_rate": report.infeasible_rate,
            "failures": report.failures,
            "fallbacks": report.fallbacks,
            "injected": report.injected,
            "trials": report.trials,
            "outcomes": report.outcomes,
        }
        _write_json(cfg.output_path / "soak.json", payload)
        _key_values("Resistencia", {k: v for k, v in payload.items() if k != "outcomes"})


def ablations(config: ConfigOption = None, workers: WorkersOption = None) -> None:
    """ρ exacto tras el empujón por modo de ablación y dirección."""
    with _cli_errors():
        cfg = load_config(config)
        report = compare_ablations(cfg, _surrogate_for(cfg, AblationMode.FULL), workers=workers)
        report.write_csv(cfg.output_path / "ablations.csv")
        table = Table(title="Ablaciones")
        for column in ("modo", "dirección", "mín", "mediana", "máx"):
            table.add_column(column)
        for row in report.table():
            table.add_row(row["mode"], f"{row['direction']:.0f}", f"{row['min']:.4f}", f"{row['median']:.4f}", f"{row['max']:.4f}")
        console.print(table)


def register(app: typer.Typer) -> None:
    """Añade los comandos a la aplicación."""
    app.command("plan")(plan)
    app.command("simulate")(simulate)
    app.command("sweep")(sweep)
    app.command("stones")(stones)
    app.command("train-mlp")(train_mlp)
    app.command("eval-mlp")(eval_mlp)
    app.command("check-riemannian")(check_riemannian)
    app.command("parse-stl")(parse_stl_command)
    app.command("plot")(plot)
    app.command("soak")(soak)
    app.command("ablations")(ablations)
