# src/services/plot_service.py
"""
Emisión de datos para gráficas: siempre un CSV y, si se puede, un SVG con
matplotlib (backend Agg, sin pantalla).
"""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..config.settings import ExperimentConfig  # noqa: E402
from ..core.capsules import LegGeometryModel, collision_landscape  # noqa: E402
from ..core.dynamics import StanceParity, read_trajectory_csv  # noqa: E402
from ..core.riemannian import RiemannianRegion, bound_polylines  # noqa: E402
from .simulation_service import summarize_sweep  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = ("phase_space", "polar", "landscape")

plt.rcParams["svg.hashsalt"] = "locostl"


class PlotError(ValueError):
    pass


def _write_rows(path: Path, header: List[str], rows: List[List[object]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _save_svg(fig, path: Path) -> Optional[Path]:
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
        return path
    except Exception as e:
        logger.warning(f"⚠️ No se pudo renderizar {path.name}: {e}")
        return None
    finally:
        plt.close(fig)


def phase_space(cfg: ExperimentConfig, trajectory_csv: Union[str, Path], out_dir: Path) -> List[Path]:
    """Curvas (p, v) sagital y lateral con las cotas riemannianas superpuestas."""
    times, states, _, parities = read_trajectory_csv(trajectory_csv)
    if len(times) == 0:
        raise PlotError(f"{trajectory_csv}: trayectoria vacía")
    rows = [[f"{t:.6f}", f"{x[0]:.9f}", f"{x[3]:.9f}", f"{x[1]:.9f}", f"{x[4]:.9f}", p.value] for t, x, p in zip(times, states, parities)]
    written = [_write_rows(out_dir / "phase_space.csv", ["time", "p_x", "v_x", "p_y", "v_y", "parity"], rows)]

    region = RiemannianRegion.from_settings(cfg.model, cfg.gait, cfg.region)
    bound_rows = []
    lines: Dict[StanceParity, List[Tuple[str, np.ndarray]]] = {}
    for parity in StanceParity:
        lines[parity] = bound_polylines(region, parity)
        for name, pts in lines[parity]:
            bound_rows.extend([[parity.value, name, f"{p:.9f}", f"{v:.9f}"] for p, v in pts])
    written.append(_write_rows(out_dir / "phase_space_bounds.csv", ["parity", "bound", "p", "v"], bound_rows))

    fig, (ax_sag, ax_lat) = plt.subplots(1, 2, figsize=(10, 4.5))
    ax_sag.plot(states[:, 0], states[:, 3], lw=1.2, color="k")
    ax_lat.plot(states[:, 1], states[:, 4], lw=1.2, color="k")
    for name, pts in lines[parities[0]]:
        ax = ax_sag if name.startswith("sag") else ax_lat
        if len(pts):
            ax.plot(pts[:, 0], pts[:, 1], lw=0.8, ls="--", label=name)
    ax_sag.set(xlabel="p_x [m]", ylabel="v_x [m/s]", title="Sagital", xlim=(-0.6, 0.6), ylim=(-0.5, 1.5))
    ax_lat.set(xlabel="p_y [m]", ylabel="v_y [m/s]", title="Lateral", xlim=(-0.6, 0.6), ylim=(-1.5, 1.5))
    ax_lat.legend(fontsize=6, loc="upper right")
    svg = _save_svg(fig, out_dir / "phase_space.svg")
    return written + ([svg] if svg else [])


def read_sweep_csv(path: Union[str, Path]) -> List[Dict[str, object]]:
    rows = []
    with open(path, "r", newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            rows.append(
                {
                    "direction": float(row["direction"]),
                    "phase": float(row["phase"]),
                    "magnitude": float(row["magnitude"]),
                    "outcome": row["outcome"],
                    "steps_to_recovery": int(row["steps_to_recovery"]) if row["steps_to_recovery"] else None,
                    "min_margin": float(row["min_margin"]),
                }
            )
    return rows


def polar(sweep_csv: Union[str, Path], out_dir: Path) -> List[Path]:
    """Polígono de fuerza máxima recuperable por dirección, uno por fase."""
    rows = read_sweep_csv(sweep_csv)
    if not rows:
        raise PlotError(f"{sweep_csv}: barrido vacío")
    max_force, _ = summarize_sweep(rows)
    table = [[f"{d:.1f}", f"{p:.2f}", "" if f is None else f"{f:.1f}"] for (d, p), f in sorted(max_force.items())]
    written = [_write_rows(out_dir / "polar.csv", ["direction", "phase", "max_force"], table)]

    fig = plt.figure(figsize=(5.5, 5.5))
    ax = fig.add_subplot(projection="polar")
    for phase in sorted({p for _, p in max_force}):
        cells = sorted((d, f or 0.0) for (d, p), f in max_force.items() if p == phase)
        theta = np.deg2rad([d for d, _ in cells] + [cells[0][0]])
        radius = [f for _, f in cells] + [cells[0][1]]
        ax.plot(theta, radius, marker="o", ms=3, label=f"fase {phase:.2f}")
    ax.set_theta_zero_location("N")
    ax.legend(fontsize=7, loc="lower right")
    svg = _save_svg(fig, out_dir / "polar.svg")
    return written + ([svg] if svg else [])


def landscape(
    cfg: ExperimentConfig,
    out_dir: Path,
    p_com: Optional[np.ndarray] = None,
    parity: StanceParity = StanceParity.LEFT,
    resolution: Tuple[int, int] = (51, 41),
) -> List[Path]:
    """Distancia mínima del oráculo sobre el rectángulo de 1 × 0.8 m² del pie en vuelo."""
    geometry = LegGeometryModel(cfg.surrogate.geometry, cfg.model.z0)
    if p_com is None:
        p_com = np.array([0.0, parity.side * cfg.gait.lateral_apex_offset, cfg.model.z0])
    y_range = (-0.6, 0.2) if parity is StanceParity.LEFT else (-0.2, 0.6)
    xs, ys, grid = collision_landscape(geometry, p_com, (-0.5, 0.5), y_range, resolution, 0.0, parity)
    rows = [[f"{x:.4f}", f"{y:.4f}", f"{grid[i, j]:.9f}"] for i, y in enumerate(ys) for j, x in enumerate(xs)]
    written = [_write_rows(out_dir / "landscape.csv", ["swing_x", "swing_y", "min_distance"], rows)]

    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(xs, ys, grid, shading="auto", cmap="viridis")
    ax.contour(xs, ys, grid, levels=[0.0, cfg.mpc.epsilon], colors=["r", "w"], linewidths=1.0)
    fig.colorbar(mesh, ax=ax, label="distancia mínima [m]")
    ax.set(xlabel="p_swing,x [m]", ylabel="p_swing,y [m]", aspect="equal")
    svg = _save_svg(fig, out_dir / "landscape.svg")
    return written + ([svg] if svg else [])


def emit_plots(
    cfg: ExperimentConfig, kind: str, source: Optional[Union[str, Path]] = None, out_dir: Optional[Union[str, Path]] = None
) -> List[Path]:
    """Despacha por tipo; `source` es la trayectoria CSV (phase_space) o el CSV del barrido (polar)."""
    out = Path(out_dir) if out_dir is not None else cfg.output_path / "plots"
    if kind not in PLOT_KINDS:
        raise PlotError(f"tipo de gráfica desconocido: {kind} (opciones: {', '.join(PLOT_KINDS)})")
    if kind == "landscape":
        return landscape(cfg, out)
    if source is None:
        raise PlotError(f"'{kind}' necesita un archivo de entrada")
    if kind == "phase_space":
        return phase_space(cfg, source, out)
    return polar(source, out)
