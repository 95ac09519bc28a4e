# tests/test_plots.py
import numpy as np
import pytest

from src.core.dynamics import StanceParity, nominal_step, write_trajectory_csv
from src.services.plot_service import PlotError, emit_plots, read_sweep_csv
from src.services.simulation_service import SweepResult, summarize_sweep


def test_phase_space_from_trajectory(cfg, tmp_path):
    rows = np.vstack([nominal_step(cfg.model, cfg.gait, p, 7) for p in (StanceParity.LEFT, StanceParity.RIGHT)])
    parities = [StanceParity.LEFT] * 7 + [StanceParity.RIGHT] * 7
    source = tmp_path / "trajectory.csv"
    write_trajectory_csv(source, np.linspace(0.0, 0.8, 14), rows, np.zeros((14, 3)), parities)
    written = emit_plots(cfg, "phase_space", source, tmp_path / "plots")
    names = {p.name for p in written}
    assert {"phase_space.csv", "phase_space_bounds.csv"} <= names
    lines = (tmp_path / "plots" / "phase_space.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "time,p_x,v_x,p_y,v_y,parity"
    assert len(lines) == 15


def test_polar_from_sweep(cfg, tmp_path):
    rows = [
        {"direction": d, "phase": 0.0, "magnitude": m, "outcome": "Recovered" if m <= 120.0 + d else "Fell", "steps_to_recovery": None, "min_margin": 0.0}
        for d in (0.0, 90.0, 180.0)
        for m in (80.0, 120.0, 160.0)
    ]
    max_force, anomalies = summarize_sweep(rows)
    source = SweepResult(rows, max_force, anomalies).write_csv(tmp_path / "sweep.csv")
    assert len(read_sweep_csv(source)) == 9
    emit_plots(cfg, "polar", source, tmp_path / "plots")
    lines = (tmp_path / "plots" / "polar.csv").read_text(encoding="utf-8").splitlines()
    assert lines[1:] == ["0.0,0.00,120.0", "90.0,0.00,160.0", "180.0,0.00,160.0"]


def test_landscape_grid(cfg, tmp_path):
    emit_plots(cfg, "landscape", None, tmp_path / "plots")
    lines = (tmp_path / "plots" / "landscape.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "swing_x,swing_y,min_distance"
    assert len(lines) == 51 * 41 + 1


def test_plot_errors(cfg, tmp_path):
    with pytest.raises(PlotError):
        emit_plots(cfg, "histogram", None, tmp_path)
    with pytest.raises(PlotError):
        emit_plots(cfg, "polar", None, tmp_path)
    empty = tmp_path / "empty.csv"
    empty.write_text("direction,phase,magnitude,outcome,steps_to_recovery,min_margin\n", encoding="utf-8")
    with pytest.raises(PlotError):
        emit_plots(cfg, "polar", empty, tmp_path)
