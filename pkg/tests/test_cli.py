# tests/test_cli.py
from pathlib import Path

import orjson
import pytest
import yaml
from typer.testing import CliRunner

from src import __version__
from src.main import app, run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
runner = CliRunner()


def _config(tmp_path, **extra) -> Path:
    data = {"output_dir": str(tmp_path / "out")}
    data.update(extra)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_version():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert f"locostl {__version__}" in result.output


def test_parse_stl_prints_formula():
    result = runner.invoke(app, ["parse-stl", "G[0,20] foot_left"])
    assert result.exit_code == 0
    assert "G[0,20] foot_left" in result.output
    assert "nodos=2 horizonte=20" in result.output


@pytest.mark.parametrize("text", ["G[0,20] pie_izquierdo", "G[5,2] foot_left", "foot_left &"])
def test_parse_stl_rejects_bad_formula(text):
    assert runner.invoke(app, ["parse-stl", text]).exit_code == 1


def test_parse_stl_needs_input():
    assert runner.invoke(app, ["parse-stl"]).exit_code == 1


def test_parse_stl_dump():
    result = runner.invoke(app, ["parse-stl", "--dump"])
    assert result.exit_code == 0
    assert "phi_loco := " in result.output
    assert "phi_stones" not in result.output


def test_check_riemannian_passes():
    result = runner.invoke(app, ["check-riemannian"])
    assert result.exit_code == 0
    assert "Identidades verificadas" in result.output


def test_invalid_config_exits_1(tmp_path):
    path = _config(tmp_path, gait={"step_duration": -1.0})
    assert runner.invoke(app, ["check-riemannian", "--config", str(path)]).exit_code == 1
    path = _config(tmp_path, spec={"bogus": True})
    assert runner.invoke(app, ["plan", "--config", str(path)]).exit_code == 1


def test_plan_without_weights_exits_2(tmp_path):
    result = runner.invoke(app, ["plan", "--config", str(_config(tmp_path))])
    assert result.exit_code == 2


def test_eval_without_weights_exits_2(tmp_path):
    assert runner.invoke(app, ["eval-mlp", "--config", str(_config(tmp_path))]).exit_code == 2


def test_unreachable_stones_exit_2(tmp_path):
    stones = yaml.safe_load((CONFIGS / "stones_infeasible.yaml").read_text(encoding="utf-8"))["spec"]
    path = _config(tmp_path, spec=stones, mpc={"mode": "no-collision"})
    result = runner.invoke(app, ["stones", "--config", str(path)])
    assert result.exit_code == 2
    payload = orjson.loads((tmp_path / "out" / "stones.json").read_bytes())
    assert payload["feasible"] is False
    assert payload["unreachable_gap"][:2] == [0, 1]


def test_unknown_plot_kind_exits_1(tmp_path):
    assert runner.invoke(app, ["plot", "histograma", "--config", str(_config(tmp_path))]).exit_code == 1


def test_run_returns_exit_code():
    assert run(["parse-stl", "G[0,20] foot_left"]) == 0
    assert run(["parse-stl", "G[0,20] nada"]) == 1
