# tests/test_dynamics.py
import numpy as np
import pytest

from src.config.settings import load_config
from src.core.dynamics import (
    AugmentedState,
    DynamicsError,
    GuardViolationError,
    StanceParity,
    detect_keyframe,
    discrete_jacobians,
    flow_analytic,
    interpolate_keyframe,
    nominal_foothold,
    nominal_step,
    read_trajectory_csv,
    reset_map,
    step_vector,
    write_trajectory_csv,
)


def _taylor_error(x: np.ndarray, dt: float, omega: float) -> float:
    taylor = step_vector(x, np.zeros(3), dt, omega)
    p, v = flow_analytic(x[0:2], x[3:5], dt, omega)
    return float(max(np.max(np.abs(taylor[0:2] - p)), np.max(np.abs(taylor[3:5] - v))))


def test_parity_side_and_flip():
    assert StanceParity.LEFT.side == -1.0
    assert StanceParity.RIGHT.side == 1.0
    assert StanceParity.LEFT.flipped() is StanceParity.RIGHT


def test_taylor_step_is_third_order_accurate(cfg):
    w = cfg.model.omega
    x = np.array([-0.1, 0.11, 0.8, 0.6, -0.3, 0.0, 0.1, -0.2, 0.0])
    dt = cfg.gait.step_duration / 7
    coarse = _taylor_error(x, dt, w)
    fine = _taylor_error(x, dt / 2, w)
    assert coarse < 2e-3
    assert coarse / fine >= 7.0


def test_swing_foot_moves_with_control():
    x = np.zeros(9)
    out = step_vector(x, np.array([1.0, -0.5, 0.2]), 0.1, 3.5)
    np.testing.assert_allclose(out[6:9], [0.1, -0.05, 0.02])


def test_discrete_jacobians_match_finite_differences(cfg):
    w = cfg.model.omega
    x = np.array([-0.12, 0.09, 0.8, 0.55, -0.2, 0.0, 0.2, -0.1, 0.05])
    u = np.array([0.4, -0.3, 0.1])
    dt = 0.06
    A, B, d = discrete_jacobians(x, u, dt, w)
    h = 1e-6
    for j in range(9):
        e = np.zeros(9)
        e[j] = h
        fd = (step_vector(x + e, u, dt, w) - step_vector(x - e, u, dt, w)) / (2 * h)
        np.testing.assert_allclose(A[:, j], fd, atol=1e-7)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (step_vector(x, u + e, dt, w) - step_vector(x, u - e, dt, w)) / (2 * h)
        np.testing.assert_allclose(B[:, j], fd, atol=1e-7)
    fd = (step_vector(x, u, dt + h, w) - step_vector(x, u, dt - h, w)) / (2 * h)
    np.testing.assert_allclose(d, fd, atol=1e-6)


def test_reset_requires_foot_on_ground():
    x = AugmentedState([0.1, -0.1, 0.8], [0.6, 0.0, 0.0], [0.25, -0.27, 0.05])
    with pytest.raises(GuardViolationError):
        reset_map(x, StanceParity.LEFT)


def test_reset_reanchors_frame_and_flips_parity():
    x = AugmentedState([0.1, -0.1, 0.8], [0.6, 0.2, 0.0], [0.25, -0.27, 0.0])
    x_plus, parity = reset_map(x, StanceParity.LEFT)
    assert parity is StanceParity.RIGHT
    np.testing.assert_allclose(x_plus.p_com, [-0.15, 0.17, 0.8])
    np.testing.assert_allclose(x_plus.v_com, x.v_com)
    np.testing.assert_allclose(x_plus.p_swing, [-0.25, 0.27, 0.0])


def test_nominal_gait_is_periodic_through_reset(cfg):
    left = nominal_step(cfg.model, cfg.gait, StanceParity.LEFT, 7)
    right = nominal_step(cfg.model, cfg.gait, StanceParity.RIGHT, 7)
    x_plus, parity = reset_map(AugmentedState.from_vector(left[-1]), StanceParity.LEFT, cfg.model)
    assert parity is StanceParity.RIGHT
    np.testing.assert_allclose(x_plus.to_vector(), right[0], atol=1e-9)


def test_reset_keeps_heights_on_raised_terrain():
    cfg = load_config(None, model={"terrain_height": 0.05})
    left = nominal_step(cfg.model, cfg.gait, StanceParity.LEFT, 7)
    right = nominal_step(cfg.model, cfg.gait, StanceParity.RIGHT, 7)
    x = AugmentedState.from_vector(left[-1])
    for _ in range(4):
        x, _ = reset_map(x, StanceParity.LEFT, cfg.model)
        assert x.p_swing[2] == pytest.approx(0.05)
        assert x.p_com[2] == pytest.approx(cfg.model.z0)
    x_plus, _ = reset_map(AugmentedState.from_vector(left[-1]), StanceParity.LEFT, cfg.model)
    np.testing.assert_allclose(x_plus.to_vector(), right[0], atol=1e-9)


def test_nominal_foothold_values(cfg):
    foothold = nominal_foothold(cfg.model, cfg.gait, StanceParity.LEFT)
    assert foothold[0] == pytest.approx(0.2602, abs=1e-3)
    assert foothold[1] == pytest.approx(-0.2764, abs=1e-3)
    assert nominal_foothold(cfg.model, cfg.gait, StanceParity.RIGHT)[1] == pytest.approx(-foothold[1])


def test_keyframe_detection_and_interpolation(cfg):
    rows = nominal_step(cfg.model, cfg.gait, StanceParity.LEFT, 8)
    index = detect_keyframe(rows)
    assert index == 4
    apex = interpolate_keyframe(rows, index)
    assert abs(apex[0]) < 1e-12
    assert apex[3] == pytest.approx(cfg.gait.apex_velocity, abs=1e-2)


def test_keyframe_absent_returns_none():
    rows = [np.array([-0.2 + 0.01 * k, 0, 0.8, 0.5, 0, 0, 0, 0, 0]) for k in range(5)]
    assert detect_keyframe(rows) is None


def test_state_rejects_non_finite_values():
    with pytest.raises(DynamicsError):
        AugmentedState([np.nan, 0.0, 0.8], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        flow_analytic(0.0, 0.5, -0.1, 3.5)


def test_trajectory_csv_keeps_columns(tmp_path, cfg):
    rows = nominal_step(cfg.model, cfg.gait, StanceParity.RIGHT, 7)
    controls = np.full((7, 3), 0.25)
    times = np.linspace(0.0, 0.4, 7)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, times, rows, controls, [StanceParity.RIGHT] * 7)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("knot,time,p_com_x")
    assert header.endswith("u_z,parity")
    t, x, u, parities = read_trajectory_csv(path)
    np.testing.assert_allclose(x, rows, atol=1e-9)
    np.testing.assert_allclose(u, controls)
    assert parities == [StanceParity.RIGHT] * 7
