# tests/test_riemannian.py
import numpy as np
import pytest

from src.core.dynamics import StanceParity, flow_analytic
from src.core.riemannian import (
    ManifoldParams,
    OutOfChartError,
    RiemannianRegion,
    bound_distance_jacobian,
    bound_distances,
    chart_inverse,
    lateral_phase,
    phase_box,
    region_center,
    riem_margin,
    self_check,
    zeta,
)


@pytest.fixture
def region(cfg) -> RiemannianRegion:
    return RiemannianRegion.from_settings(cfg.model, cfg.gait, cfg.region)


def test_self_check_identities_hold(cfg):
    report = self_check(cfg.model, cfg.gait, cfg.region, seed=4, starts=20, points=200)
    assert report["sigma_conservation"] <= 1e-9
    assert report["gradient_orthogonality"] <= 1e-9
    assert report["center_margin"] == pytest.approx(cfg.region.margin_unit, abs=1e-9)


@pytest.mark.parametrize("parity", list(StanceParity))
def test_center_has_all_eight_margins_equal(cfg, region, parity):
    r = bound_distances(region_center(region, cfg.gait, parity), region, parity)
    assert r.shape == (8,)
    np.testing.assert_allclose(r, cfg.region.margin_unit, atol=1e-9)


def test_leaving_the_velocity_band_is_negative(cfg, region):
    k = region_center(region, cfg.gait, StanceParity.LEFT)
    k[2] = 1.1
    assert riem_margin(k, region, StanceParity.LEFT) < 0.0


def test_zeta_outside_chart_raises(region):
    mp = region.sagittal.manifold
    with pytest.raises(OutOfChartError):
        zeta(0.0, -0.3, mp)
    with pytest.raises(OutOfChartError):
        lateral_phase(0.1, 0.2, -0.11, 3.5)


def test_zeta_only_checks_velocity_sign(region):
    mp = region.sagittal.manifold
    assert zeta(0.0, mp.v0, mp) == 0.0
    assert np.sign(zeta(-0.05, mp.v0, mp)) == -np.sign(mp.zeta0 / mp.p0)


def test_off_chart_gets_penalty(cfg, region):
    k = np.array([0.0, -0.11, -0.4, 0.0])
    r = bound_distances(k, region, StanceParity.LEFT)
    assert r[2] == r[3] == cfg.region.off_chart_penalty


def test_chart_inverse_recovers_flow_time(region):
    mp = region.sagittal.manifold
    for t in (0.0, 0.1, 0.25, 0.4):
        p, v = flow_analytic(mp.p0, mp.v0, t, mp.omega)
        c, s = chart_inverse(float(p), float(v), mp)
        assert c == pytest.approx(np.cosh(mp.omega * t), abs=1e-9)
        assert s == pytest.approx(np.sinh(mp.omega * t), abs=1e-9)


def test_lateral_phase_is_sinh_on_nominal_orbit(cfg):
    w = cfg.model.omega
    apex = -cfg.gait.lateral_apex_offset
    for tau in (-0.2, -0.05, 0.0, 0.1, 0.2):
        p, v = flow_analytic(apex, 0.0, abs(tau), w)
        v = float(np.sign(tau) * v)
        assert lateral_phase(float(p), v, apex, w) == pytest.approx(np.sinh(w * tau), abs=1e-12)


def test_jacobian_matches_finite_differences(region):
    k = np.array([0.02, -0.1, 0.55, 0.05])
    r, J = bound_distance_jacobian(k, region, StanceParity.LEFT)
    h = 1e-7
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (bound_distances(k + e, region, StanceParity.LEFT) - bound_distances(k - e, region, StanceParity.LEFT)) / (2 * h)
        np.testing.assert_allclose(J[:, j], fd, rtol=1e-5, atol=1e-6)


def test_phase_box_contains_center(cfg, region):
    box = phase_box(region, StanceParity.LEFT, cfg.model.omega)
    assert box["p_x"][0] <= 0.0 <= box["p_x"][1]
    assert box["v_x"][0] <= cfg.gait.apex_velocity <= box["v_x"][1]
    assert box["p_y"][0] <= -cfg.gait.lateral_apex_offset <= box["p_y"][1]


def test_degenerate_manifold_rejected():
    with pytest.raises(ValueError):
        ManifoldParams(0.1, 0.35, 3.5)
