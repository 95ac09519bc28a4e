# tests/test_locomotion_specs.py
from dataclasses import replace

import numpy as np
import pytest

from src.core.dynamics import StanceParity, nominal_foothold
from src.core.robustness import robustness
from src.core.stl_formula import Signal, horizon
from src.core.stl_parser import parse_stl
from src.services.spec_builder import (
    SpecBuildError,
    SpecConfig,
    StoneRect,
    build_phi_keyframe,
    build_phi_loco,
    build_phi_loco_stones,
    build_phi_stones,
    build_registry,
    dump_specs,
    stone_predicates,
)


def _nominal_stones(cfg, half_extents=(0.12, 0.18)):
    left = nominal_foothold(cfg.model, cfg.gait, StanceParity.LEFT)[:2]
    right = nominal_foothold(cfg.model, cfg.gait, StanceParity.RIGHT)[:2]
    centers = [left, left + right, 2 * left + right]
    return tuple(StoneRect((float(c[0]), float(c[1])), 0.0, half_extents) for c in centers)


def test_horizon_layout(spec):
    assert spec.horizon_knots == 21
    assert spec.contact_knots == [6, 13, 20]
    assert spec.parity_schedule == (StanceParity.LEFT, StanceParity.RIGHT, StanceParity.LEFT)
    assert spec.step_of(13) == 1
    assert spec.with_parity(StanceParity.RIGHT).parity_schedule[0] is StanceParity.RIGHT
    assert horizon(build_phi_loco(spec)) == 20


def test_invalid_spec_config_rejected(spec):
    with pytest.raises(SpecBuildError):
        replace(spec, horizon_knots=20)
    with pytest.raises(SpecBuildError):
        replace(spec, e_left=-0.6)
    with pytest.raises(SpecBuildError):
        replace(spec, parity_schedule=(StanceParity.LEFT,))
    with pytest.raises(SpecBuildError):
        StoneRect((0.0, 0.0), 0.0, (0.0, 0.1))


def test_nominal_gait_satisfies_loco(spec, nominal_signal):
    assert robustness(build_phi_loco(spec), nominal_signal) == pytest.approx(0.1, abs=1e-6)


def test_keyframe_holds_at_nominal_apex(spec, nominal_signal):
    assert robustness(build_phi_keyframe(spec), nominal_signal, 17) == pytest.approx(0.0, abs=1e-9)
    assert robustness(build_phi_keyframe(spec), nominal_signal, 14) < 0.0


def test_foot_outside_lane_is_violation(spec, nominal_signal):
    samples = np.array(nominal_signal.samples)
    samples[3, 7] -= 0.4
    broken = Signal(samples, nominal_signal.anchors)
    assert robustness(build_phi_loco(spec), broken) == pytest.approx(-0.176, abs=1e-3)


def test_stones_robustness_at_nominal_footholds(cfg, spec, nominal_signal):
    stoned = replace(spec, stones=_nominal_stones(cfg))
    assert robustness(build_phi_stones(stoned), nominal_signal) == pytest.approx(0.12, abs=1e-9)
    assert robustness(build_phi_loco_stones(stoned), nominal_signal) == pytest.approx(0.1, abs=1e-6)


def test_stones_required(spec):
    with pytest.raises(SpecBuildError):
        build_phi_stones(spec)


def test_stone_edges_with_yaw():
    stone = StoneRect((1.0, 2.0), np.pi / 2, (0.2, 0.1))
    np.testing.assert_allclose(stone.edge_distances(np.array([1.0, 2.15])), [0.05, 0.35, 0.1, 0.1], atol=1e-12)
    assert stone.contains(np.array([1.0, 2.15]))
    assert not stone.contains(np.array([1.15, 2.0]))


def test_stone_predicates_agree_with_edges():
    rng = np.random.default_rng(9)
    stone = StoneRect((0.4, -0.1), 0.3, (0.15, 0.1))
    predicates = stone_predicates(stone, 0)
    for _ in range(20):
        y = np.zeros(12)
        y[6:8] = rng.uniform(-0.3, 0.3, 2)
        anchor = rng.uniform(0.0, 0.5, 2)
        values = [p.eval(y, anchor) for p in predicates]
        np.testing.assert_allclose(values, stone.edge_distances(anchor + y[6:8]), atol=1e-12)


def test_dumped_specs_reparse_with_same_robustness(cfg, spec, nominal_signal):
    stoned = replace(spec, stones=_nominal_stones(cfg))
    registry = build_registry(stoned)
    texts = dump_specs(stoned)
    assert set(texts) == {"phi_keyframe", "phi_stable", "phi_loco", "phi_stones"}
    built = {"phi_loco": build_phi_loco(stoned), "phi_stones": build_phi_stones(stoned)}
    for name, formula in built.items():
        reparsed = parse_stl(texts[name], registry)
        assert robustness(reparsed, nominal_signal) == pytest.approx(robustness(formula, nominal_signal), abs=1e-12)


def test_right_stance_spec_from_settings(cfg):
    right = SpecConfig.from_settings(cfg, StanceParity.RIGHT)
    assert right.parity_schedule == (StanceParity.RIGHT, StanceParity.LEFT, StanceParity.RIGHT)
    assert right.keyframe_tolerance == cfg.spec.keyframe_tolerance
