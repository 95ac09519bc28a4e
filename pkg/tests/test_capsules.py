# tests/test_capsules.py
import numpy as np
import pytest

from src.core.capsules import (
    MIRROR_PERMUTATION,
    PAIR_NAMES,
    Capsule,
    LegGeometryModel,
    batch_pair_distances,
    capsule_distance,
    collision_landscape,
    mirror_features,
    sampled_capsule_distance,
)
from src.core.dynamics import StanceParity


@pytest.fixture
def geometry(cfg) -> LegGeometryModel:
    return LegGeometryModel(cfg.surrogate.geometry, cfg.model.z0)


def test_crossing_segments():
    a = Capsule([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.1)
    b = Capsule([0.0, -1.0, 1.0], [0.0, 1.0, 1.0], 0.1)
    assert capsule_distance(a, b) == pytest.approx(0.8)


def test_parallel_and_degenerate_segments():
    a = Capsule([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], 0.05)
    b = Capsule([0.5, 0.3, 0.0], [1.5, 0.3, 0.0], 0.05)
    assert capsule_distance(a, b) == pytest.approx(0.2)
    point = Capsule([2.0, 0.0, 0.0], [2.0, 0.0, 0.0], 0.05)
    assert capsule_distance(a, point) == pytest.approx(0.9)
    assert capsule_distance(a, Capsule([0.5, 0.02, 0.0], [0.5, 0.02, 0.0], 0.05)) < 0.0


def test_analytic_matches_dense_sampling():
    rng = np.random.default_rng(8)
    for _ in range(40):
        ends = rng.uniform(-0.5, 0.5, (4, 3))
        a = Capsule(ends[0], ends[1], 0.02)
        b = Capsule(ends[2], ends[3], 0.03)
        exact = capsule_distance(a, b)
        sampled = sampled_capsule_distance(a, b, 2000)
        assert exact <= sampled + 1e-12
        assert sampled - exact <= 1e-3


def test_leg_pairs_match_sampled_oracle(geometry):
    com = np.array([0.05, -0.11, 0.8])
    swing = np.array([0.2, -0.25, 0.05])
    exact = geometry.pair_distances(com, swing, StanceParity.LEFT)
    sampled = geometry.sampled_pair_distances(com, swing, StanceParity.LEFT, 1000)
    assert exact.shape == (len(PAIR_NAMES),)
    assert np.all(sampled - exact <= 1e-3)


def test_mirror_permutation_maps_right_stance_to_left(geometry):
    rng = np.random.default_rng(1)
    for _ in range(20):
        features = np.array(
            [rng.uniform(-0.2, 0.2), rng.uniform(0.0, 0.2), rng.uniform(-0.4, 0.4), rng.uniform(-0.1, 0.5), rng.uniform(0.0, 0.15)]
        )
        right = geometry.pair_distances(features[:2], features[2:5], StanceParity.RIGHT)
        mirrored = mirror_features(features)
        left = geometry.pair_distances(mirrored[:2], mirrored[2:5], StanceParity.LEFT)
        np.testing.assert_allclose(right, left[list(MIRROR_PERMUTATION)], atol=1e-12)


def test_batch_matches_scalar_oracle(geometry):
    rng = np.random.default_rng(2)
    features = np.column_stack(
        [
            rng.uniform(-0.3, 0.3, 64),
            rng.uniform(-0.3, 0.1, 64),
            rng.uniform(-0.5, 0.5, 64),
            rng.uniform(-0.6, 0.2, 64),
            rng.uniform(0.0, 0.2, 64),
        ]
    )
    batch = batch_pair_distances(geometry, features)
    scalar = np.array([geometry.pair_distances(f[:2], f[2:5], StanceParity.LEFT) for f in features])
    np.testing.assert_allclose(batch, scalar, atol=1e-9)


def test_swing_foot_through_stance_leg_collides(geometry):
    assert geometry.min_distance(np.array([0.0, -0.11, 0.8]), np.array([0.06, 0.0, 0.1]), StanceParity.LEFT) < 0.0


def test_landscape_grid_shape(geometry):
    xs, ys, grid = collision_landscape(geometry, np.array([0.0, -0.11, 0.8]), resolution=(5, 4))
    assert xs.shape == (5,)
    assert ys.shape == (4,)
    assert grid.shape == (4, 5)
    assert np.all(np.isfinite(grid))
