# tests/test_surrogate.py
import numpy as np
import pytest

from src.config.settings import SurrogateSettings
from src.core.capsules import MIRROR_PERMUTATION, LegGeometryModel, mirror_features
from src.core.dynamics import StanceParity
from src.services.surrogate_service import (
    DistanceSurrogate,
    UntrainedSurrogateError,
    WeightsFormatError,
    generate_dataset,
    gradient_check,
    load_or_none,
    oracle_benchmark,
)


@pytest.fixture
def geometry(cfg) -> LegGeometryModel:
    return LegGeometryModel(cfg.surrogate.geometry, cfg.model.z0)


def test_dataset_is_deterministic_per_seed(geometry):
    sampler = SurrogateSettings()
    a = generate_dataset(geometry, 200, sampler, seed=5)
    b = generate_dataset(geometry, 200, sampler, seed=5)
    c = generate_dataset(geometry, 200, sampler, seed=6)
    assert a.checksum() == b.checksum()
    assert a.checksum() != c.checksum()
    assert a.features.shape == (200, 5)
    assert a.labels.shape == (200, 6)
    assert np.all(a.features[:, 4] >= 0.0)


def test_split_sizes(geometry):
    data = generate_dataset(geometry, 100, SurrogateSettings(), seed=1)
    train, test = data.split(0.1, seed=0)
    assert (len(train), len(test)) == (90, 10)
    with pytest.raises(ValueError):
        generate_dataset(geometry, 0, SurrogateSettings(), seed=1)


def test_trained_surrogate_beats_mean_predictor(quick_surrogate):
    surrogate, dataset, metrics = quick_surrogate
    baseline = np.abs(dataset.labels - dataset.labels.mean(axis=0)).mean(axis=0)
    assert metrics.mean_abs_error.mean() < 0.5 * baseline.mean()
    assert len(metrics.as_rows()) == 6


def test_weights_round_trip(tmp_path, quick_surrogate):
    surrogate, dataset, _ = quick_surrogate
    path = tmp_path / "mlp.bin"
    surrogate.save(path)
    loaded = DistanceSurrogate.load(path)
    np.testing.assert_array_equal(loaded.predict(dataset.features[:50]), surrogate.predict(dataset.features[:50]))
    assert loaded.dims == surrogate.dims


def test_corrupt_weights_are_rejected(tmp_path, quick_surrogate):
    surrogate, _, _ = quick_surrogate
    path = tmp_path / "mlp.bin"
    surrogate.save(path)
    blob = path.read_bytes()

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXX" + blob[4:])
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(blob[:-8])
    padded = tmp_path / "long.bin"
    padded.write_bytes(blob + b"\x00")
    for broken in (bad_magic, truncated, padded):
        with pytest.raises(WeightsFormatError):
            DistanceSurrogate.load(broken)


def test_missing_weights(tmp_path):
    with pytest.raises(UntrainedSurrogateError):
        DistanceSurrogate.load(tmp_path / "none.bin")
    assert load_or_none(tmp_path / "none.bin") is None


def test_backprop_gradient_matches_finite_differences(quick_surrogate):
    surrogate, dataset, _ = quick_surrogate
    assert gradient_check(surrogate, dataset.features[:100]) <= 1e-4


def test_right_stance_uses_mirrored_network(quick_surrogate):
    surrogate, dataset, _ = quick_surrogate
    features = mirror_features(dataset.features[:10])
    right = surrogate.eval_grad_parity(features, np.ones(10, dtype=bool))[0]
    expected = surrogate.predict(mirror_features(features))[:, list(MIRROR_PERMUTATION)]
    np.testing.assert_allclose(right, expected, atol=1e-12)
    row = features[0]
    single = surrogate.distances(row[:2], row[2:5], StanceParity.RIGHT)
    np.testing.assert_allclose(single, expected[0], atol=1e-12)


def test_right_stance_gradient_matches_finite_differences(quick_surrogate):
    surrogate, dataset, _ = quick_surrogate
    x = mirror_features(dataset.features[3:4])
    flags = np.array([True])
    _, grads = surrogate.eval_grad_parity(x, flags)
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        fd = (surrogate.eval_grad_parity(x + e, flags)[0] - surrogate.eval_grad_parity(x - e, flags)[0]) / (2 * h)
        np.testing.assert_allclose(grads[0, :, i], fd[0], rtol=1e-4, atol=1e-7)


def test_surrogate_is_much_faster_than_dense_oracle(geometry, quick_surrogate):
    surrogate, dataset, _ = quick_surrogate
    report = oracle_benchmark(surrogate, geometry, dataset.features[:2000], oracle_queries=3, samples=2000)
    assert report.speedup >= 100.0
    assert report.queries == 2000
