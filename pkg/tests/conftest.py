# tests/conftest.py
import numpy as np
import pytest

from src.config.settings import ExperimentConfig, load_config
from src.core.capsules import LegGeometryModel
from src.core.dynamics import StanceParity, nominal_step
from src.core.stl_formula import (
    Signal,
    always,
    conj,
    disj,
    eventually,
    linear_predicate,
    negate,
    pred,
    until,
)
from src.services.nlp_transcription import knot_anchors
from src.services.spec_builder import SpecConfig
from src.services.surrogate_service import generate_dataset, train_surrogates

CHANNEL_PREDICATES = [
    linear_predicate(f"c{i}_{tag}", sign * np.eye(3)[i], offset)
    for i in range(3)
    for tag, sign, offset in (("ge", 1.0, -0.1), ("le", -1.0, -0.2))
]


def random_formula(rng: np.random.Generator, depth: int):
    """Fórmula aleatoria con los siete operadores; horizonte ≤ 6 por nivel."""
    if depth == 0 or rng.random() < 0.2:
        return pred(CHANNEL_PREDICATES[rng.integers(len(CHANNEL_PREDICATES))])
    op = rng.integers(7)
    a = int(rng.integers(0, 4))
    b = a + int(rng.integers(0, 3))
    sub = lambda: random_formula(rng, depth - 1)  # noqa: E731
    if op == 0:
        return pred(CHANNEL_PREDICATES[rng.integers(len(CHANNEL_PREDICATES))])
    if op == 1:
        return negate(sub())
    if op == 2:
        return conj(*[sub() for _ in range(int(rng.integers(2, 4)))])
    if op == 3:
        return disj(*[sub() for _ in range(int(rng.integers(2, 4)))])
    if op == 4:
        return eventually(a, b, sub())
    if op == 5:
        return always(a, b, sub())
    return until(a, b, sub(), sub())


@pytest.fixture(scope="session")
def stl_corpus():
    """1000 pares (fórmula, señal) de longitud 21 y 3 canales."""
    rng = np.random.default_rng(7)
    return [(random_formula(rng, 3), Signal(rng.normal(0.0, 0.5, (21, 3)))) for _ in range(1000)]


@pytest.fixture
def cfg(tmp_path) -> ExperimentConfig:
    return load_config(None, output_dir=str(tmp_path / "out"))


@pytest.fixture
def spec(cfg) -> SpecConfig:
    return SpecConfig.from_settings(cfg, StanceParity.LEFT)


def nominal_rows(cfg: ExperimentConfig, spec: SpecConfig) -> np.ndarray:
    """Estados nominales (M, 9) del horizonte, un paso por ventana, en el marco de cada apoyo."""
    rows = [nominal_step(cfg.model, cfg.gait, parity, spec.knots_per_step) for parity in spec.parity_schedule]
    return np.vstack(rows)


@pytest.fixture
def nominal_signal(cfg, spec) -> Signal:
    X = nominal_rows(cfg, spec)
    U = np.zeros((len(X), 3))
    return Signal(np.hstack([X, U]), knot_anchors(X, spec, (0.0, 0.0)))


@pytest.fixture(scope="session")
def quick_surrogate():
    """Sustituto pequeño, entrenado en segundos, sólo para pruebas de integración."""
    cfg = ExperimentConfig()
    hyper = cfg.surrogate.model_copy(update={"dataset_size": 4000, "epochs": 30, "batch_size": 128})
    geometry = LegGeometryModel(hyper.geometry, cfg.model.z0)
    dataset = generate_dataset(geometry, hyper.dataset_size, hyper, seed=3)
    surrogate, metrics = train_surrogates(dataset, hyper, seed=3)
    return surrogate, dataset, metrics
