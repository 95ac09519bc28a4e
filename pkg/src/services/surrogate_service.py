# src/services/surrogate_service.py
"""
Sustituto aprendido de las distancias entre cápsulas: seis perceptrones
multicapa 5 → 24 → 24 → 1 con activación tanh, entrenados juntos.
"""
import csv
import hashlib
import logging
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from ..config.settings import SurrogateSettings
from ..core.capsules import MIRROR_PERMUTATION, PAIR_NAMES, LegGeometryModel, batch_pair_distances, mirror_features
from ..core.dynamics import StanceParity

logger = logging.getLogger(__name__)

FEATURE_NAMES = ("p_com_x", "p_com_y", "p_swing_x", "p_swing_y", "p_swing_z")
WEIGHTS_MAGIC = b"LCSM"
WEIGHTS_FORMAT_VERSION = 1
_MIRROR = np.diag([1.0, -1.0, 1.0, -1.0, 1.0])


class SurrogateError(Exception):
    pass


class UntrainedSurrogateError(SurrogateError):
    pass


class WeightsFormatError(SurrogateError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        digest.update(np.ascontiguousarray(self.labels, dtype="<f8").tobytes())
        return digest.hexdigest()

    def split(self, test_fraction: float, seed: int) -> Tuple["Dataset", "Dataset"]:
        order = np.random.default_rng(seed).permutation(len(self))
        n_test = max(1, int(round(test_fraction * len(self)))) if len(self) > 1 else 0
        test, train = order[:n_test], order[n_test:]
        return Dataset(self.features[train], self.labels[train]), Dataset(self.features[test], self.labels[test])

    def to_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(list(FEATURE_NAMES) + list(PAIR_NAMES))
            for x, y in zip(self.features, self.labels):
                writer.writerow([f"{value:.9f}" for value in np.concatenate([x, y])])


def generate_dataset(model: LegGeometryModel, n: int, sampler: SurrogateSettings, seed: int) -> Dataset:
    """Muestreo uniforme en la caja de trabajo, etiquetado con el oráculo analítico."""
    if n < 1:
        raise ValueError("n debe ser al menos 1")
    rng = np.random.default_rng(seed)
    ranges = (sampler.com_x_range, sampler.com_y_range, sampler.swing_x_range, sampler.swing_y_range, sampler.swing_z_range)
    low = np.array([r[0] for r in ranges])
    high = np.array([r[1] for r in ranges])
    features = low + (high - low) * rng.random((n, len(ranges)))
    labels = np.empty((n, len(PAIR_NAMES)))
    chunk = 50_000
    for start in tqdm(range(0, n, chunk), desc="oráculo", disable=n <= chunk):
        labels[start : start + chunk] = batch_pair_distances(model, features[start : start + chunk])
    logger.info(f"✅ Dataset generado: {n} configuraciones")
    return Dataset(features, labels)


@dataclass
class DistanceSurrogate:
    """
    Seis redes apiladas. weights[l] tiene forma (6, in, out) y biases[l] (6, out);
    capas ocultas con tanh y salida lineal, en unidades normalizadas.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    metadata: Dict[str, float] = field(default_factory=dict)

    @property
    def n_nets(self) -> int:
        return self.weights[0].shape[0]

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[2] for w in self.weights]

    @classmethod
    def initialize(
        cls, n_inputs: int, hidden: int, layers: int, x_mean, x_std, y_mean, y_std, rng: np.random.Generator
    ) -> "DistanceSurrogate":
        dims = [n_inputs] + [hidden] * layers + [1]
        weights, biases = [], []
        n_nets = len(y_mean)
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            # Capa de salida en cero: arranca prediciendo la media
            scale = 0.0 if last else np.sqrt(1.0 / fan_in)
            weights.append(scale * rng.standard_normal((n_nets, fan_in, fan_out)))
            biases.append(np.zeros((n_nets, fan_out)))
        return cls(weights, biases, np.asarray(x_mean), np.asarray(x_std), np.asarray(y_mean), np.asarray(y_std))

    def _forward(self, z: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """z: (B, in) normalizado → salida (6, B) normalizada y activaciones por capa."""
        h = np.broadcast_to(z, (self.n_nets,) + z.shape)
        activations = [h]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(np.einsum("nbi,nij->nbj", h, w) + b[:, None, :])
            activations.append(h)
        out = np.einsum("nbi,nij->nbj", h, self.weights[-1])[..., 0] + self.biases[-1]
        return out, activations

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Distancias (B, 6) para características con apoyo izquierdo."""
        z = (np.atleast_2d(features) - self.x_mean) / self.x_std
        out, _ = self._forward(z)
        return (out * self.y_std[:, None] + self.y_mean[:, None]).T

    def eval_grad(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distancias (B, 6) y gradientes de entrada (B, 6, 5) por retropropagación exacta."""
        z = (np.atleast_2d(features) - self.x_mean) / self.x_std
        out, acts = self._forward(z)
        # δ sobre la última capa oculta: (6, B, hidden)
        delta = np.broadcast_to(self.weights[-1][:, None, :, 0], acts[-1].shape) * (1.0 - acts[-1] ** 2)
        for layer in range(len(self.weights) - 2, 0, -1):
            delta = np.einsum("nbj,nij->nbi", delta, self.weights[layer]) * (1.0 - acts[layer] ** 2)
        grad_z = np.einsum("nbj,nij->nbi", delta, self.weights[0])
        grads = grad_z * self.y_std[:, None, None] / self.x_std[None, None, :]
        values = (out * self.y_std[:, None] + self.y_mean[:, None]).T
        return values, np.transpose(grads, (1, 0, 2))

    def eval_grad_parity(self, features: np.ndarray, right_stance: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Como `eval_grad` pero con paridad por fila; el apoyo derecho se evalúa reflejado."""
        features = np.atleast_2d(np.asarray(features, dtype=float))
        right = np.asarray(right_stance, dtype=bool)
        canonical = np.where(right[:, None], mirror_features(features), features)
        values, grads = self.eval_grad(canonical)
        if np.any(right):
            perm = list(MIRROR_PERMUTATION)
            values[right] = values[right][:, perm]
            grads[right] = grads[right][:, perm, :] @ _MIRROR
        return values, grads

    def distances(self, p_com: np.ndarray, p_swing: np.ndarray, parity: StanceParity) -> np.ndarray:
        features = np.array([[p_com[0], p_com[1], p_swing[0], p_swing[1], p_swing[2]]])
        values, _ = self.eval_grad_parity(features, np.array([parity is StanceParity.RIGHT]))
        return values[0]

    def save(self, path: Union[str, Path]) -> None:
        """Formato binario little-endian: magia, versión, dimensiones y float64 en orden de filas."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dims = self.dims
        with open(path, "wb") as handle:
            handle.write(WEIGHTS_MAGIC)
            handle.write(struct.pack("<III", WEIGHTS_FORMAT_VERSION, self.n_nets, len(dims)))
            handle.write(struct.pack(f"<{len(dims)}I", *dims))
            for array in (self.x_mean, self.x_std, self.y_mean, self.y_std):
                handle.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
            for w, b in zip(self.weights, self.biases):
                handle.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
                handle.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        logger.info(f"💾 Pesos guardados en {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DistanceSurrogate":
        try:
            blob = Path(path).read_bytes()
        except OSError as e:
            raise UntrainedSurrogateError(f"No hay pesos en {path}: {e}")
        if blob[:4] != WEIGHTS_MAGIC:
            raise WeightsFormatError(f"{path}: magia inválida")
        version, n_nets, n_dims = struct.unpack_from("<III", blob, 4)
        if version != WEIGHTS_FORMAT_VERSION:
            raise WeightsFormatError(f"{path}: versión {version} no soportada")
        offset = 16
        dims = list(struct.unpack_from(f"<{n_dims}I", blob, offset))
        offset += 4 * n_dims

        def take(shape: Tuple[int, ...]) -> np.ndarray:
            nonlocal offset
            count = int(np.prod(shape))
            if offset + 8 * count > len(blob):
                raise WeightsFormatError(f"{path}: archivo truncado")
            array = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)
            offset += 8 * count
            return array

        x_mean, x_std = take((dims[0],)), take((dims[0],))
        y_mean, y_std = take((n_nets,)), take((n_nets,))
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(take((n_nets, fan_in, fan_out)))
            biases.append(take((n_nets, fan_out)))
        if offset != len(blob):
            raise WeightsFormatError(f"{path}: {len(blob) - offset} bytes sobrantes")
        return cls(weights, biases, x_mean, x_std, y_mean, y_std)


@dataclass(frozen=True)
class SurrogateMetrics:
    max_abs_error: np.ndarray
    mean_abs_error: np.ndarray

    def meets(self, max_target: float = 0.03, mean_target: float = 0.005) -> bool:
        return bool(np.all(self.max_abs_error <= max_target) and np.all(self.mean_abs_error <= mean_target))

    def as_rows(self) -> List[Tuple[str, float, float]]:
        return [(name, float(mx), float(mn)) for name, mx, mn in zip(PAIR_NAMES, self.max_abs_error, self.mean_abs_error)]


def evaluate_surrogate(surrogate: DistanceSurrogate, dataset: Dataset) -> SurrogateMetrics:
    errors = np.abs(surrogate.predict(dataset.features) - dataset.labels)
    return SurrogateMetrics(errors.max(axis=0), errors.mean(axis=0))


def train_surrogates(
    dataset: Dataset, hyperparams: SurrogateSettings, seed: int = 0
) -> Tuple[DistanceSurrogate, SurrogateMetrics]:
    """
    Entrena las seis redes con mini-lotes y Adam sobre el MSE normalizado.

    La no convergencia no es un error: se informa con las métricas finales.
    """
    train, test = dataset.split(hyperparams.test_fraction, seed)
    rng = np.random.default_rng(seed)
    x_mean = train.features.mean(axis=0)
    x_std = np.maximum(train.features.std(axis=0), 1e-9)
    y_mean = train.labels.mean(axis=0)
    y_std = train.labels.std(axis=0)
    y_std = np.where(y_std < 1e-12, 1.0, y_std)
    model = DistanceSurrogate.initialize(
        train.features.shape[1], hyperparams.hidden_units, hyperparams.hidden_layers, x_mean, x_std, y_mean, y_std, rng
    )
    X = (train.features - x_mean) / x_std
    Y = ((train.labels - y_mean) / y_std).T

    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    lr = hyperparams.learning_rate
    n = X.shape[0]
    for epoch in range(hyperparams.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hyperparams.batch_size):
            idx = order[start : start + hyperparams.batch_size]
            grads, loss = _backprop(model, X[idx], Y[:, idx])
            epoch_loss += loss * len(idx)
            step += 1
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1.0 - beta1) * g
                vi *= beta2
                vi += (1.0 - beta2) * g * g
                m_hat = mi / (1.0 - beta1 ** step)
                v_hat = vi / (1.0 - beta2 ** step)
                p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        lr *= hyperparams.lr_decay
        logger.info(f"📉 Época {epoch + 1}/{hyperparams.epochs}: mse normalizado {epoch_loss / max(n, 1):.3e}")

    metrics = evaluate_surrogate(model, test if len(test) else train)
    model.metadata.update({"samples": float(len(dataset)), "epochs": float(hyperparams.epochs)})
    if metrics.meets():
        logger.info("✅ Sustituto dentro de los objetivos de error")
    else:
        logger.warning(
            f"⚠️ Sustituto fuera de objetivo: max={metrics.max_abs_error.max():.4f} m, "
            f"media={metrics.mean_abs_error.max():.4f} m"
        )
    return model, metrics


def _backprop(model: DistanceSurrogate, X: np.ndarray, Y: np.ndarray) -> Tuple[List[np.ndarray], float]:
    """Gradientes del MSE medio sobre las seis redes, en el orden weights + biases."""
    out, acts = model._forward(X)
    batch = X.shape[0]
    err = out - Y
    loss = float(np.mean(err ** 2))
    d_out = 2.0 * err / (batch * model.n_nets)
    grad_w: List[Optional[np.ndarray]] = [None] * len(model.weights)
    grad_b: List[Optional[np.ndarray]] = [None] * len(model.biases)
    grad_w[-1] = np.einsum("nbi,nb->ni", acts[-1], d_out)[..., None]
    grad_b[-1] = d_out.sum(axis=1)[:, None]
    delta = d_out[..., None] * model.weights[-1][:, None, :, 0] * (1.0 - acts[-1] ** 2)
    for layer in range(len(model.weights) - 2, -1, -1):
        grad_w[layer] = np.einsum("nbi,nbj->nij", acts[layer], delta)
        grad_b[layer] = delta.sum(axis=1)
        if layer > 0:
            delta = np.einsum("nbj,nij->nbi", delta, model.weights[layer]) * (1.0 - acts[layer] ** 2)
    return grad_w + grad_b, loss


def load_or_none(path: Union[str, Path]) -> Optional[DistanceSurrogate]:
    """Carga los pesos si existen; None si aún no se entrenó."""
    try:
        return DistanceSurrogate.load(path)
    except UntrainedSurrogateError:
        logger.warning(f"⚠️ Sin pesos del sustituto en {path}")
        return None


def gradient_check(surrogate: DistanceSurrogate, features: np.ndarray, h: float = 1e-6) -> float:
    """Máximo error relativo entre el gradiente retropropagado y diferencias centrales."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    _, grads = surrogate.eval_grad(features)
    worst = 0.0
    for i in range(features.shape[1]):
        step = np.zeros(features.shape[1])
        step[i] = h
        fd = (surrogate.predict(features + step) - surrogate.predict(features - step)) / (2.0 * h)
        scale = np.maximum(np.abs(fd), np.abs(grads[:, :, i]))
        rel = np.abs(fd - grads[:, :, i]) / np.maximum(scale, 1e-3)
        worst = max(worst, float(rel.max()))
    return worst


@dataclass(frozen=True)
class SpeedReport:
    surrogate_seconds: float
    oracle_seconds: float
    queries: int

    @property
    def speedup(self) -> float:
        return self.oracle_seconds / max(self.surrogate_seconds, 1e-12)


def oracle_benchmark(
    surrogate: DistanceSurrogate, model: LegGeometryModel, features: np.ndarray, oracle_queries: int = 20, samples: int = 2000
) -> SpeedReport:
    """Tiempo por consulta del sustituto en lote frente al oráculo de muestreo denso."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    start = time.perf_counter()
    surrogate.predict(features)
    surrogate_seconds = (time.perf_counter() - start) / len(features)
    subset = features[:oracle_queries]
    start = time.perf_counter()
    for row in subset:
        model.sampled_pair_distances(row[:2], row[2:], StanceParity.LEFT, samples)
    oracle_seconds = (time.perf_counter() - start) / len(subset)
    report = SpeedReport(surrogate_seconds, oracle_seconds, len(features))
    logger.info(f"🚀 Sustituto {report.speedup:.0f}× más rápido que el oráculo denso")
    return report
