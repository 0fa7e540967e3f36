"""Logistic model, local datasets and the worker-side training step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels


class DimensionMismatchError(ValueError):
    pass


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelState:
    """Weight vector of length d+1 (bias last) plus the server round counter."""

    weights: np.ndarray
    version: int = 0

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise DimensionMismatchError("weights must be a vector")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, d: int) -> "ModelState":
        return cls(np.zeros(d + 1), 0)

    @property
    def d(self) -> int:
        return self.weights.shape[0] - 1

    def to_dict(self) -> dict:
        return {"d": self.d, "weights": [float(x) for x in self.weights], "version": self.version}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelState":
        state = cls(np.asarray(doc["weights"], dtype=np.float64), int(doc["version"]))
        if state.d != doc["d"]:
            raise DimensionMismatchError(f"d={doc['d']} but {len(doc['weights'])} weights")
        return state


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.1
    local_epochs: int = 1
    minibatch_size: int = 32
    loss: str = "cross_entropy"

    def __post_init__(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.loss != "cross_entropy":
            raise ValueError(f"unsupported loss {self.loss!r}")


@dataclass(frozen=True)
class LocalDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("dataset must be a non-empty 2-D feature matrix")
        if y.shape != (X.shape[0],):
            raise DimensionMismatchError("one label per sample required")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0 or 1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GradientUpdate:
    """What a worker uploads: the accumulated delta and metadata, never samples."""

    delta: np.ndarray
    worker_id: str
    base_version: int
    n_samples: int = 0
    local_loss: float | None = field(default=None, compare=False)


def minibatches(order: np.ndarray, k: int) -> list[np.ndarray]:
    """Partition an index order into consecutive batches of size k (last may be short)."""
    return [order[i:i + k] for i in range(0, len(order), k)]


def loss(w: np.ndarray, data: LocalDataset) -> float:
    return kernels.cross_entropy(w, data.features, data.labels)


def gradient(w: np.ndarray, data: LocalDataset) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to (weights, bias)."""
    return kernels.logistic_grad(w, data.features, data.labels)


def predict(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (X @ w[:-1] + w[-1] >= 0).astype(np.float64)


def accuracy(w: np.ndarray, data: LocalDataset) -> float:
    return float(np.mean(predict(w, data.features) == data.labels))


def local_train(w_start: ModelState, data: LocalDataset, cfg: TrainerConfig,
                rng: np.random.Generator | None = None, worker_id: str = "") -> GradientUpdate:
    """Run H epochs of minibatch SGD from ``w_start`` and return the accumulated delta.

    Each epoch draws a fresh permutation from ``rng`` (identity order when
    ``rng`` is None); every step evaluates the gradient at ``w_start + delta``.
    """
    if w_start.d != data.d:
        raise DimensionMismatchError(f"model has d={w_start.d}, data has d={data.d}")
    if cfg.minibatch_size > len(data):
        raise ValueError(f"minibatch_size {cfg.minibatch_size} exceeds dataset size {len(data)}")
    n = len(data)
    delta = np.zeros_like(w_start.weights)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n) if rng is not None else np.arange(n)
        try:
            delta = kernels.sgd_epoch(w_start.weights, delta, data.features, data.labels,
                                      order, cfg.minibatch_size, cfg.learning_rate)
        except FloatingPointError as exc:
            raise NonFiniteGradientError(f"{exc} (learning rate {cfg.learning_rate} too large?)") from None
    return GradientUpdate(delta, worker_id, w_start.version, n)
