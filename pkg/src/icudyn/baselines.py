"""Static comparators: logistic regression and a one-hidden-layer MLP.

Both see a single column of the event grid, the patient's imputed state at
the cutoff, and no history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .errors import CheckpointError, EmptyWindowError, ShapeError, SingleClassError, TrainingDiverged
from .preprocess import EncounterMatrix


def extract_static_features(matrix: EncounterMatrix, at_minutes: float = 720.0) -> np.ndarray:
    """Event-grid column at the latest time <= ``at_minutes``."""
    k = matrix.columns_until(at_minutes)
    if k == 0:
        raise EmptyWindowError(f"encounter {matrix.encounter_id}: no columns before {at_minutes} min")
    return matrix.values[:, k - 1].copy()


def feature_matrix(matrices: Sequence[EncounterMatrix], at_minutes: float = 720.0) -> np.ndarray:
    return np.stack([extract_static_features(m, at_minutes) for m in matrices])


@dataclass
class LinearModel:
    w: np.ndarray
    b: float

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint("lr", [(len(self.w), 1)], [self.w.copy(), np.array([self.b])])


@dataclass
class MlpModel:
    W1: np.ndarray  # (hidden, n_features)
    b1: np.ndarray
    w2: np.ndarray
    b2: float

    def to_checkpoint(self) -> Checkpoint:
        h, d = self.W1.shape
        return Checkpoint("mlp", [(d, h), (h, 1)], [self.W1.copy(), self.b1.copy(), self.w2.copy(), np.array([self.b2])])


@dataclass
class StaticConfig:
    learning_rate: float = 0.5
    epochs: int = 2000
    seed: int = 0
    hidden: int = 32
    l2: float = 0.0


class StaticFit(NamedTuple):
    model: object
    history: list[float]


def _clip(p: np.ndarray) -> np.ndarray:
    return np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)


def _bce(p_logit: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, p_logit) - y * p_logit))


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError("features must be (n, d) with one label per row")
    if y.min() == y.max():
        raise SingleClassError("both classes must be present")
    return X, y


def lr_loss_and_grad(X, y, model: LinearModel, l2: float = 0.0):
    z = X @ model.w + model.b
    loss = _bce(z, y) + 0.5 * l2 * float(model.w @ model.w)
    r = (expit(z) - y) / len(y)
    return loss, X.T @ r + l2 * model.w, float(r.sum())


def mlp_forward(X, model: MlpModel):
    a = np.tanh(X @ model.W1.T + model.b1)
    return a, a @ model.w2 + model.b2


def mlp_loss_and_grad(X, y, model: MlpModel, l2: float = 0.0):
    a, z = mlp_forward(X, model)
    loss = _bce(z, y) + 0.5 * l2 * (float(np.sum(model.W1**2)) + float(model.w2 @ model.w2))
    r = (expit(z) - y) / len(y)
    dw2 = a.T @ r + l2 * model.w2
    db2 = float(r.sum())
    da = np.outer(r, model.w2) * (1.0 - a * a)
    dW1 = da.T @ X + l2 * model.W1
    db1 = da.sum(axis=0)
    return loss, (dW1, db1, dw2, db2)


def train_lr(features, labels, config: StaticConfig | None = None) -> StaticFit:
    """Full-batch gradient descent on mean BCE. Labels: 1 = died."""
    config = config or StaticConfig()
    X, y = _check_xy(features, labels)
    model = LinearModel(np.zeros(X.shape[1]), 0.0)
    history = []
    for epoch in range(config.epochs):
        loss, gw, gb = lr_loss_and_grad(X, y, model, config.l2)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"logistic regression diverged at epoch {epoch + 1}", model, history)
        history.append(loss)
        model.w = model.w - config.learning_rate * gw
        model.b = model.b - config.learning_rate * gb
    return StaticFit(model, history)


def init_mlp(n_features: int, hidden: int = 32, seed=0) -> MlpModel:
    rng = np.random.default_rng(seed)
    W1 = rng.uniform(-1, 1, (hidden, n_features)) / math.sqrt(n_features)
    w2 = rng.uniform(-1, 1, hidden) / math.sqrt(hidden)
    return MlpModel(W1, np.zeros(hidden), w2, 0.0)


def train_mlp(features, labels, config: StaticConfig | None = None) -> StaticFit:
    config = config or StaticConfig()
    X, y = _check_xy(features, labels)
    model = init_mlp(X.shape[1], config.hidden, config.seed)
    history = []
    for epoch in range(config.epochs):
        loss, (dW1, db1, dw2, db2) = mlp_loss_and_grad(X, y, model, config.l2)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"MLP diverged at epoch {epoch + 1}", model, history)
        history.append(loss)
        lr = config.learning_rate
        model = MlpModel(model.W1 - lr * dW1, model.b1 - lr * db1, model.w2 - lr * dw2, model.b2 - lr * db2)
    return StaticFit(model, history)


def predict_lr(features, model: LinearModel) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.shape[-1] != len(model.w):
        raise ShapeError(f"expected {len(model.w)} features, got {X.shape[-1]}")
    return _clip(expit(X @ model.w + model.b))


def predict_mlp(features, model: MlpModel) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.shape[-1] != model.W1.shape[1]:
        raise ShapeError(f"expected {model.W1.shape[1]} features, got {X.shape[-1]}")
    return _clip(expit(mlp_forward(X, model)[1]))


def save_static(model, path) -> None:
    write_checkpoint(path, model.to_checkpoint())


def from_checkpoint(ckpt: Checkpoint):
    if ckpt.model_type == "lr":
        w, b = ckpt.arrays
        return LinearModel(w, float(b[0]))
    if ckpt.model_type == "mlp":
        W1, b1, w2, b2 = ckpt.arrays
        return MlpModel(W1, b1, w2, float(b2[0]))
    raise CheckpointError(f"checkpoint holds a {ckpt.model_type} model, not a static baseline")


def load_static(path):
    return from_checkpoint(read_checkpoint(path))
