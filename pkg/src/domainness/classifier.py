"""Linear classifiers: the binary domain discriminator and one-vs-rest reuse.

Training is full-batch gradient descent on mean logistic loss plus an L2
penalty on the weights, starting from w = 0, b = 0. The residual is computed
as 0.5*tanh(m/2) + (0.5 - y), which is bitwise antisymmetric under
(m, y) -> (-m, 1 - y); flipping every label therefore negates the learned
model exactly, not just approximately.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from . import formats


@dataclass
class TrainConfig:
    l2_lambda: float = 1e-3
    epochs: int = 500
    learning_rate: float = 0.1
    tolerance: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.l2_lambda < 0:
            raise DataError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise DataError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.tolerance <= 0:
            raise DataError(f"tolerance must be > 0, got {self.tolerance}")


@dataclass
class LinearModel:
    dim: int
    weights: np.ndarray  # (dim,) float64
    bias: float
    classes: list[str]


@dataclass
class MulticlassModel:
    classes: list[str]  # lexicographic order
    rows: list[LinearModel]  # one binary row per class

    @property
    def dim(self) -> int:
        return self.rows[0].dim


def _residual(m: np.ndarray, y_shift: np.ndarray) -> np.ndarray:
    # y_shift = 0.5 - y; tanh on |m| with copysign keeps the expression exactly
    # antisymmetric under (m, y) -> (-m, 1 - y) whatever libm does
    t = np.copysign(np.tanh(np.abs(m) * 0.5), m)
    return 0.5 * t + y_shift


def _loss(m: np.ndarray, sign: np.ndarray, w: np.ndarray, l2: float) -> float:
    # sign = 2y - 1; mean log(1 + exp(-sign * m)) + l2 * ||w||^2 / 2
    z = sign * m
    return float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * l2 * np.dot(w, w))


def train_binary(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
                 classes: list[str] | None = None) -> LinearModel:
    """Train the binary logistic discriminator; deterministic given inputs and cfg."""
    cfg.validate()
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"features must be N x D, got shape {X.shape}")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise DataError(f"labels shape {y.shape} does not match {X.shape[0]} feature rows")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("binary labels must be 0 or 1")
    if y.min() == y.max():
        raise DataError("training set contains a single class")
    n, d = X.shape
    y_shift = 0.5 - y
    sign = 2.0 * y - 1.0

    w = np.zeros(d, dtype=np.float64)
    b = 0.0
    m = X @ w + b
    prev = _loss(m, sign, w, cfg.l2_lambda)
    for _ in range(cfg.epochs):
        r = _residual(m, y_shift)
        grad_w = X.T @ r / n + cfg.l2_lambda * w
        grad_b = np.mean(r)
        w = w - cfg.learning_rate * grad_w
        b = b - cfg.learning_rate * grad_b
        m = X @ w + b
        cur = _loss(m, sign, w, cfg.l2_lambda)
        if prev - cur < cfg.tolerance:
            prev = cur
            break
        prev = cur
    return LinearModel(dim=d, weights=w, bias=float(b), classes=list(classes or ["0", "1"]))


def margin(model: LinearModel, f: np.ndarray) -> float:
    """Decision value w . f + b."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (model.dim,):
        raise DataError(f"feature dim {f.shape} does not match model dim {model.dim}")
    return float(model.weights @ f + model.bias)


def margins_of(model: LinearModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.dim:
        raise DataError(f"feature dim {X.shape[1]} does not match model dim {model.dim}")
    return X @ model.weights + model.bias


def domain_weighting(model: LinearModel) -> np.ndarray:
    """Per-coordinate weighting |w_i| / max |w|; all-ones when w = 0."""
    a = np.abs(np.asarray(model.weights, dtype=np.float64))
    peak = a.max() if a.size else 0.0
    if peak == 0.0:
        return np.ones_like(a)
    return a / peak


def binary_accuracy(model: LinearModel, X: np.ndarray, y: np.ndarray) -> float:
    pred = (margins_of(model, X) > 0.0).astype(np.float64)
    return float(np.mean(pred == np.asarray(y, dtype=np.float64)))


def train_multiclass(features: np.ndarray, labels: list[str], cfg: TrainConfig) -> MulticlassModel:
    """Independent one-vs-rest rows, class order lexicographic."""
    X = np.asarray(features, dtype=np.float64)
    labels = list(labels)
    if X.shape[0] != len(labels):
        raise DataError(f"{X.shape[0]} feature rows but {len(labels)} labels")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DataError(f"need >= 2 classes, got {classes}")
    lab = np.asarray(labels)
    rows = []
    for c in classes:
        y = (lab == c).astype(np.float64)
        rows.append(train_binary(X, y, cfg, classes=["rest", c]))
    return MulticlassModel(classes=classes, rows=rows)


def margins(model: MulticlassModel, f: np.ndarray) -> np.ndarray:
    """Per-class decision values D_c = w_c . f + b_c for one image."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (model.dim,):
        raise DataError(f"feature dim {f.shape} does not match model dim {model.dim}")
    return np.array([row.weights @ f + row.bias for row in model.rows])


def margin_matrix(model: MulticlassModel, X: np.ndarray) -> np.ndarray:
    """N x C margins for a feature matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.dim:
        raise DataError(f"feature dim {X.shape[1]} does not match model dim {model.dim}")
    W = np.stack([row.weights for row in model.rows], axis=1)
    b = np.array([row.bias for row in model.rows])
    return X @ W + b


def predict(model: MulticlassModel, X: np.ndarray) -> list[str]:
    """Argmax class per row; ties resolve to the lexicographically first class."""
    mm = margin_matrix(model, X)
    return [model.classes[i] for i in np.argmax(mm, axis=1)]


def multiclass_accuracy(model: MulticlassModel, X: np.ndarray, labels: list[str]) -> float:
    pred = predict(model, X)
    return float(np.mean([p == t for p, t in zip(pred, labels)]))


def save_binary(model: LinearModel, path: str | Path) -> None:
    formats.save_model(model.weights[None, :], np.array([model.bias]), model.classes, path)


def load_binary(path: str | Path) -> LinearModel:
    W, b, classes = formats.load_model(path)
    if W.shape[0] != 1:
        raise DataError(f"{path}: expected a single-row binary model, found {W.shape[0]} rows")
    return LinearModel(dim=W.shape[1], weights=W[0].astype(np.float64), bias=float(b[0]), classes=classes)


def save_multiclass(model: MulticlassModel, path: str | Path) -> None:
    W = np.stack([row.weights for row in model.rows])
    b = np.array([row.bias for row in model.rows])
    formats.save_model(W, b, model.classes, path)


def load_multiclass(path: str | Path) -> MulticlassModel:
    W, b, classes = formats.load_model(path)
    if W.shape[0] != len(classes):
        raise DataError(f"{path}: {W.shape[0]} rows for {len(classes)} classes")
    rows = [
        LinearModel(dim=W.shape[1], weights=W[i].astype(np.float64), bias=float(b[i]),
                    classes=["rest", c])
        for i, c in enumerate(classes)
    ]
    return MulticlassModel(classes=classes, rows=rows)
