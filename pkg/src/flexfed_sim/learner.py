"""Small tanh MLP classifier with exact gradients and plain mini-batch SGD.

Parameters live in one flat vector laid out as ``W1 (F*H) | b1 (H) | W2 (H*C) | b2 (C)``
so that aggregation is just arithmetic on arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ModelShape:
    inputs: int
    hidden: int
    classes: int

    def __post_init__(self) -> None:
        if min(self.inputs, self.hidden, self.classes) < 1:
            raise ValueError(f"model dimensions must be >= 1, got {self}")

    @property
    def size(self) -> int:
        f, h, c = self.inputs, self.hidden, self.classes
        return f * h + h + h * c + c


@dataclass
class ModelParams:
    theta: np.ndarray
    shape: ModelShape

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.shape.size,):
            raise ValueError(f"theta has length {self.theta.size}, expected {self.shape.size}")

    def copy(self) -> ModelParams:
        return ModelParams(self.theta.copy(), self.shape)

    def unpack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return _unpack(self.theta, self.shape)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.005
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: np.ndarray  # NaN where the class is absent from the test set
    class_counts: np.ndarray
    mean_loss: float

    @property
    def macro_accuracy(self) -> float:
        return float(np.nanmean(self.per_class_accuracy))


class NoTrainableData(ValueError):
    """Raised when a client has no trainable data this round."""


def _unpack(theta: np.ndarray, shape: ModelShape):
    f, h, c = shape.inputs, shape.hidden, shape.classes
    i = 0
    w1 = theta[i : i + f * h].reshape(f, h)
    i += f * h
    b1 = theta[i : i + h]
    i += h
    w2 = theta[i : i + h * c].reshape(h, c)
    i += h * c
    b2 = theta[i : i + c]
    return w1, b1, w2, b2


def init_params(shape: ModelShape, seed: int) -> ModelParams:
    """Fan-in scaled symmetric uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(shape.size)
    w1, _, w2, _ = _unpack(theta, shape)
    w1[:] = rng.uniform(-1.0, 1.0, w1.shape) / np.sqrt(shape.inputs)
    w2[:] = rng.uniform(-1.0, 1.0, w2.shape) / np.sqrt(shape.hidden)
    return ModelParams(theta, shape)


def as_arrays(windows: Sequence) -> tuple[np.ndarray, np.ndarray]:
    if len(windows) == 0:
        return np.empty((0, 0)), np.empty(0, dtype=int)
    x = np.stack([w.features for w in windows])
    y = np.fromiter((w.label for w in windows), dtype=np.int64, count=len(windows))
    return x, y


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(p: ModelParams, x: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = p.unpack()
    return np.tanh(x @ w1 + b1) @ w2 + b2


def predict_proba(p: ModelParams, x: np.ndarray) -> np.ndarray:
    return softmax(forward(p, x))


def _check_dims(p: ModelParams, x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != p.shape.inputs:
        raise ValueError(f"features have shape {x.shape}, model expects {p.shape.inputs} inputs")
    if len(y) != len(x):
        raise ValueError("features and labels differ in length")
    if len(y) and (y.min() < 0 or y.max() >= p.shape.classes):
        raise ValueError("label outside the model's class range")


def loss_and_grad_arrays(p: ModelParams, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    _check_dims(p, x, y)
    n = len(y)
    if n == 0:
        raise ValueError("empty batch")
    w1, b1, w2, b2 = p.unpack()
    hid = np.tanh(x @ w1 + b1)
    logits = hid @ w2 + b2
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[np.arange(n), y]))

    d_logits = np.exp(z - log_norm[:, None])
    d_logits[np.arange(n), y] -= 1.0
    d_logits /= n
    grad = np.empty_like(p.theta)
    g_w1, g_b1, g_w2, g_b2 = _unpack(grad, p.shape)
    g_w2[:] = hid.T @ d_logits
    g_b2[:] = d_logits.sum(axis=0)
    d_pre = (d_logits @ w2.T) * (1.0 - hid * hid)
    g_w1[:] = x.T @ d_pre
    g_b1[:] = d_pre.sum(axis=0)
    return loss, grad


def loss_and_grad(p: ModelParams, batch: Sequence) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over ``batch`` (a sequence of labeled windows) and its gradient."""
    x, y = as_arrays(batch)
    if len(y) == 0:
        raise ValueError("empty batch")
    return loss_and_grad_arrays(p, x, y)


def mean_loss(p: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    z = forward(p, x)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(y)), y]))


def local_train_arrays(p: ModelParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> ModelParams:
    if len(y) == 0:
        raise NoTrainableData("client has no trainable data this round")
    _check_dims(p, x, y)
    rng = np.random.default_rng(cfg.seed)
    theta = p.theta.copy()
    work = ModelParams(theta, p.shape)
    n = len(y)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grad = loss_and_grad_arrays(work, x[idx], y[idx])
            theta -= cfg.lr * grad
    return work


def local_train(p: ModelParams, data: Sequence, cfg: TrainConfig) -> ModelParams:
    """``cfg.epochs`` passes of seeded-shuffle mini-batch SGD; the last partial batch is kept."""
    x, y = as_arrays(data)
    return local_train_arrays(p, x, y, cfg)


def evaluate_arrays(p: ModelParams, x: np.ndarray, y: np.ndarray) -> EvalReport:
    if len(y) == 0:
        raise ValueError("empty test set")
    _check_dims(p, x, y)
    logits = forward(p, x)
    pred = np.argmax(logits, axis=1)  # first maximum wins: lowest class index on ties
    z = logits - logits.max(axis=1, keepdims=True)
    loss = float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y]))
    k = p.shape.classes
    totals = np.bincount(y, minlength=k)
    correct = np.bincount(y[pred == y], minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, correct / np.maximum(totals, 1), np.nan)
    return EvalReport(float(correct.sum() / len(y)), per_class, totals, loss)


def evaluate(p: ModelParams, test: Sequence) -> EvalReport:
    x, y = as_arrays(test)
    return evaluate_arrays(p, x, y)


def save_params(p: ModelParams, path: str | Path) -> None:
    """Header line ``F H C`` followed by little-endian float64 values."""
    s = p.shape
    with open(path, "wb") as fh:
        fh.write(f"{s.inputs} {s.hidden} {s.classes}\n".encode())
        fh.write(p.theta.astype("<f8").tobytes())


def load_params(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        shape = ModelShape(*(int(v) for v in header))
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    return ModelParams(theta, shape)
