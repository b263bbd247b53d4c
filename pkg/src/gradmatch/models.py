"""Small differentiable classifiers with analytic per-sample last-layer gradients.

Parameter layout (``theta`` is one flat float64 vector):

* logistic regression: ``W`` of shape ``(C, d + 1)``, column 0 is the bias.
* MLP: ``W1`` of shape ``(H, d + 1)`` followed by ``W2`` of shape ``(C, H + 1)``,
  again with the bias in column 0; the hidden activation is ``tanh``.

The last layer is always the trailing ``C * (h + 1)`` entries of ``theta``, laid
out class-major, so the per-sample last-layer gradient is
``outer(p - y, [1, h]).ravel()``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import NonFiniteGradient

LOGREG = "logreg"
MLP = "mlp"

MOMENTUM = 0.9
WEIGHT_DECAY = 5e-4
CHECKPOINT_FORMAT = "gradmatch-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelState:
    arch: str
    theta: np.ndarray
    n_features: int
    class_count: int
    hidden_width: int = 0
    velocity: np.ndarray | None = None

    def __post_init__(self):
        if self.arch not in (LOGREG, MLP):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.arch == MLP and self.hidden_width < 1:
            raise ValueError("an MLP needs hidden_width >= 1")
        theta = np.array(self.theta, dtype=np.float64, copy=True).reshape(-1)
        if theta.size != n_params(self.arch, self.n_features, self.class_count, self.hidden_width):
            raise ValueError("theta length does not match the architecture")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta has non-finite entries")
        velocity = np.zeros_like(theta) if self.velocity is None else \
            np.array(self.velocity, dtype=np.float64, copy=True).reshape(theta.shape)
        theta.setflags(write=False)
        velocity.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "velocity", velocity)

    @property
    def penultimate_width(self) -> int:
        return self.n_features if self.arch == LOGREG else self.hidden_width

    @property
    def last_layer_size(self) -> int:
        return self.class_count * (self.penultimate_width + 1)

    @property
    def last_layer_slice(self) -> slice:
        return slice(self.theta.size - self.last_layer_size, self.theta.size)

    def with_theta(self, theta, velocity=None) -> "ModelState":
        return replace(self, theta=theta, velocity=velocity)


class LastLayerGradient(NamedTuple):
    values: np.ndarray
    owner_index: int


def n_params(arch, n_features, class_count, hidden_width=0) -> int:
    if arch == LOGREG:
        return class_count * (n_features + 1)
    return hidden_width * (n_features + 1) + class_count * (hidden_width + 1)


def init_model(arch, n_features, class_count, hidden_width=0, seed=0) -> ModelState:
    """Zero logistic regression, or a Glorot-uniform MLP with zero biases."""
    if arch == LOGREG:
        theta = np.zeros(n_params(LOGREG, n_features, class_count))
        return ModelState(LOGREG, theta, n_features, class_count)
    rng = np.random.default_rng(seed)
    w1 = np.zeros((hidden_width, n_features + 1))
    w2 = np.zeros((class_count, hidden_width + 1))
    w1[:, 1:] = rng.uniform(-1, 1, (hidden_width, n_features)) * np.sqrt(6.0 / (n_features + hidden_width))
    w2[:, 1:] = rng.uniform(-1, 1, (class_count, hidden_width)) * np.sqrt(6.0 / (hidden_width + class_count))
    return ModelState(MLP, np.concatenate([w1.ravel(), w2.ravel()]), n_features,
                      class_count, hidden_width)


def _layers(m: ModelState):
    if m.arch == LOGREG:
        return None, m.theta.reshape(m.class_count, m.n_features + 1)
    split = m.hidden_width * (m.n_features + 1)
    w1 = m.theta[:split].reshape(m.hidden_width, m.n_features + 1)
    w2 = m.theta[split:].reshape(m.class_count, m.hidden_width + 1)
    return w1, w2


def _augment(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


def penultimate(m: ModelState, features) -> np.ndarray:
    """Input of the last linear layer (raw features or hidden activations)."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    w1, _ = _layers(m)
    if w1 is None:
        return features
    return np.tanh(_augment(features) @ w1.T)


def logits(m: ModelState, features) -> np.ndarray:
    _, w2 = _layers(m)
    return _augment(penultimate(m, features)) @ w2.T


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy(z, labels):
    zmax = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    return lse - z[np.arange(z.shape[0]), labels]


def _normalized(weights, n):
    if weights is None:
        return np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,) or np.any(weights < 0):
        raise ValueError("weights must be nonnegative and aligned with indices")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return weights / total


def forward_loss(m: ModelState, d, indices=None, weights=None):
    """Cross-entropy over ``indices``.

    Returns ``(aggregate, per_sample)`` where the aggregate is the weighted mean
    with weights renormalized to sum to one (plain mean when unweighted).
    """
    idx = np.arange(d.n_samples) if indices is None else np.asarray(indices, dtype=np.int64)
    per_sample = _cross_entropy(logits(m, d.features[idx]), d.labels[idx])
    if idx.size == 0:
        return 0.0, per_sample
    return float(_normalized(weights, idx.size) @ per_sample), per_sample


def predict(m: ModelState, features) -> np.ndarray:
    return np.argmax(logits(m, features), axis=1)


def accuracy(m: ModelState, d) -> float:
    if d.n_samples == 0:
        return float("nan")
    return float(np.mean(predict(m, d.features) == d.labels))


def last_layer_grads(m: ModelState, features, labels) -> np.ndarray:
    """Per-sample last-layer gradients, one row of length ``C * (h + 1)`` per sample."""
    h = penultimate(m, features)
    _, w2 = _layers(m)
    residual = _softmax(_augment(h) @ w2.T)
    residual[np.arange(h.shape[0]), np.asarray(labels)] -= 1.0
    return np.einsum("nc,nj->ncj", residual, _augment(h)).reshape(h.shape[0], -1)


def per_sample_last_layer_grad(m: ModelState, d, i: int) -> LastLayerGradient:
    row = last_layer_grads(m, d.features[i:i + 1], d.labels[i:i + 1])[0]
    return LastLayerGradient(row, int(i))


def loss_and_grad(m: ModelState, features, labels, weights=None):
    """Weighted-mean cross-entropy and its gradient with respect to all of ``theta``."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    a = _normalized(weights, labels.size)
    w1, w2 = _layers(m)
    h = penultimate(m, features)
    h_aug = _augment(h)
    z = h_aug @ w2.T
    loss = float(a @ _cross_entropy(z, labels))
    dz = _softmax(z)
    dz[np.arange(labels.size), labels] -= 1.0
    dz *= a[:, None]
    grad_w2 = dz.T @ h_aug
    if w1 is None:
        return loss, grad_w2.ravel()
    dh = (dz @ w2[:, 1:]) * (1.0 - h * h)
    grad_w1 = dh.T @ _augment(features)
    return loss, np.concatenate([grad_w1.ravel(), grad_w2.ravel()])


def sgd_step(m: ModelState, grad, lr: float, momentum: float = MOMENTUM,
             weight_decay: float = WEIGHT_DECAY) -> ModelState:
    """Heavy-ball SGD: ``v <- momentum * v + (grad + wd * theta)``, ``theta <- theta - lr * v``."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != m.theta.shape:
        raise ValueError("gradient length does not match theta")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient has non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        velocity = momentum * m.velocity + grad + weight_decay * m.theta
        theta = m.theta - lr * velocity
    if not np.all(np.isfinite(theta)):
        raise NonFiniteGradient("update overflowed; the learning rate is too large for this gradient")
    return m.with_theta(theta, velocity)


def save_checkpoint(m: ModelState, path) -> None:
    """Write a JSON checkpoint: header fields plus ``theta`` as a number array.

    Floats are written with ``repr`` precision so a load restores ``theta``
    bit for bit. Optimizer velocity is not stored.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": m.arch,
        "dims": {"n_features": m.n_features, "hidden_width": m.hidden_width,
                 "class_count": m.class_count},
        "theta": m.theta.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> ModelState:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a gradmatch checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    dims = payload["dims"]
    return ModelState(payload["arch"], np.array(payload["theta"], dtype=np.float64),
                      dims["n_features"], dims["class_count"], dims.get("hidden_width", 0))
