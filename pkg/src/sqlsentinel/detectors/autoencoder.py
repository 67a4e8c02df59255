"""Single-hidden-layer autoencoder trained with mini-batch Adam.

Architecture is d -> h -> d with tanh on the hidden layer and a linear
output, h = max(8, d // 8) unless overridden. The loss is the mean squared
reconstruction error averaged over both batch and dimensions, and the
anomaly score of a vector is that same per-vector MSE.

Everything is plain numpy so the analytic gradients in
:func:`reconstruction_loss_and_grads` can be checked against finite
differences directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import TrainConfig
from ..errors import NonFiniteLoss

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AutoencoderModel:
    encoder_weights: np.ndarray  # (h, d)
    encoder_bias: np.ndarray     # (h,)
    decoder_weights: np.ndarray  # (d, h)
    decoder_bias: np.ndarray     # (d,)
    activation: str = "tanh"

    @property
    def hidden_dim(self) -> int:
        return int(self.encoder_weights.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.encoder_weights.shape[1])


def default_hidden_dim(d: int) -> int:
    return max(8, d // 8)


def _forward(w1, b1, w2, b2, X):
    H = np.tanh(X @ w1.T + b1)
    Y = H @ w2.T + b2
    return H, Y


def reconstruction_loss_and_grads(w1, b1, w2, b2, X):
    """Loss and analytic gradients for one batch.

    loss = mean over batch and dimensions of (reconstruction - input)^2.
    Returns (loss, (dW1, db1, dW2, db2)).
    """
    X = np.asarray(X, dtype=np.float64)
    B, d = X.shape
    H, Y = _forward(w1, b1, w2, b2, X)
    diff = Y - X
    loss = float(np.mean(diff * diff))
    G = 2.0 * diff / (B * d)          # dloss/dY
    dw2 = G.T @ H
    db2 = G.sum(axis=0)
    dH = G @ w2
    dZ = dH * (1.0 - H * H)           # tanh'
    dw1 = dZ.T @ X
    db1 = dZ.sum(axis=0)
    return loss, (dw1, db1, dw2, db2)


def _glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def ae_fit(X, cfg: TrainConfig, hidden_dim: int | None = None) -> AutoencoderModel:
    """Train the autoencoder; deterministic for a fixed cfg.seed.

    Data is reshuffled every epoch; the final partial batch is kept.
    Raises NonFiniteLoss (with the offending epoch/batch) if training
    diverges.
    """
    from .pca import _as_matrix

    M = _as_matrix(X)
    n, d = M.shape
    if n < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} vectors, got {n}")
    h = hidden_dim if hidden_dim is not None else default_hidden_dim(d)

    rng = np.random.default_rng(cfg.seed)
    w1 = _glorot(rng, (h, d))
    b1 = np.zeros(h)
    w2 = _glorot(rng, (d, h))
    b2 = np.zeros(d)

    params = [w1, b1, w2, b2]
    m_t = [np.zeros_like(p) for p in params]
    v_t = [np.zeros_like(p) for p in params]
    step = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
            batch = M[order[start:start + cfg.batch_size]]
            loss, grads = reconstruction_loss_and_grads(*params, batch)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch + 1, batch_index + 1)
            step += 1
            bc1 = 1.0 - ADAM_BETA1 ** step
            bc2 = 1.0 - ADAM_BETA2 ** step
            for p, g, mm, vv in zip(params, grads, m_t, v_t):
                mm *= ADAM_BETA1
                mm += (1.0 - ADAM_BETA1) * g
                vv *= ADAM_BETA2
                vv += (1.0 - ADAM_BETA2) * g * g
                p -= cfg.learning_rate * (mm / bc1) / (np.sqrt(vv / bc2) + ADAM_EPS)

    return AutoencoderModel(w1, b1, w2, b2)


def ae_score(m: AutoencoderModel, x) -> float:
    """Mean squared error between *x* and its reconstruction."""
    return float(ae_score_batch(m, np.asarray(getattr(x, "values", x))[None, :])[0])


def ae_score_batch(m: AutoencoderModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _, Y = _forward(m.encoder_weights, m.encoder_bias, m.decoder_weights, m.decoder_bias, X)
    diff = Y - X
    return np.mean(diff * diff, axis=1)
