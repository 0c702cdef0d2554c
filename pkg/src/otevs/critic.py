"""Dense ReLU critic with hand-written first and second order backprop.

Weights follow the ``(out, in)`` convention, so a layer computes
``z = h @ W.T + b``. Hidden layers use ReLU with derivative 0 at the kink;
the output layer is linear and scalar.

The gradient-penalty term needs the derivative of ``||grad_x D(x)||`` with
respect to the weights. With the ReLU activation pattern held fixed (its
second derivative is zero almost everywhere) the input gradient is a product
of masked weight matrices, and :func:`critic_loss_and_grad` reverses through
that product directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_HIDDEN = (512, 512, 512)


@dataclass
class CriticParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias per weight matrix")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[0],):
                raise ValueError(f"bias shape {b.shape} does not match weight {W.shape}")
        for W_prev, W in zip(self.weights, self.weights[1:]):
            if W.shape[1] != W_prev.shape[0]:
                raise ValueError("layer shapes do not chain")
        if self.weights[-1].shape[0] != 1:
            raise ValueError("critic output must be scalar")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "CriticParams":
        half = len(arrays) // 2
        return cls(list(arrays[:half]), list(arrays[half:]))

    def copy(self) -> "CriticParams":
        return CriticParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def save(self, path) -> None:
        np.savez(path, **{f"W{i}": W for i, W in enumerate(self.weights)},
                 **{f"b{i}": b for i, b in enumerate(self.biases)})

    @classmethod
    def load(cls, path) -> "CriticParams":
        with np.load(path) as data:
            n = len([k for k in data.files if k.startswith("W")])
            return cls([data[f"W{i}"] for i in range(n)], [data[f"b{i}"] for i in range(n)])


def init_kaiming(rng: np.random.Generator, input_dim: int, hidden=DEFAULT_HIDDEN, dtype=np.float64) -> CriticParams:
    """Weights ~ Normal(0, 2 / fan_in), biases zero."""
    dims = [input_dim, *hidden, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        weights.append(W.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return CriticParams(weights, biases)


def _forward(params: CriticParams, X: np.ndarray):
    """Activations of every layer; returns (inputs to each layer, masks, output)."""
    h = np.asarray(X, dtype=params.dtype)
    inputs, masks = [], []
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W.T
        z += b
        if i < n_layers - 1:
            masks.append(z > 0)
            h = np.maximum(z, 0, out=z)
        else:
            h = z
    return inputs, masks, h[:, 0]


def forward(params: CriticParams, X) -> np.ndarray:
    """Critic value for each row of ``X`` (shape (B, M)); a single vector gives a scalar."""
    X = np.asarray(X)
    out = _forward(params, np.atleast_2d(X))[2]
    return out[0] if X.ndim == 1 else out


def _input_grad_chain(params: CriticParams, masks):
    """Backward deltas ``u_l`` (d out / d z_l) and the input gradient."""
    W = params.weights
    B = masks[0].shape[0] if masks else 1
    u = np.ones((B, 1), dtype=params.dtype)
    deltas = [u]
    for l in range(len(W) - 1, 0, -1):
        u = (u @ W[l]) * masks[l - 1]
        deltas.append(u)
    deltas.reverse()  # deltas[l] multiplies W[l]
    return deltas, deltas[0] @ W[0]


def grad_input(params: CriticParams, X) -> np.ndarray:
    """Gradient of the critic output w.r.t. its input, row-wise."""
    X = np.asarray(X)
    _, masks, _ = _forward(params, np.atleast_2d(X))
    _, g = _input_grad_chain(params, masks)
    return g[0] if X.ndim == 1 else g


def value_and_grad_input(params: CriticParams, X):
    """Critic values and input gradients of a batch from one forward pass."""
    _, masks, out = _forward(params, np.atleast_2d(X))
    return out, _input_grad_chain(params, masks)[1]


def _backward(params: CriticParams, inputs, masks, dout: np.ndarray):
    """Parameter gradients of ``sum(dout * D(X))``."""
    W = params.weights
    dW = [None] * len(W)
    db = [None] * len(W)
    delta = dout[:, None].astype(params.dtype)
    for l in range(len(W) - 1, -1, -1):
        dW[l] = delta.T @ inputs[l]
        db[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ W[l]) * masks[l - 1]
    return dW, db


def _penalty_backward(params: CriticParams, masks, deltas, g_bar: np.ndarray):
    """Weight gradients of ``sum(g_bar * grad_x D)`` with the masks held fixed."""
    W = params.weights
    dW = [np.zeros_like(w) for w in W]
    dW[0] += deltas[0].T @ g_bar
    u_bar = g_bar @ W[0].T
    for l in range(1, len(W)):
        a_bar = u_bar * masks[l - 1]
        dW[l] += deltas[l].T @ a_bar
        u_bar = a_bar @ W[l].T
    return dW


def critic_loss(params: CriticParams, x_real, x_gen, x_hat, lam: float) -> float:
    d_gen = forward(params, x_gen)
    d_real = forward(params, x_real)
    g = grad_input(params, x_hat)
    gp = (np.linalg.norm(g, axis=1) - 1.0) ** 2
    return float(np.mean(d_gen) - np.mean(d_real) + lam * np.mean(gp))


def critic_loss_and_grad(params: CriticParams, x_real, x_gen, x_hat, lam: float):
    """WGAN-GP critic loss and its gradient w.r.t. every weight and bias.

    ``loss = mean D(x_gen) - mean D(x_real) + lam * mean (||grad D(x_hat)|| - 1)^2``

    Returns ``(loss, grads)`` with ``grads`` a :class:`CriticParams` of the same shapes.
    """
    x_real = np.atleast_2d(x_real)
    x_gen = np.atleast_2d(x_gen)
    x_hat = np.atleast_2d(x_hat)
    B = x_gen.shape[0]
    if x_real.shape[0] != B or x_hat.shape[0] != B:
        raise ValueError("real, generated and interpolated batches must have equal size")

    stacked = np.concatenate([x_gen, x_real])
    inputs, masks, out = _forward(params, stacked)
    dout = np.concatenate([np.full(B, 1.0 / B), np.full(B, -1.0 / B)])
    dW, db = _backward(params, inputs, masks, dout)
    loss = float(out[:B].mean() - out[B:].mean())

    if lam != 0.0:
        _, hat_masks, _ = _forward(params, x_hat)
        deltas, g = _input_grad_chain(params, hat_masks)
        norms = np.linalg.norm(g, axis=1)
        loss += float(lam * np.mean((norms - 1.0) ** 2))
        safe = np.where(norms > 0, norms, 1.0)
        coef = np.where(norms > 0, 2.0 * lam / B * (norms - 1.0) / safe, 0.0)
        g_bar = coef[:, None] * g
        for l, extra in enumerate(_penalty_backward(params, hat_masks, deltas, g_bar)):
            dW[l] = dW[l] + extra
    return loss, CriticParams(dW, db)
