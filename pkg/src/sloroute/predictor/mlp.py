"""Minimal dependency-free MLP: ReLU hidden layers, identity output, Huber loss.

Training is plain mini-batch gradient descent with a fixed learning rate so
that runs are bit-reproducible from the seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass
class Mlp:
    """Stack of linear layers; weights[i] maps dims[i] -> dims[i+1]."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def depth(self) -> int:
        return len(self.weights)

    def validate(self) -> None:
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[1] != self.weights[k + 1].shape[0]:
                raise ValidationError(f"layer {k}->{k + 1} dimensions do not chain")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValidationError("bias shape must match layer output dim")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError("network parameters must be finite")


def init_mlp(dims: list[int], rng: np.random.Generator) -> Mlp:
    """He-normal initialization; biases start at zero."""
    if len(dims) < 2:
        raise ValidationError("an MLP needs at least input and output dims")
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Mlp(weights=weights, biases=biases)


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning the output and per-layer inputs for backprop."""
    layer_inputs = []
    h = x
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        layer_inputs.append(h)
        h = h @ w + b
        if k != last:
            h = np.maximum(h, 0.0)
    return h, layer_inputs


def predict(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    out, _ = forward(mlp, x)
    return out


def backward(
    mlp: Mlp, layer_inputs: list[np.ndarray], grad_out: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backpropagate d(loss)/d(output) into per-layer weight/bias gradients.

    ``layer_inputs`` must come from :func:`forward` on the same batch.
    ReLU masks are recomputed from the stored pre-layer inputs.
    """
    grad_w = [np.zeros_like(w) for w in mlp.weights]
    grad_b = [np.zeros_like(b) for b in mlp.biases]
    delta = grad_out
    for k in range(len(mlp.weights) - 1, -1, -1):
        x_k = layer_inputs[k]
        grad_w[k] = x_k.T @ delta
        grad_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ mlp.weights[k].T
            # ReLU applied to the output of layer k-1 == input of layer k
            delta = delta * (x_k > 0.0)
    return grad_w, grad_b


def huber_loss(residual: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
    """Mean Huber loss of residuals plus d(loss)/d(residual) per sample."""
    abs_r = np.abs(residual)
    quadratic = abs_r <= delta
    loss = np.where(
        quadratic, 0.5 * residual**2, delta * (abs_r - 0.5 * delta)
    ).mean()
    grad = np.where(quadratic, residual, delta * np.sign(residual)) / residual.size
    return float(loss), grad


def sgd_step(mlp: Mlp, grad_w: list[np.ndarray], grad_b: list[np.ndarray], lr: float) -> None:
    for k in range(len(mlp.weights)):
        mlp.weights[k] -= lr * grad_w[k]
        mlp.biases[k] -= lr * grad_b[k]


def train_regressor(
    mlp: Mlp,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    learning_rate: float,
    batch_size: int,
    huber_delta: float,
    rng: np.random.Generator,
) -> float:
    """Fit a scalar-output MLP with mini-batch GD; returns the final epoch loss."""
    n = x.shape[0]
    if n == 0:
        raise ValidationError("cannot train on an empty dataset")
    y = y.reshape(-1, 1)
    last_loss = float("inf")
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            out, cache = forward(mlp, x[idx])
            residual = out - y[idx]
            loss, grad_res = huber_loss(residual, huber_delta)
            grad_w, grad_b = backward(mlp, cache, grad_res)
            sgd_step(mlp, grad_w, grad_b, learning_rate)
            epoch_loss += loss * len(idx)
        last_loss = epoch_loss / n
    return last_loss
