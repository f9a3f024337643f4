"""Small dense feedforward networks with hand-written backprop and Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError

LOGGER = logging.getLogger(__name__)

OUTPUT_ACTIVATIONS = ("identity", "tanh", "scaled_tanh")


@dataclass
class Mlp:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output_activation: str = "identity"
    output_scale: float = 1.0

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def clone(self) -> "Mlp":
        return Mlp(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
            self.output_scale,
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self, x)


@dataclass
class MlpGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: np.ndarray


@dataclass
class OptimState:
    m_weights: List[np.ndarray]
    m_biases: List[np.ndarray]
    v_weights: List[np.ndarray]
    v_biases: List[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0


def mlp_init(layer_sizes: Sequence[int], output_activation: str = "identity", seed: int = 0, output_scale: float = 1.0) -> Mlp:
    sizes = [int(n) for n in layer_sizes]
    if len(sizes) < 2 or any(n < 1 for n in sizes):
        raise ConfigError([f"layer sizes must have at least 2 positive entries, got {list(layer_sizes)}"])
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ConfigError([f"unknown output activation {output_activation!r}"])
    if output_activation == "scaled_tanh" and output_scale <= 0:
        raise ConfigError(["scaled_tanh output needs a positive scale"])
    rng = np.random.default_rng(seed)
    weights: List[np.ndarray] = []
    biases: List[np.ndarray] = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(sizes, weights, biases, output_activation, float(output_scale))


def zero_output_layer(mlp: Mlp) -> Mlp:
    mlp.weights[-1][...] = 0.0
    mlp.biases[-1][...] = 0.0
    return mlp


def _as_batch(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    batch = np.atleast_2d(np.asarray(x, dtype=float))
    if batch.shape[1] != mlp.input_dim:
        raise ShapeError(f"expected input of dimension {mlp.input_dim}, got {batch.shape[1]}")
    return batch


def _output(mlp: Mlp, z: np.ndarray) -> np.ndarray:
    if mlp.output_activation == "identity":
        return z
    if mlp.output_activation == "tanh":
        return np.tanh(z)
    return mlp.output_scale * np.tanh(z)


def _output_slope(mlp: Mlp, z: np.ndarray) -> np.ndarray:
    if mlp.output_activation == "identity":
        return np.ones_like(z)
    slope = 1.0 - np.tanh(z) ** 2
    if mlp.output_activation == "tanh":
        return slope
    return mlp.output_scale * slope


def _forward_cache(mlp: Mlp, batch: np.ndarray):
    activations = [batch]
    hidden = batch
    last = len(mlp.weights) - 1
    z = hidden
    for idx, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = hidden @ w.T + b
        if idx < last:
            hidden = np.tanh(z)
            activations.append(hidden)
    return activations, z


def mlp_forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    batch = _as_batch(mlp, x)
    _, z = _forward_cache(mlp, batch)
    out = _output(mlp, z)
    return out[0] if np.ndim(x) == 1 else out


def mlp_backward(mlp: Mlp, x: np.ndarray, upstream: np.ndarray) -> MlpGrads:
    """Gradients of sum(upstream * mlp(x)) w.r.t. every parameter and the input."""
    batch = _as_batch(mlp, x)
    upstream_batch = np.atleast_2d(np.asarray(upstream, dtype=float))
    if upstream_batch.shape != (batch.shape[0], mlp.output_dim):
        raise ShapeError(f"upstream gradient shape {upstream_batch.shape} does not match output {(batch.shape[0], mlp.output_dim)}")
    activations, z = _forward_cache(mlp, batch)
    delta = upstream_batch * _output_slope(mlp, z)
    grad_w: List[np.ndarray] = [np.zeros_like(w) for w in mlp.weights]
    grad_b: List[np.ndarray] = [np.zeros_like(b) for b in mlp.biases]
    for idx in range(len(mlp.weights) - 1, -1, -1):
        grad_w[idx] = delta.T @ activations[idx]
        grad_b[idx] = delta.sum(axis=0)
        delta = delta @ mlp.weights[idx]
        if idx > 0:
            delta = delta * (1.0 - activations[idx] ** 2)
    inputs = delta[0] if np.ndim(x) == 1 else delta
    return MlpGrads(grad_w, grad_b, inputs)


def optim_init(mlp: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimState:
    return OptimState(
        [np.zeros_like(w) for w in mlp.weights],
        [np.zeros_like(b) for b in mlp.biases],
        [np.zeros_like(w) for w in mlp.weights],
        [np.zeros_like(b) for b in mlp.biases],
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def optim_step(mlp: Mlp, grads: MlpGrads, state: OptimState) -> Mlp:
    """One Adam descent step with bias correction; mutates mlp and state in place."""
    for idx, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != mlp.weights[idx].shape or gb.shape != mlp.biases[idx].shape:
            raise ShapeError(f"gradient shape mismatch at layer {idx}")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise TrainingError("non-finite gradient", layer=idx)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    pairs = [
        (mlp.weights, grads.weights, state.m_weights, state.v_weights),
        (mlp.biases, grads.biases, state.m_biases, state.v_biases),
    ]
    for params, grad_list, firsts, seconds in pairs:
        for param, grad, m, v in zip(params, grad_list, firsts, seconds):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return mlp


def soft_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    for tw, sw in zip(target.weights, source.weights):
        tw *= 1.0 - tau
        tw += tau * sw
    for tb, sb in zip(target.biases, source.biases):
        tb *= 1.0 - tau
        tb += tau * sb
    return target


def mse_loss(mlp: Mlp, inputs: np.ndarray, targets: np.ndarray) -> float:
    pred = mlp_forward(mlp, np.atleast_2d(inputs))
    return float(np.mean((pred - np.asarray(targets, dtype=float).reshape(pred.shape)) ** 2))


def fit_regression(
    mlp: Mlp,
    state: OptimState,
    inputs: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    batch_size: int = 64,
    rng: Optional[np.random.Generator] = None,
) -> List[float]:
    """Mean-squared-error minibatch regression; returns the loss after each epoch."""
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    Y = np.asarray(targets, dtype=float).reshape(X.shape[0], -1)
    n = X.shape[0]
    rng = rng or np.random.default_rng(0)
    history: List[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pred = mlp_forward(mlp, X[idx])
            upstream = 2.0 * (pred - Y[idx]) / pred.size
            optim_step(mlp, mlp_backward(mlp, X[idx], upstream), state)
        history.append(mse_loss(mlp, X, Y))
    return history


def flat_params(mlp: Mlp) -> np.ndarray:
    parts = []
    for w, b in zip(mlp.weights, mlp.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def save_params(mlp: Mlp, path: str | Path) -> None:
    header = np.array([len(mlp.layer_sizes), *mlp.layer_sizes], dtype="<i8")
    with open(path, "wb") as file:
        file.write(header.tobytes())
        file.write(flat_params(mlp).astype("<f8").tobytes())
    LOGGER.debug("Saved %s parameters to %s", mlp.layer_sizes, path)


def load_params(path: str | Path, output_activation: str = "identity", output_scale: float = 1.0) -> Mlp:
    raw = Path(path).read_bytes()
    count = int(np.frombuffer(raw[:8], dtype="<i8")[0])
    sizes = [int(n) for n in np.frombuffer(raw[8:8 * (count + 1)], dtype="<i8")]
    values = np.frombuffer(raw[8 * (count + 1):], dtype="<f8")
    mlp = mlp_init(sizes, output_activation, 0, output_scale)
    expected = sum(w.size + b.size for w, b in zip(mlp.weights, mlp.biases))
    if values.size != expected:
        raise ShapeError(f"{path}: expected {expected} parameters for {sizes}, found {values.size}")
    offset = 0
    for idx, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        mlp.weights[idx] = values[offset:offset + w.size].reshape(w.shape).copy()
        offset += w.size
        mlp.biases[idx] = values[offset:offset + b.size].copy()
        offset += b.size
    return mlp
