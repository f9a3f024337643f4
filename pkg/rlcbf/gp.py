"""Gaussian-process regression of the residual dynamics d(s, a).

One scalar GP per state dimension; all dimensions share the kernel matrix and
its Cholesky factor, so the predictive standard deviation is identical across
output dimensions.

With `KernelHyper.action_scale` set, the kernel is
k((s, a), (s', a')) = k_se(s, s') * (1 + (a / scale) . (a' / scale)), i.e. the
residual is modelled as d0(s) + D1(s) a. The posterior mean is then affine in
the action and the posterior variance is a convex quadratic in it.
"""
from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import ModelError, ShapeError
from .models import NominalModel, ResidualBand

LOGGER = logging.getLogger(__name__)

JITTER_LEVELS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass
class KernelHyper:
    lengthscale: Union[float, Sequence[float]] = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 1e-2
    action_scale: Optional[Union[float, Sequence[float]]] = None


@dataclass
class Residual:
    s: np.ndarray
    d_hat: np.ndarray
    a: Optional[np.ndarray] = None


@dataclass
class GpModel:
    inputs: np.ndarray
    targets: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    hyper: KernelHyper
    capacity: int
    output_dim: int
    jitter: float = 0.0
    input_dim: Optional[int] = None
    actions: Optional[np.ndarray] = None  # scaled actions of the training points

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def action_dim(self) -> int:
        return 0 if self.actions is None else int(self.actions.shape[1])

    def predict(self, s_query: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return gp_predict(self, s_query)

    def band(self, x: np.ndarray, low: np.ndarray, high: np.ndarray) -> ResidualBand:
        return gp_band(self, x, low, high)


def se_kernel(A: np.ndarray, B: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    """k(s, s') = sf2 * exp(-|s - s'|^2 / (2 l^2)), lengthscale scalar or per input dimension."""
    scale = np.asarray(hyper.lengthscale, dtype=float)
    a = np.atleast_2d(A) / scale
    b = np.atleast_2d(B) / scale
    sq = np.sum(a ** 2, axis=1)[:, None] + np.sum(b ** 2, axis=1)[None, :] - 2.0 * a @ b.T
    return hyper.signal_variance * np.exp(-0.5 * np.maximum(sq, 0.0))


def scale_actions(actions: np.ndarray, hyper: KernelHyper) -> np.ndarray:
    if hyper.action_scale is None:
        raise ModelError("kernel has no action input")
    scale = np.asarray(hyper.action_scale, dtype=float)
    if np.any(scale <= 0):
        raise ModelError("action_scale must be positive")
    return np.atleast_2d(np.asarray(actions, dtype=float)) / scale


def _wrap(values: np.ndarray) -> np.ndarray:
    return np.mod(values + np.pi, 2.0 * np.pi) - np.pi


def extract_residual(
    s_t: np.ndarray,
    a_t: np.ndarray,
    s_next: np.ndarray,
    nominal: NominalModel,
    time: float = 0.0,
    angle_dims: Iterable[int] = (),
    features: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Residual:
    s_t = np.asarray(s_t, dtype=float)
    s_next = np.asarray(s_next, dtype=float)
    a_t = np.atleast_1d(np.asarray(a_t, dtype=float))
    if not (np.all(np.isfinite(s_t)) and np.all(np.isfinite(a_t)) and np.all(np.isfinite(s_next))):
        raise ModelError("non-finite transition passed to extract_residual")
    d_hat = s_next - nominal.predict(s_t, a_t, time)
    dims = list(angle_dims)
    if dims:
        d_hat[dims] = _wrap(d_hat[dims])
    inputs = features(s_t) if features is not None else s_t
    return Residual(np.asarray(inputs, dtype=float), d_hat, a_t.copy())


def gp_fit(
    residuals: Sequence[Residual],
    hyper: KernelHyper,
    cap: int = 1000,
    output_dim: Optional[int] = None,
    input_dim: Optional[int] = None,
) -> GpModel:
    kept = list(residuals)[-cap:] if cap > 0 else []
    if output_dim is None:
        if not kept:
            raise ModelError("cannot infer output dimension from an empty residual set")
        output_dim = int(kept[0].d_hat.shape[0])
    with_actions = hyper.action_scale is not None
    if not kept:
        action_dim = int(np.atleast_1d(hyper.action_scale).size) if with_actions else 0
        width = input_dim or 0
        return GpModel(
            np.zeros((0, width)), np.zeros((0, output_dim)), np.zeros((0, 0)), np.zeros((0, output_dim)),
            hyper, cap, output_dim, 0.0, input_dim, np.zeros((0, action_dim)) if with_actions else None,
        )

    X = np.array([r.s for r in kept], dtype=float)
    Y = np.array([r.d_hat for r in kept], dtype=float)
    if Y.shape[1] != output_dim:
        raise ShapeError(f"residual dimension {Y.shape[1]} does not match output dimension {output_dim}")
    if input_dim is not None and X.shape[1] != input_dim:
        raise ShapeError(f"residual inputs have dimension {X.shape[1]}, expected {input_dim}")
    K = se_kernel(X, X, hyper)
    U = None
    if with_actions:
        if any(r.a is None for r in kept):
            raise ShapeError("an action-input GP needs the action of every residual")
        U = scale_actions(np.array([np.atleast_1d(r.a) for r in kept], dtype=float), hyper)
        K = K * (1.0 + U @ U.T)
    K = K + hyper.noise_variance * np.eye(len(kept))
    chol = None
    used = 0.0
    for jitter in JITTER_LEVELS:
        try:
            chol = cholesky(K + jitter * np.eye(len(kept)), lower=True)
            used = jitter
            break
        except LinAlgError:
            continue
    if chol is None:
        raise ModelError(f"kernel matrix is not positive definite after jitter {JITTER_LEVELS[-1]:g} ({len(kept)} points)")
    if used > 0:
        LOGGER.warning("GP Cholesky needed jitter %.1e on %d points", used, len(kept))
    alpha = cho_solve((chol, True), Y)
    LOGGER.debug("GP fitted on %d residuals (cap %d)", len(kept), cap)
    return GpModel(X, Y, chol, alpha, hyper, cap, output_dim, used, int(X.shape[1]), U)


def _check_queries(model: GpModel, Q: np.ndarray) -> None:
    if not np.all(np.isfinite(Q)):
        raise ModelError("non-finite GP query")
    expected = model.input_dim if model.input_dim is not None else (model.inputs.shape[1] if model.size else None)
    if expected is not None and Q.shape[1] != expected:
        raise ShapeError(f"GP query has dimension {Q.shape[1]}, model inputs have {expected}")


def gp_predict_batch(
    model: GpModel,
    queries: np.ndarray,
    actions: Optional[np.ndarray] = None,
    observation_noise: bool = False,
) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior mean and std at each query row.

    For an action-input model `actions` gives one action per query (zero when
    omitted). The std is the latent one unless `observation_noise` is set.
    """
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    _check_queries(model, Q)
    n_q = Q.shape[0]
    prior = np.full(n_q, model.hyper.signal_variance)
    W = None
    if model.actions is not None:
        if actions is None:
            W = np.zeros((n_q, model.action_dim))
        else:
            W = scale_actions(actions, model.hyper)
            if W.shape != (n_q, model.action_dim):
                raise ShapeError(f"GP query actions have shape {W.shape}, expected {(n_q, model.action_dim)}")
            if not np.all(np.isfinite(W)):
                raise ModelError("non-finite GP query action")
        prior = prior * (1.0 + np.sum(W ** 2, axis=1))
    if model.size == 0:
        mu = np.zeros((n_q, model.output_dim))
        var = prior
    else:
        k_star = se_kernel(model.inputs, Q, model.hyper)
        if W is not None:
            k_star = k_star * (1.0 + model.actions @ W.T)
        mu = k_star.T @ model.alpha
        v = solve_triangular(model.chol, k_star, lower=True)
        var = np.maximum(prior - np.sum(v ** 2, axis=0), 0.0)
    if observation_noise:
        var = var + model.hyper.noise_variance
    sigma = np.repeat(np.sqrt(var)[:, None], model.output_dim, axis=1)
    return mu, sigma


def gp_predict(model: GpModel, s_query: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mu, sigma = gp_predict_batch(model, np.atleast_1d(s_query)[None, :])
    return mu[0], sigma[0]


def gp_band(model: GpModel, x: np.ndarray, low: np.ndarray, high: np.ndarray) -> ResidualBand:
    """Residual band at input x for any action in [low, high].

    The std includes the observation noise. For an action-input model it is the
    largest std over the box corners, which bounds it over the whole box since
    the posterior variance is convex in the action.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    Q = x[None, :]
    _check_queries(model, Q)
    if model.actions is None:
        mu, sigma = gp_predict_batch(model, Q, observation_noise=True)
        return ResidualBand(mu[0], sigma[0], np.zeros((model.output_dim, low.shape[0])))
    if low.shape[0] != model.action_dim:
        raise ShapeError(f"action box has dimension {low.shape[0]}, model actions have {model.action_dim}")

    corners = np.array(list(itertools.product(*zip(low, high))), dtype=float)
    _, sigma = gp_predict_batch(model, np.repeat(Q, len(corners), axis=0), corners, observation_noise=True)
    if model.size == 0:
        return ResidualBand(np.zeros(model.output_dim), sigma.max(axis=0), np.zeros((model.output_dim, model.action_dim)))
    kx = se_kernel(model.inputs, Q, model.hyper)[:, 0]
    weighted = model.alpha * kx[:, None]
    scale = np.broadcast_to(np.asarray(model.hyper.action_scale, dtype=float), (model.action_dim,))
    gain = (weighted.T @ model.actions) / scale
    return ResidualBand(weighted.sum(axis=0), sigma.max(axis=0), gain)


def confidence_interval(mu: np.ndarray, sigma: np.ndarray, k_delta: float) -> Tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return mu - k_delta * sigma, mu + k_delta * sigma


class ResidualWindow:
    """Most recent `cap` residuals, oldest dropped first."""

    def __init__(self, cap: int = 1000):
        self.cap = cap
        self._items: Deque[Residual] = deque(maxlen=cap)

    def __len__(self) -> int:
        return len(self._items)

    def extend(self, residuals: Iterable[Residual]) -> None:
        self._items.extend(residuals)

    def items(self) -> List[Residual]:
        return list(self._items)


def window_update(
    window: ResidualWindow,
    residuals: Iterable[Residual],
    hyper: KernelHyper,
    output_dim: int,
    input_dim: Optional[int] = None,
) -> GpModel:
    window.extend(residuals)
    return gp_fit(window.items(), hyper, window.cap, output_dim, input_dim)


class ZeroResidual:
    """Residual model for a nominal model that is already exact: mu = 0, sigma = 0."""

    def __init__(self, output_dim: int):
        self.output_dim = output_dim

    def predict(self, s_query: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.output_dim), np.zeros(self.output_dim)

    def band(self, x: np.ndarray, low: np.ndarray, high: np.ndarray) -> ResidualBand:
        width = np.atleast_1d(low).shape[0]
        return ResidualBand(np.zeros(self.output_dim), np.zeros(self.output_dim), np.zeros((self.output_dim, width)))
