"""Oracle suites behind the `selftest` subcommand: GP, QP and gradient checks."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .approx import Mlp, mlp_backward, mlp_forward, mlp_init
from .gp import KernelHyper, Residual, gp_fit, gp_predict_batch, se_kernel
from .models import QpSpec
from .qp import kkt_check, solve_qp

LOGGER = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    name: str
    cases: int
    worst: float
    tolerance: float
    failures: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def dense_gp_posterior(
    X: np.ndarray,
    Y: np.ndarray,
    Q: np.ndarray,
    hyper: KernelHyper,
    actions: Optional[np.ndarray] = None,
    query_actions: Optional[np.ndarray] = None,
):
    """Posterior mean and latent std from a plain dense solve, no factorisation reuse."""
    K = se_kernel(X, X, hyper)
    k_star = se_kernel(X, Q, hyper)
    prior = np.full(Q.shape[0], hyper.signal_variance)
    if actions is not None:
        scale = np.asarray(hyper.action_scale, dtype=float)
        U, W = actions / scale, query_actions / scale
        K = K * (1.0 + U @ U.T)
        k_star = k_star * (1.0 + U @ W.T)
        prior = prior * (1.0 + np.sum(W ** 2, axis=1))
    K = K + hyper.noise_variance * np.eye(X.shape[0])
    mu = k_star.T @ np.linalg.solve(K, Y)
    var = prior - np.einsum("ij,ij->j", k_star, np.linalg.solve(K, k_star))
    return mu, np.sqrt(np.maximum(var, 0.0))


def gp_oracle_suite(instances: int = 50, seed: int = 0, tol: float = 1e-8) -> SuiteResult:
    """Cholesky-based predictions against dense solves; odd cases use an action input."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("gp", instances, 0.0, tol)
    for case in range(instances):
        n = int(rng.integers(1, 21))
        dim = int(rng.integers(1, 4))
        out = int(rng.integers(1, 3))
        hyper = KernelHyper(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)), float(rng.uniform(1e-2, 1e-1)))
        X = rng.uniform(-2, 2, size=(n, dim))
        Y = rng.normal(size=(n, out))
        Q = rng.uniform(-2, 2, size=(5, dim))
        A = W = None
        if case % 2:
            m = int(rng.integers(1, 3))
            hyper.action_scale = rng.uniform(1.0, 3.0, size=m).tolist()
            A = rng.uniform(-2, 2, size=(n, m))
            W = rng.uniform(-2, 2, size=(5, m))
        residuals = [Residual(x, y, None if A is None else A[i]) for i, (x, y) in enumerate(zip(X, Y))]
        model = gp_fit(residuals, hyper, cap=1000)
        mu, sigma = gp_predict_batch(model, Q, W)
        ref_mu, ref_sigma = dense_gp_posterior(X, Y, Q, hyper, A, W)
        err = max(float(np.max(np.abs(mu - ref_mu))), float(np.max(np.abs(sigma[:, 0] - ref_sigma))))
        result.worst = max(result.worst, err)
        if err > tol:
            result.failures.append(f"case {case}: max error {err:.3g}")
    return result


def random_qp(rng: np.random.Generator, action_dim: int) -> QpSpec:
    n_rows = int(rng.integers(0, 4))
    rows = [(rng.normal(size=action_dim), float(rng.normal(scale=2.0))) for _ in range(n_rows)]
    low = -rng.uniform(0.5, 3.0, size=action_dim)
    high = rng.uniform(0.5, 3.0, size=action_dim)
    return QpSpec.build(rows, low, high, float(rng.uniform(1.0, 50.0)))


def grid_oracle(spec: QpSpec, points: int) -> float:
    """Best objective over a box grid, with eps set to its optimal value at each grid point."""
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(spec.low, spec.high)]
    grid = np.array(list(itertools.product(*axes)))
    if spec.n_rows:
        eps = np.maximum(0.0, np.max(spec.offsets[None, :] - grid @ spec.coeffs.T, axis=1))
    else:
        eps = np.zeros(grid.shape[0])
    values = 0.5 * np.sum(grid ** 2, axis=1) + spec.slack_weight * eps
    return float(np.min(values))


def qp_oracle_suite(instances: int = 200, seed: int = 0, tol: float = 1e-7) -> SuiteResult:
    rng = np.random.default_rng(seed)
    result = SuiteResult("qp", instances, 0.0, tol)
    grid_points = {1: 2001, 2: 161, 3: 31}
    for case in range(instances):
        action_dim = int(rng.integers(1, 4))
        spec = random_qp(rng, action_dim)
        solution = solve_qp(spec)
        report = kkt_check(spec, solution)
        oracle = grid_oracle(spec, grid_points[action_dim])
        gap = solution.objective - oracle
        result.worst = max(result.worst, report.max_violation)
        if report.max_violation > tol:
            result.failures.append(f"case {case}: KKT residual {report.max_violation:.3g}")
        if gap > tol * (1.0 + abs(oracle)):
            result.failures.append(f"case {case}: objective {solution.objective:.9g} above grid optimum {oracle:.9g}")
    return result


def finite_difference_error(mlp: Mlp, x: np.ndarray, upstream: np.ndarray, step: float = 1e-5, floor: float = 1e-3) -> float:
    """Worst per-entry relative error between backprop and central differences.

    Each parameter and input entry is compared on its own; entries whose
    gradient is below `floor` in magnitude are measured against `floor`.
    """
    grads = mlp_backward(mlp, x, upstream)

    def loss() -> float:
        return float(np.sum(upstream * mlp_forward(mlp, x)))

    analytic, numeric = [], []
    for params, grad_list in ((mlp.weights, grads.weights), (mlp.biases, grads.biases)):
        for param, grad in zip(params, grad_list):
            for idx in np.ndindex(param.shape):
                saved = param[idx]
                param[idx] = saved + step
                plus = loss()
                param[idx] = saved - step
                minus = loss()
                param[idx] = saved
                analytic.append(grad[idx])
                numeric.append((plus - minus) / (2 * step))
    for idx in np.ndindex(x.shape):
        shifted = x.copy()
        shifted[idx] += step
        plus = float(np.sum(upstream * mlp_forward(mlp, shifted)))
        shifted[idx] -= 2 * step
        minus = float(np.sum(upstream * mlp_forward(mlp, shifted)))
        analytic.append(grads.inputs[idx])
        numeric.append((plus - minus) / (2 * step))
    a, n = np.array(analytic), np.array(numeric)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale, initial=0.0))


def gradient_suite(nets: int = 20, seed: int = 0, tol: float = 1e-4) -> SuiteResult:
    rng = np.random.default_rng(seed)
    result = SuiteResult("gradient", nets, 0.0, tol)
    activations = ("identity", "tanh", "scaled_tanh")
    for case in range(nets):
        depth = int(rng.integers(0, 3))
        sizes = [int(rng.integers(1, 5))] + [int(rng.integers(2, 9)) for _ in range(depth)] + [int(rng.integers(1, 4))]
        activation = activations[case % len(activations)]
        mlp = mlp_init(sizes, activation, seed=seed + case, output_scale=3.0)
        batch = int(rng.integers(1, 4))
        x = rng.normal(size=(batch, sizes[0]))
        upstream = rng.normal(size=(batch, sizes[-1]))
        err = finite_difference_error(mlp, x, upstream)
        result.worst = max(result.worst, err)
        if err > tol:
            result.failures.append(f"net {case} {sizes} ({activation}): relative error {err:.3g}")
    return result


SUITES: Dict[str, Callable[..., SuiteResult]] = {
    "gp": gp_oracle_suite,
    "qp": qp_oracle_suite,
    "gradient": gradient_suite,
}


def run_selftest(names: List[str] | None = None, seed: int = 0) -> List[SuiteResult]:
    results = []
    for name in names or list(SUITES):
        suite = SUITES[name](seed=seed)
        status = "ok" if suite.passed else "FAILED"
        LOGGER.info("Selftest %s: %s (%d cases, worst %.3g, tolerance %.0e)", name, status, suite.cases, suite.worst, suite.tolerance)
        for failure in suite.failures:
            LOGGER.error("  %s", failure)
        results.append(suite)
    return results
