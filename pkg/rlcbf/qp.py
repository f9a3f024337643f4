"""Primal active-set solver for the barrier QP.

    minimize    0.5 * |a|^2 + K_eps * eps
    subject to  c_i^T a + eps >= b_i      (barrier rows)
                low <= a <= high          (actuator box)
                eps >= 0

The stacked variable is z = (a, eps). Constraint rows are ordered: barrier
rows, box lower bounds, box upper bounds, then the eps bound. Equality
subproblems are solved in the structured form below rather than through a
generic KKT factorisation, so K_eps = 1e12 never enters a matrix.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import nnls

from .errors import QpSpecError, SolverError
from .models import KktReport, QpSolution, QpSpec

LOGGER = logging.getLogger(__name__)

STEP_TOL = 1e-12
DUAL_TOL = 1e-10
NULL_TOL = 1e-10


def validate_spec(spec: QpSpec) -> None:
    m = spec.action_dim
    if spec.high.shape != (m,):
        raise QpSpecError(f"box bounds have shapes {spec.low.shape} and {spec.high.shape}")
    if spec.coeffs.shape != (spec.n_rows, m):
        raise QpSpecError(f"barrier coefficients have shape {spec.coeffs.shape}, expected {(spec.n_rows, m)}")
    if np.any(spec.low > spec.high):
        bad = [int(j) for j in np.flatnonzero(spec.low > spec.high)]
        raise QpSpecError(f"inconsistent box: a_low > a_high at coordinates {bad}")
    if not spec.slack_weight > 0:
        raise QpSpecError(f"slack weight must be positive, got {spec.slack_weight}")
    if not (np.all(np.isfinite(spec.coeffs)) and np.all(np.isfinite(spec.offsets))):
        raise QpSpecError("barrier rows must be finite")


def constraint_rows(spec: QpSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Stacked G z >= h over z = (a, eps)."""
    m, r = spec.action_dim, spec.n_rows
    G = np.zeros((r + 2 * m + 1, m + 1))
    h = np.zeros(r + 2 * m + 1)
    G[:r, :m] = spec.coeffs
    G[:r, m] = 1.0
    h[:r] = spec.offsets
    G[r:r + m, :m] = np.eye(m)
    h[r:r + m] = spec.low
    G[r + m:r + 2 * m, :m] = -np.eye(m)
    h[r + m:r + 2 * m] = -spec.high
    G[-1, m] = 1.0
    return G, h


def objective(spec: QpSpec, a: np.ndarray, eps: float) -> float:
    return float(0.5 * np.dot(a, a) + spec.slack_weight * eps)


def _split_working_set(spec: QpSpec, working: List[int]):
    m, r = spec.action_dim, spec.n_rows
    rows = sorted(i for i in working if i < r)
    fixed = {}
    for i in working:
        if r <= i < r + m:
            fixed[i - r] = spec.low[i - r]
        elif r + m <= i < r + 2 * m:
            fixed[i - r - m] = spec.high[i - r - m]
    eps_fixed = (r + 2 * m) in working
    return rows, fixed, eps_fixed


def _equality_minimizer(spec: QpSpec, working: List[int]):
    """Minimizer of the objective on {constraints in working set hold with equality}.

    Returns (z, row multipliers) or (None, ray) when the subproblem is unbounded along eps.
    """
    m = spec.action_dim
    rows, fixed, eps_fixed = _split_working_set(spec, working)
    free = [j for j in range(m) if j not in fixed]
    a = np.zeros(m)
    for j, value in fixed.items():
        a[j] = value
    if not rows:
        if eps_fixed:
            return np.append(a, 0.0), np.zeros(0)
        ray = np.zeros(m + 1)
        ray[m] = -1.0
        return None, ray
    A = spec.coeffs[np.ix_(rows, free)]
    fixed_idx = sorted(fixed)
    rhs = spec.offsets[rows] - spec.coeffs[np.ix_(rows, fixed_idx)] @ a[fixed_idx]
    gram = A @ A.T
    if eps_fixed:
        lam = np.linalg.solve(gram, rhs)
        eps = 0.0
    else:
        k = len(rows)
        system = np.zeros((k + 1, k + 1))
        system[:k, :k] = gram
        system[:k, k] = 1.0
        system[k, :k] = 1.0
        # K_eps enters only through the unit right-hand side below; when the
        # rows admit no common ascent direction its image A^T lam_K is zero.
        part = np.linalg.solve(system, np.append(rhs, 0.0))
        unit = np.linalg.solve(system, np.eye(k + 1)[k])
        lift = A.T @ unit[:k]
        scale = 1.0 + np.max(np.abs(A), initial=0.0) * np.max(np.abs(unit[:k]), initial=0.0)
        if np.max(np.abs(lift), initial=0.0) <= NULL_TOL * scale:
            lift = np.zeros_like(lift)
            unit[k] = 0.0
        lam = part[:k] + spec.slack_weight * unit[:k]
        eps = float(part[k] + spec.slack_weight * unit[k])
        a[free] = A.T @ part[:k] + spec.slack_weight * lift
        return np.append(a, eps), lam
    a[free] = A.T @ lam
    return np.append(a, eps), lam


def _multipliers(spec: QpSpec, working: List[int], z: np.ndarray, row_lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Multipliers of the working set and the round-off tolerance of each one."""
    m, r = spec.action_dim, spec.n_rows
    rows, _, eps_fixed = _split_working_set(spec, working)
    lam = np.zeros(r + 2 * m + 1)
    tol = np.zeros(r + 2 * m + 1)
    lam[rows] = row_lam
    tol[rows] = DUAL_TOL * (1.0 + np.max(np.abs(row_lam), initial=0.0))
    pulled = spec.coeffs[rows].T @ row_lam if rows else np.zeros(m)
    spread = np.abs(spec.coeffs[rows]).T @ np.abs(row_lam) if rows else np.zeros(m)
    for i in working:
        if r <= i < r + m:
            j = i - r
            lam[i] = z[j] - pulled[j]
        elif r + m <= i < r + 2 * m:
            j = i - r - m
            lam[i] = pulled[j] - z[j]
        else:
            continue
        tol[i] = DUAL_TOL * (1.0 + abs(z[j]) + spread[j])
    if eps_fixed:
        lam[-1] = spec.slack_weight - float(np.sum(row_lam))
        tol[-1] = DUAL_TOL * spec.slack_weight
    return lam, tol


def solve_qp(spec: QpSpec, max_iter: Optional[int] = None) -> QpSolution:
    validate_spec(spec)
    m = spec.action_dim
    G, h = constraint_rows(spec)
    n_cons = G.shape[0]
    max_iter = max_iter or 50 * (n_cons + m + 1)

    a0 = np.clip(np.zeros(m), spec.low, spec.high)
    shortfall = spec.offsets - spec.coeffs @ a0 if spec.n_rows else np.zeros(0)
    z = np.append(a0, max(0.0, float(np.max(shortfall, initial=0.0))))
    working: List[int] = []

    for iteration in range(1, max_iter + 1):
        target, extra = _equality_minimizer(spec, working)
        if target is None:
            direction, cap = extra, np.inf
        else:
            direction, cap = target - z, 1.0
            if np.max(np.abs(direction)) <= STEP_TOL * (1.0 + np.max(np.abs(z))):
                z = target
                lam, tol = _multipliers(spec, working, z, extra)
                violators = [i for i in working if lam[i] < -tol[i]]
                if not violators:
                    return _finish(spec, z, working, lam, iteration)
                worst = min(violators, key=lambda i: lam[i] * DUAL_TOL / tol[i])
                LOGGER.debug("QP iteration %d: dropping constraint %d (multiplier %.3g)", iteration, worst, lam[worst])
                working.remove(worst)
                continue

        slopes = G @ direction
        alpha, blocking = cap, None
        norm = np.max(np.abs(direction))
        for i in range(n_cons):
            if i in working or slopes[i] >= -STEP_TOL * norm:
                continue
            step = max(0.0, (h[i] - G[i] @ z) / slopes[i])
            if step < alpha:
                alpha, blocking = step, i
        if not np.isfinite(alpha):
            raise SolverError("QP unbounded along the slack direction", iteration, working, z)
        z = target if (blocking is None and target is not None) else z + alpha * direction
        if blocking is not None:
            working.append(blocking)

    raise SolverError("QP iteration cap exceeded", max_iter, working, z)


def _finish(spec: QpSpec, z: np.ndarray, working: List[int], lam: np.ndarray, iterations: int) -> QpSolution:
    m = spec.action_dim
    a = np.clip(z[:m], spec.low, spec.high)
    eps = max(0.0, float(z[m]))
    solution = QpSolution(a, eps, objective(spec, a, eps), sorted(working), 0.0, lam, iterations)
    solution.kkt_residual = kkt_check(spec, solution).max_violation
    return solution


def _estimate_multipliers(G: np.ndarray, grad: np.ndarray, slack: np.ndarray, tol: float) -> np.ndarray:
    lam = np.zeros(G.shape[0])
    active = np.flatnonzero(np.abs(slack) <= tol)
    if active.size:
        lam[active], _ = nnls(G[active].T, grad)
    return lam


def kkt_check(spec: QpSpec, solution: QpSolution, tol: float = 1e-9) -> KktReport:
    """Scaled KKT residuals of a candidate (a, eps).

    Stationarity is measured per coordinate relative to the magnitudes that
    cancel in it; complementarity is relative to the multiplier size.
    """
    G, h = constraint_rows(spec)
    z = np.append(np.asarray(solution.a, dtype=float), float(solution.eps))
    grad = np.append(z[:-1], spec.slack_weight)
    finite = np.isfinite(h)
    slack = np.where(finite, G @ z - np.where(finite, h, 0.0), np.inf)
    lam = solution.multipliers
    if lam is None or lam.shape != (G.shape[0],):
        lam = _estimate_multipliers(G[finite], grad, slack[finite], tol)
        full = np.zeros(G.shape[0])
        full[finite] = lam
        lam = full
    pulled = G.T @ lam
    spread = np.abs(G.T) @ np.abs(lam)
    stationarity = float(np.max(np.abs(grad - pulled) / (1.0 + np.abs(grad) + spread)))
    primal = float(np.max(np.maximum(0.0, -slack[finite]), initial=0.0))
    dual = float(np.max(np.maximum(0.0, -lam), initial=0.0) / (1.0 + np.max(np.abs(grad))))
    comp = float(np.max(np.abs(lam[finite] * slack[finite]) / (1.0 + np.abs(lam[finite])), initial=0.0))
    return KktReport(stationarity, primal, dual, comp)
