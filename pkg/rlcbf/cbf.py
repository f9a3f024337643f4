from __future__ import annotations

import logging
from typing import Callable, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError, SolverError
from .gp import confidence_interval
from .models import AffineBarrier, AuditReport, AuditStep, FilterResult, NominalModel, QpSpec, ResidualBand, StepRecord
from .qp import solve_qp

LOGGER = logging.getLogger(__name__)


class ResidualModel(Protocol):
    def band(self, x: np.ndarray, low: np.ndarray, high: np.ndarray) -> ResidualBand:
        ...


def make_barrier(p: Sequence[float], q: float, eta: float = 0.5, name: str = "") -> AffineBarrier:
    vec = np.asarray(p, dtype=float)
    problems: List[str] = []
    if vec.ndim != 1 or not np.any(vec != 0):
        problems.append(f"barrier {name or '?'}: p must be a non-zero vector")
    if not 0.0 <= eta <= 1.0:
        problems.append(f"barrier {name or '?'}: eta must be in [0, 1], got {eta}")
    if problems:
        raise ConfigError(problems)
    return AffineBarrier(vec, float(q), float(eta), name)


def barrier_value(barrier: AffineBarrier, s: np.ndarray) -> float:
    s = np.asarray(s, dtype=float)
    if s.shape != barrier.p.shape:
        raise ShapeError(f"state of shape {s.shape} does not match barrier of shape {barrier.p.shape}")
    return float(barrier.p @ s + barrier.q)


def barrier_values(barriers: Sequence[AffineBarrier], s: np.ndarray) -> np.ndarray:
    return np.array([barrier_value(b, s) for b in barriers], dtype=float)


def cbf_row(
    barrier: AffineBarrier,
    s: np.ndarray,
    nominal: NominalModel,
    gp_mu: np.ndarray,
    gp_sigma: np.ndarray,
    k_delta: float,
    u_base: np.ndarray,
    time: float = 0.0,
    gain: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, float]:
    """QP row c^T a + eps >= b for the correction a added on top of u_base.

    Encodes p^T(f + g(u_base + a) + mu + gain a) - k_delta |p|^T sigma + q >= (1 - eta) h(s) - eps,
    where mu is the residual mean at u_base and gain its sensitivity to the action.
    """
    p = barrier.p
    g = nominal.g(s, time)
    u_base = np.atleast_1d(np.asarray(u_base, dtype=float))
    coeff = p @ g
    offset = (
        (1.0 - barrier.eta) * barrier_value(barrier, s)
        - p @ nominal.f(s, time)
        - coeff @ u_base
        - p @ np.asarray(gp_mu, dtype=float)
        + k_delta * np.abs(p) @ np.asarray(gp_sigma, dtype=float)
        - barrier.q
    )
    if gain is not None:
        coeff = coeff + p @ np.asarray(gain, dtype=float)
    return np.atleast_1d(coeff), float(offset)


def predicted_margin(
    barrier: AffineBarrier,
    s: np.ndarray,
    nominal: NominalModel,
    mu: np.ndarray,
    sigma: np.ndarray,
    k_delta: float,
    u_total: np.ndarray,
    time: float = 0.0,
) -> float:
    """Lower confidence bound on h(s_next) under the deployed action; mu is the residual mean at that action."""
    s_next = nominal.predict(s, u_total, time) + mu
    return float(barrier.p @ s_next - k_delta * np.abs(barrier.p) @ sigma + barrier.q)


def safe_filter(
    s: np.ndarray,
    u_proposed: np.ndarray,
    barriers: Sequence[AffineBarrier],
    nominal: NominalModel,
    residual_model: Optional[ResidualModel],
    k_delta: float,
    box: Tuple[np.ndarray, np.ndarray],
    slack_weight: float = 1e12,
    time: float = 0.0,
    features: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> FilterResult:
    s = np.asarray(s, dtype=float)
    u_proposed = np.atleast_1d(np.asarray(u_proposed, dtype=float))
    if not np.all(np.isfinite(u_proposed)):
        raise ShapeError(f"non-finite proposed action {u_proposed}")
    low, high = (np.atleast_1d(np.asarray(x, dtype=float)) for x in box)
    if residual_model is None:
        band = ResidualBand(np.zeros_like(s), np.zeros_like(s), np.zeros((s.shape[0], u_proposed.shape[0])))
    else:
        band = residual_model.band(features(s) if features is not None else s, low, high)
    mu_base = band.mean(u_proposed)
    rows = [cbf_row(b, s, nominal, mu_base, band.sigma, k_delta, u_proposed, time, band.gain) for b in barriers]
    spec = QpSpec.build(rows, low - u_proposed, high - u_proposed, slack_weight)
    try:
        solution = solve_qp(spec)
    except SolverError as exc:
        raise SolverError(f"barrier QP failed at state {np.round(s, 6).tolist()}: {exc}", exc.iterations, exc.working_set, exc.point) from exc
    u_total = u_proposed + solution.a
    mu = band.mean(u_total)
    sigma = np.asarray(band.sigma, dtype=float)
    margins = np.array([predicted_margin(b, s, nominal, mu, sigma, k_delta, u_total, time) for b in barriers])
    if solution.eps > 0:
        LOGGER.debug("Barrier QP needed slack %.3g at state %s", solution.eps, np.round(s, 4))
    return FilterResult(solution.a, solution.eps, margins, solution.kkt_residual, mu, sigma, solution)


def _in_band(step: StepRecord, k_delta: float, tol: float) -> bool:
    lower, upper = confidence_interval(step.mu, step.sigma, k_delta)
    residual = np.asarray(step.residual, dtype=float)
    return bool(np.all((residual >= lower - tol) & (residual <= upper + tol)))


def invariance_audit(
    trajectory: Sequence[StepRecord],
    barriers: Sequence[AffineBarrier],
    k_delta: Optional[float] = None,
    tol: float = 1e-9,
) -> AuditReport:
    """Check h(s_{t+1}) >= (1 - eta) h(s_t) - eps_t at every step and for every barrier."""
    rows: List[AuditStep] = []
    exits: List[int] = []
    in_band_steps = 0
    depth = 0.0
    for step in trajectory:
        h_now = barrier_values(barriers, step.state)
        h_next = barrier_values(barriers, step.next_state)
        in_band = _in_band(step, k_delta, tol) if k_delta is not None else True
        in_band_steps += int(in_band)
        if np.any(h_next < 0):
            exits.append(step.t)
        depth = max(depth, float(np.max(-h_now, initial=0.0)), float(np.max(-h_next, initial=0.0)))
        for idx, barrier in enumerate(barriers):
            rhs = (1.0 - barrier.eta) * h_now[idx] - step.eps
            violated = bool(h_next[idx] < rhs - tol * (1.0 + abs(rhs)))
            rows.append(AuditStep(step.t, idx, float(h_next[idx]), float(rhs), step.eps, in_band, violated))

    violations = [row for row in rows if row.violated]
    certified = [row for row in violations if row.eps <= tol and row.in_band]
    eps_max = max((step.eps for step in trajectory), default=0.0)
    min_eta = min((b.eta for b in barriers), default=1.0)
    if eps_max == 0.0:
        bound = 0.0
    else:
        bound = eps_max / min_eta if min_eta > 0 else float("inf")
    coverage = in_band_steps / len(trajectory) if (k_delta is not None and trajectory) else None
    return AuditReport(len(trajectory), violations, certified, exits, depth, eps_max, bound, coverage, rows)
