from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional

import numpy as np


class Mode(str, Enum):
    BASELINE = "baseline"
    COMPENSATE = "compensate"
    GUIDE = "guide"


@dataclass
class QpSpec:
    """min 0.5*|a|^2 + slack_weight*eps  s.t.  C a + eps >= b,  low <= a <= high,  eps >= 0."""

    coeffs: np.ndarray
    offsets: np.ndarray
    low: np.ndarray
    high: np.ndarray
    slack_weight: float = 1e12

    @property
    def action_dim(self) -> int:
        return int(self.low.shape[0])

    @property
    def n_rows(self) -> int:
        return int(self.offsets.shape[0])

    @classmethod
    def build(cls, rows, low, high, slack_weight: float = 1e12) -> "QpSpec":
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if rows:
            coeffs = np.array([np.atleast_1d(np.asarray(c, dtype=float)) for c, _ in rows], dtype=float)
            offsets = np.array([float(b) for _, b in rows], dtype=float)
        else:
            coeffs = np.zeros((0, low.shape[0]))
            offsets = np.zeros(0)
        return cls(coeffs, offsets, low, high, float(slack_weight))


@dataclass
class QpSolution:
    a: np.ndarray
    eps: float
    objective: float
    active_set: List[int]
    kkt_residual: float
    multipliers: Optional[np.ndarray] = None
    iterations: int = 0


@dataclass
class KktReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float

    @property
    def max_violation(self) -> float:
        return max(self.stationarity, self.primal, self.dual, self.complementarity)


@dataclass
class AffineBarrier:
    p: np.ndarray
    q: float
    eta: float = 0.5
    name: str = ""


@dataclass
class NominalModel:
    """Discrete-time control-affine model s' = f(s, t) + g(s, t) a."""

    f: Callable[[np.ndarray, float], np.ndarray]
    g: Callable[[np.ndarray, float], np.ndarray]

    def predict(self, s: np.ndarray, a: np.ndarray, t: float = 0.0) -> np.ndarray:
        return self.f(s, t) + self.g(s, t) @ np.atleast_1d(a)


@dataclass
class ResidualBand:
    """Residual prediction at one state, affine in the action: mean mu + gain @ a, std sigma.

    sigma bounds the predictive standard deviation over the whole action box.
    """

    mu: np.ndarray
    sigma: np.ndarray
    gain: np.ndarray

    def mean(self, a: np.ndarray) -> np.ndarray:
        return self.mu + self.gain @ np.atleast_1d(a)


@dataclass
class FilterResult:
    u_cbf: np.ndarray
    eps: float
    margins: np.ndarray
    kkt_residual: float
    mu: np.ndarray
    sigma: np.ndarray
    solution: Optional[QpSolution] = None


@dataclass
class StepRecord:
    t: int
    time: float
    state: np.ndarray
    next_state: np.ndarray
    u_rl: np.ndarray
    u_bar: np.ndarray
    u_cbf: np.ndarray
    u: np.ndarray
    eps: float
    reward: float
    barrier_values: np.ndarray
    residual: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    done: bool = False


@dataclass
class EpisodeLog:
    episode: int
    mode: Mode
    steps: List[StepRecord] = field(default_factory=list)
    safety_metric: float = 0.0
    unsafe: bool = False
    aborted: bool = False

    @property
    def total_return(self) -> float:
        return float(sum(step.reward for step in self.steps))

    @property
    def max_eps(self) -> float:
        return max((step.eps for step in self.steps), default=0.0)

    @property
    def min_barrier(self) -> float:
        values = [float(np.min(step.barrier_values)) for step in self.steps if step.barrier_values.size]
        return min(values, default=float("inf"))

    @property
    def mean_u_cbf_norm(self) -> float:
        if not self.steps:
            return 0.0
        return float(np.mean([np.linalg.norm(step.u_cbf) for step in self.steps]))


@dataclass
class AuditStep:
    t: int
    barrier: int
    lhs: float
    rhs: float
    eps: float
    in_band: bool
    violated: bool


@dataclass
class AuditReport:
    n_steps: int
    violations: List[AuditStep]
    certified_violations: List[AuditStep]
    exits: List[int]
    max_excursion: float
    eps_max: float
    excursion_bound: float
    coverage: Optional[float]
    rows: List[AuditStep] = field(default_factory=list)


@dataclass
class EvalReport:
    deployed_returns: List[float]
    proposed_returns: List[float]
    u_cbf_norms: List[float]

    @property
    def deployed_return(self) -> float:
        return float(np.mean(self.deployed_returns)) if self.deployed_returns else 0.0

    @property
    def proposed_return(self) -> float:
        return float(np.mean(self.proposed_returns)) if self.proposed_returns else 0.0

    @property
    def mean_u_cbf_norm(self) -> float:
        return float(np.mean(self.u_cbf_norms)) if self.u_cbf_norms else 0.0
