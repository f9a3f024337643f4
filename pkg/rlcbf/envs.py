"""Benchmark environments as discrete-time control-affine systems.

Both environments advance with the same semi-implicit Euler form, so the
actuation enters as s' = f(s, t) + g(s, t) a with g constant in s.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .cbf import barrier_values, make_barrier
from .errors import ModelError
from .models import AffineBarrier, NominalModel

LOGGER = logging.getLogger(__name__)

COLLISION_GAP = 1e-2
MAX_INIT_DRAWS = 1000


@dataclass
class EnvSpec:
    name: str
    dt: float
    horizon: int
    action_low: np.ndarray
    action_high: np.ndarray
    state_dim: int
    angle_dims: Tuple[int, ...] = ()

    @property
    def action_dim(self) -> int:
        return int(self.action_low.shape[0])

    @property
    def box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.action_low, self.action_high


@dataclass
class BarrierParams:
    eta: float = 0.5
    velocity_gain: float = 0.25
    safe_angle: float = 1.0
    headway_tau: float = 0.5
    min_headway: float = 2.0
    custom: List[dict] = field(default_factory=list)


@dataclass
class PendulumParams:
    dt: float = 0.05
    horizon: int = 200
    gravity: float = 10.0
    mass: float = 1.0
    length: float = 1.0
    nominal_mass: float = 1.4
    nominal_length: float = 1.4
    max_torque: float = 15.0
    init_angle: float = 0.8
    init_rate: float = 1.0


@dataclass
class CarParams:
    dt: float = 0.1
    horizon: int = 300
    kd: float = 0.1
    kp: float = 4.0
    kb: float = 20.0
    v_des: float = 30.0
    noise_std: float = 0.5
    max_accel: float = 100.0
    nominal_kd: float = 0.0
    nominal_kp: float = 3.5
    nominal_kb: float = 18.0
    init_gap_low: float = 8.0
    init_gap_high: float = 12.0
    init_speed_low: float = 28.0
    init_speed_high: float = 32.0


def wrap_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    return float(np.pi if wrapped == -np.pi else wrapped)


# --- inverted pendulum ---------------------------------------------------

def pendulum_affine(mass: float, length: float, gravity: float, dt: float) -> NominalModel:
    k_grav = 3.0 * gravity / (2.0 * length)
    k_u = 3.0 / (mass * length ** 2)
    column = np.array([[k_u * dt ** 2], [k_u * dt]])

    def f(s: np.ndarray, t: float = 0.0) -> np.ndarray:
        theta, theta_dot = float(s[0]), float(s[1])
        pull = k_grav * np.sin(theta)
        return np.array([theta + theta_dot * dt + pull * dt ** 2, theta_dot + pull * dt])

    def g(s: np.ndarray, t: float = 0.0) -> np.ndarray:
        return column

    return NominalModel(f, g)


def pendulum_true_step(s: np.ndarray, u: float, dt: float, params: Optional[PendulumParams] = None) -> np.ndarray:
    params = params or PendulumParams()
    u = float(np.clip(np.asarray(u, dtype=float).reshape(-1)[0], -params.max_torque, params.max_torque))
    model = pendulum_affine(params.mass, params.length, params.gravity, dt)
    nxt = model.predict(np.asarray(s, dtype=float), np.array([u]))
    nxt[0] = wrap_angle(nxt[0])
    return nxt


def pendulum_nominal(params: Optional[PendulumParams] = None) -> NominalModel:
    params = params or PendulumParams()
    return pendulum_affine(params.nominal_mass, params.nominal_length, params.gravity, params.dt)


def pendulum_cost(s: np.ndarray, u: float) -> float:
    theta, theta_dot = float(s[0]), float(s[1])
    u = float(np.asarray(u, dtype=float).reshape(-1)[0])
    return theta ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2


# --- five-car chain ------------------------------------------------------
# state = [s1..s5, v1..v5]; car 1 leads, car 4 is controlled.

CAR4_POS, CAR4_VEL = 3, 8


def _g_gap(x: float, limit: float) -> float:
    return x if x <= limit else 0.0


def driver_accelerations(state: np.ndarray, time: float, kp: float, kb: float, v_des: float) -> np.ndarray:
    """Accelerations of cars 1, 2, 3, 5 (car 4's slot is zero)."""
    pos, vel = state[:5], state[5:]
    acc = np.zeros(5)
    acc[0] = v_des - 10.0 * np.sin(0.2 * time)
    for i in (1, 2):
        acc[i] = kp * (v_des - vel[i]) - kb * _g_gap(pos[i - 1] - pos[i], 6.0)
    acc[4] = kp * (v_des - vel[4]) - 0.5 * kb * _g_gap(pos[2] - pos[4], 12.0)
    return acc


def car_affine(kp: float, kb: float, kd: float, v_des: float, dt: float, max_accel: float) -> NominalModel:
    column = np.zeros((10, 1))
    column[CAR4_POS, 0] = dt ** 2
    column[CAR4_VEL, 0] = dt

    def f(state: np.ndarray, t: float = 0.0) -> np.ndarray:
        acc = np.clip(driver_accelerations(state, t, kp, kb, v_des), -max_accel, max_accel)
        acc[CAR4_POS] = 0.0
        vel_dot = acc - kd * state[5:]
        vel_next = state[5:] + vel_dot * dt
        pos_next = state[:5] + state[5:] * dt + vel_dot * dt ** 2
        return np.concatenate([pos_next, vel_next])

    def g(state: np.ndarray, t: float = 0.0) -> np.ndarray:
        return column

    return NominalModel(f, g)


def car_true_step(state: np.ndarray, a4: float, dt: float, rng: Optional[np.random.Generator], time: float = 0.0, params: Optional[CarParams] = None) -> np.ndarray:
    params = params or CarParams()
    state = np.asarray(state, dtype=float)
    a4 = float(np.clip(np.asarray(a4, dtype=float).reshape(-1)[0], -params.max_accel, params.max_accel))
    acc = driver_accelerations(state, time, params.kp, params.kb, params.v_des)
    if rng is not None and params.noise_std > 0:
        acc += rng.normal(0.0, params.noise_std, size=5)
    acc = np.clip(acc, -params.max_accel, params.max_accel)
    acc[CAR4_POS] = a4
    vel_dot = acc - params.kd * state[5:]
    vel_next = state[5:] + vel_dot * dt
    pos_next = state[:5] + state[5:] * dt + vel_dot * dt ** 2
    return np.concatenate([pos_next, vel_next])


def car_nominal(params: Optional[CarParams] = None) -> NominalModel:
    params = params or CarParams()
    return car_affine(params.nominal_kp, params.nominal_kb, params.nominal_kd, params.v_des, params.dt, params.max_accel)


def car_headways(state: np.ndarray) -> np.ndarray:
    pos = np.asarray(state, dtype=float)[:5]
    return pos[:-1] - pos[1:]


def car_step_reward(state: np.ndarray, a4: float) -> float:
    state = np.asarray(state, dtype=float)
    a4 = float(np.asarray(a4, dtype=float).reshape(-1)[0])
    penalty = state[CAR4_VEL] * max(a4, 0.0)
    gaps = car_headways(state)
    for gap in (gaps[2], gaps[3]):
        if gap <= 3.0:
            penalty += abs(500.0 / max(abs(gap), COLLISION_GAP))
    return -float(penalty)


def car_reward(trajectory: Sequence[Tuple[np.ndarray, float]]) -> Tuple[float, List[float]]:
    """Episode reward and its per-step terms for (state, a4) pairs."""
    per_step = [car_step_reward(state, a4) for state, a4 in trajectory]
    return float(sum(per_step)), per_step


# --- environment objects -------------------------------------------------

class Environment(ABC):
    spec: EnvSpec

    def __init__(self, barrier_params: Optional[BarrierParams] = None):
        self.barrier_params = barrier_params or BarrierParams()
        self._barriers: Optional[List[AffineBarrier]] = None

    @property
    def name(self) -> str:
        return self.spec.name

    def time(self, t: int) -> float:
        return t * self.spec.dt

    def barriers(self) -> List[AffineBarrier]:
        if self._barriers is None:
            custom = self.barrier_params.custom
            if custom:
                self._barriers = [
                    make_barrier(item["p"], item["q"], item.get("eta", self.barrier_params.eta), item.get("name", f"custom{idx}"))
                    for idx, item in enumerate(custom)
                ]
            else:
                self._barriers = self.default_barriers()
        return self._barriers

    def sample_init(self, rng: np.random.Generator) -> np.ndarray:
        barriers = self.barriers()
        for _ in range(MAX_INIT_DRAWS):
            state = self._draw_init(rng)
            if not barriers or np.all(barrier_values(barriers, state) > 0):
                return state
        raise ModelError(f"{self.name}: no initial state inside the safe set after {MAX_INIT_DRAWS} draws")

    @abstractmethod
    def _draw_init(self, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def default_barriers(self) -> List[AffineBarrier]:
        ...

    @abstractmethod
    def true_step(self, s: np.ndarray, a: np.ndarray, t: int, rng: Optional[np.random.Generator]) -> np.ndarray:
        ...

    @abstractmethod
    def nominal(self) -> NominalModel:
        ...

    @abstractmethod
    def true_model(self) -> NominalModel:
        """Noise-free true dynamics in affine form."""

    @abstractmethod
    def reward(self, s: np.ndarray, a: np.ndarray) -> float:
        ...

    @abstractmethod
    def features(self, s: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def safety_metric(self, states: Sequence[np.ndarray]) -> float:
        ...

    @abstractmethod
    def is_unsafe(self, metric: float) -> bool:
        ...


class PendulumEnv(Environment):
    def __init__(self, params: Optional[PendulumParams] = None, barrier_params: Optional[BarrierParams] = None):
        super().__init__(barrier_params)
        self.params = params or PendulumParams()
        limit = np.array([self.params.max_torque])
        self.spec = EnvSpec("pendulum", self.params.dt, self.params.horizon, -limit, limit, 2, (0,))

    def _draw_init(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(-self.params.init_angle, self.params.init_angle)
        theta_dot = rng.uniform(-self.params.init_rate, self.params.init_rate)
        return np.array([theta, theta_dot])

    def default_barriers(self) -> List[AffineBarrier]:
        bp = self.barrier_params
        gain, limit = bp.velocity_gain, bp.safe_angle
        return [
            make_barrier([-1.0, 0.0], limit, bp.eta, "angle_upper"),
            make_barrier([1.0, 0.0], limit, bp.eta, "angle_lower"),
            make_barrier([-1.0, -gain], limit, bp.eta, "lookahead_upper"),
            make_barrier([1.0, gain], limit, bp.eta, "lookahead_lower"),
        ]

    def true_step(self, s, a, t, rng):
        return pendulum_true_step(s, a, self.params.dt, self.params)

    def nominal(self) -> NominalModel:
        return pendulum_nominal(self.params)

    def true_model(self) -> NominalModel:
        p = self.params
        return pendulum_affine(p.mass, p.length, p.gravity, p.dt)

    def reward(self, s, a) -> float:
        return -pendulum_cost(s, a)

    def features(self, s) -> np.ndarray:
        return np.asarray(s, dtype=float).copy()

    def safety_metric(self, states) -> float:
        return float(max(abs(float(s[0])) for s in states))

    def is_unsafe(self, metric: float) -> bool:
        return metric > self.barrier_params.safe_angle


class CarChainEnv(Environment):
    def __init__(self, params: Optional[CarParams] = None, barrier_params: Optional[BarrierParams] = None):
        super().__init__(barrier_params)
        self.params = params or CarParams()
        limit = np.array([self.params.max_accel])
        self.spec = EnvSpec("car", self.params.dt, self.params.horizon, -limit, limit, 10)

    def _draw_init(self, rng: np.random.Generator) -> np.ndarray:
        p = self.params
        gaps = rng.uniform(p.init_gap_low, p.init_gap_high, size=4)
        positions = np.concatenate([np.cumsum(gaps[::-1])[::-1], [0.0]])
        speeds = rng.uniform(p.init_speed_low, p.init_speed_high, size=5)
        return np.concatenate([positions, speeds])

    def default_barriers(self) -> List[AffineBarrier]:
        bp = self.barrier_params
        barriers = []
        for front, name in ((2, "headway_front"), (3, "headway_rear")):
            p = np.zeros(10)
            p[front], p[front + 1] = 1.0, -1.0
            p[5 + front], p[6 + front] = bp.headway_tau, -bp.headway_tau
            barriers.append(make_barrier(p, -bp.min_headway, bp.eta, name))
        return barriers

    def true_step(self, s, a, t, rng):
        return car_true_step(s, a, self.params.dt, rng, self.time(t), self.params)

    def nominal(self) -> NominalModel:
        return car_nominal(self.params)

    def true_model(self) -> NominalModel:
        p = self.params
        return car_affine(p.kp, p.kb, p.kd, p.v_des, p.dt, p.max_accel)

    def reward(self, s, a) -> float:
        return car_step_reward(s, a)

    def features(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.concatenate([(car_headways(s) - 10.0) / 5.0, (s[5:] - self.params.v_des) / 5.0])

    def safety_metric(self, states) -> float:
        return float(min(float(np.min(car_headways(s)[2:])) for s in states))

    def is_unsafe(self, metric: float) -> bool:
        return metric < self.barrier_params.min_headway


def build_env(name: str, pendulum: Optional[PendulumParams] = None, car: Optional[CarParams] = None, barriers: Optional[BarrierParams] = None) -> Environment:
    if name == "pendulum":
        return PendulumEnv(pendulum, barriers)
    if name == "car":
        return CarChainEnv(car, barriers)
    raise ValueError(f"unknown environment {name!r}")
