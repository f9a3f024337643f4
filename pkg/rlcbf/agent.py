"""DDPG learner, replay buffer and the barrier compensator u^bar."""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .approx import Mlp, OptimState, fit_regression, mlp_backward, mlp_forward, mlp_init, mse_loss, optim_init, optim_step, save_params, soft_update, zero_output_layer
from .errors import TrainingError

LOGGER = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    gamma: float = 0.99
    tau: float = 5e-3
    batch_size: int = 64
    buffer_capacity: int = 100_000
    noise_start: float = 0.1
    noise_end: float = 0.01
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    updates_per_episode: int = 0
    reward_scale: float = 1.0


@dataclass
class CompensatorConfig:
    hidden: List[int] = field(default_factory=lambda: [64, 64])
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 64
    history_episodes: int = 1


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of (s, u, r, s', done) transitions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = capacity
        self._states = np.zeros((capacity, state_dim))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next = np.zeros((capacity, state_dim))
        self._dones = np.zeros(capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s: np.ndarray, u: np.ndarray, r: float, s_next: np.ndarray, done: bool) -> None:
        i = self._cursor
        self._states[i] = s
        self._actions[i] = u
        self._rewards[i] = r
        self._next[i] = s_next
        self._dones[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        n = min(batch_size, self._size)
        idx = rng.choice(self._size, size=n, replace=False)
        return Batch(self._states[idx], self._actions[idx], self._rewards[idx], self._next[idx], self._dones[idx])


class Learner(ABC):
    """What the training loop needs from a policy learner."""

    @abstractmethod
    def propose(self, x: np.ndarray, noise_std: float, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def observe(self, x: np.ndarray, u: np.ndarray, r: float, x_next: np.ndarray, done: bool) -> None:
        ...

    @abstractmethod
    def end_episode(self, episode: int, compensator: Optional[Mlp] = None) -> Dict[str, float]:
        ...


def act(actor: Mlp, x: np.ndarray, noise_std: float, rng: np.random.Generator, low: np.ndarray, high: np.ndarray) -> np.ndarray:
    u = np.atleast_1d(mlp_forward(actor, x))
    if noise_std > 0:
        u = u + rng.normal(0.0, noise_std, size=u.shape)
    return np.clip(u, low, high)


class DdpgAgent(Learner):
    def __init__(self, obs_dim: int, low: np.ndarray, high: np.ndarray, config: Optional[AgentConfig] = None, seed: int = 0, horizon: int = 1):
        self.config = config or AgentConfig()
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))
        self.half_width = float(np.max(self.high - self.low)) / 2.0
        action_dim = self.low.shape[0]
        hidden = list(self.config.hidden)
        self.actor = mlp_init([obs_dim, *hidden, action_dim], "scaled_tanh", seed, self.half_width)
        self.critic = mlp_init([obs_dim + action_dim, *hidden, 1], "identity", seed + 1)
        self.actor_target = self.actor.clone()
        self.critic_target = self.critic.clone()
        self.actor_opt = optim_init(self.actor, self.config.actor_lr)
        self.critic_opt = optim_init(self.critic, self.config.critic_lr)
        self.buffer = ReplayBuffer(self.config.buffer_capacity, obs_dim, action_dim)
        self.rng = np.random.default_rng(seed + 2)
        self.updates_per_episode = self.config.updates_per_episode or horizon

    def noise_std(self, episode: int, episodes: int) -> float:
        frac = min(1.0, episode / max(episodes - 1, 1))
        level = self.config.noise_start + (self.config.noise_end - self.config.noise_start) * frac
        return level * self.half_width

    def propose(self, x, noise_std, rng):
        return act(self.actor, x, noise_std, rng, self.low, self.high)

    def observe(self, x, u, r, x_next, done):
        self.buffer.add(x, u, r, x_next, done)

    def end_episode(self, episode: int, compensator: Optional[Mlp] = None) -> Dict[str, float]:
        if len(self.buffer) < self.config.batch_size:
            return {}
        losses = [ddpg_update(self, self.buffer.sample(self.config.batch_size, self.rng), compensator) for _ in range(self.updates_per_episode)]
        LOGGER.debug("Episode %d: %d DDPG updates, critic loss %.4g", episode, len(losses), losses[-1])
        return {"critic_loss": float(np.mean(losses))}

    def save(self, directory: Path) -> None:
        save_params(self.actor, directory / "actor.bin")
        save_params(self.critic, directory / "critic.bin")


def _policy_action(actor: Mlp, compensator: Optional[Mlp], x: np.ndarray, low: np.ndarray, high: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """clip(actor(x) + u_bar(x)) and the mask where the clip is inactive."""
    total = np.atleast_2d(mlp_forward(actor, x))
    if compensator is not None:
        total = total + np.atleast_2d(mlp_forward(compensator, x))
    clipped = np.clip(total, low, high)
    return clipped, (clipped == total).astype(float)


def ddpg_update(agent: DdpgAgent, batch: Batch, compensator: Optional[Mlp] = None) -> float:
    """One critic regression step, one actor ascent step and the target soft updates."""
    cfg = agent.config
    n = batch.states.shape[0]
    next_actions, _ = _policy_action(agent.actor_target, compensator, batch.next_states, agent.low, agent.high)
    q_next = mlp_forward(agent.critic_target, np.hstack([batch.next_states, next_actions]))[:, 0]
    targets = cfg.reward_scale * batch.rewards + cfg.gamma * (1.0 - batch.dones) * q_next

    critic_in = np.hstack([batch.states, batch.actions])
    q = mlp_forward(agent.critic, critic_in)[:, 0]
    loss = float(np.mean((q - targets) ** 2))
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite critic loss (max |target| {np.max(np.abs(targets)):.3g})")
    optim_step(agent.critic, mlp_backward(agent.critic, critic_in, (2.0 * (q - targets) / n)[:, None]), agent.critic_opt)

    actions, mask = _policy_action(agent.actor, compensator, batch.states, agent.low, agent.high)
    obs_dim = batch.states.shape[1]
    dq = mlp_backward(agent.critic, np.hstack([batch.states, actions]), np.full((n, 1), -1.0 / n)).inputs[:, obs_dim:]
    optim_step(agent.actor, mlp_backward(agent.actor, batch.states, dq * mask), agent.actor_opt)

    soft_update(agent.actor_target, agent.actor, cfg.tau)
    soft_update(agent.critic_target, agent.critic, cfg.tau)
    return loss


class CompensatorDataset:
    """(features, u^bar + u^CBF) pairs of the most recent episodes."""

    def __init__(self, history_episodes: int = 1):
        self._episodes: Deque[Tuple[np.ndarray, np.ndarray]] = deque(maxlen=max(history_episodes, 1))

    def __len__(self) -> int:
        return sum(x.shape[0] for x, _ in self._episodes)

    def add_episode(self, inputs: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> None:
        if len(inputs):
            self._episodes.append((np.array(inputs, dtype=float), np.array(targets, dtype=float)))

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = [x for x, _ in self._episodes]
        ys = [y for _, y in self._episodes]
        return np.vstack(xs), np.vstack(ys)


def make_compensator(obs_dim: int, low: np.ndarray, high: np.ndarray, hidden: Sequence[int], seed: int = 0) -> Mlp:
    """u^bar network; the zeroed output layer makes it exactly 0 before any fit."""
    low, high = np.atleast_1d(low), np.atleast_1d(high)
    span = float(np.max(high - low))
    mlp = mlp_init([obs_dim, *hidden, low.shape[0]], "scaled_tanh", seed, span)
    return zero_output_layer(mlp)


def compensator_fit(
    mlp: Mlp,
    state: OptimState,
    dataset: CompensatorDataset,
    epochs: int,
    batch_size: int = 64,
    rng: Optional[np.random.Generator] = None,
) -> List[float]:
    if len(dataset) == 0:
        LOGGER.warning("Compensator dataset is empty; keeping the current u_bar")
        return []
    X, Y = dataset.arrays()
    before = mse_loss(mlp, X, Y)
    history = fit_regression(mlp, state, X, Y, epochs, batch_size, rng)
    LOGGER.debug("Compensator fit on %d pairs: loss %.4g -> %.4g", X.shape[0], before, history[-1] if history else before)
    return history
