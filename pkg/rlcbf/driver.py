"""Episode loop and the per-seed training run."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .agent import CompensatorDataset, DdpgAgent, Learner, compensator_fit, make_compensator
from .approx import Mlp, mlp_forward, optim_init, save_params
from .cbf import ResidualModel, barrier_values, safe_filter
from .config import ExperimentConfig
from .envs import Environment, build_env
from .errors import SolverError
from .export_csv import write_episodes, write_evaluation, write_steps
from .gp import Residual, ResidualWindow, extract_residual, gp_fit, window_update
from .models import AffineBarrier, EpisodeLog, EvalReport, Mode, StepRecord

LOGGER = logging.getLogger(__name__)


@dataclass
class RunResult:
    seed: int
    out_dir: Path
    logs: List[EpisodeLog] = field(default_factory=list)
    evaluation: Optional[EvalReport] = None


def run_episode(
    env: Environment,
    agent: Learner,
    compensator: Optional[Mlp],
    barriers: Sequence[AffineBarrier],
    residual_model: Optional[ResidualModel],
    mode: Mode,
    rng: np.random.Generator,
    episode: int = 0,
    k_delta: float = 2.0,
    slack_weight: float = 1e12,
    noise_std: float = 0.0,
    learn: bool = True,
) -> EpisodeLog:
    spec = env.spec
    nominal = env.nominal()
    zeros_a = np.zeros(spec.action_dim)
    zeros_s = np.zeros(spec.state_dim)
    log = EpisodeLog(episode, mode)
    s = env.sample_init(rng)
    visited = [s]

    for t in range(spec.horizon):
        now = env.time(t)
        x = env.features(s)
        u_rl = agent.propose(x, noise_std, rng)
        u_bar = np.atleast_1d(mlp_forward(compensator, x)) if (mode is Mode.GUIDE and compensator is not None) else zeros_a
        u_cbf, eps, mu, sigma = zeros_a, 0.0, zeros_s, zeros_s
        if mode is not Mode.BASELINE:
            try:
                result = safe_filter(s, u_rl + u_bar, barriers, nominal, residual_model, k_delta, spec.box, slack_weight, now, env.features)
            except SolverError as exc:
                LOGGER.warning("Episode %d aborted at step %d: %s", episode, t, exc)
                log.aborted = True
                break
            u_cbf, eps, mu, sigma = result.u_cbf, result.eps, result.mu, result.sigma
        u = u_rl + u_bar + u_cbf

        s_next = env.true_step(s, u, t, rng)
        reward = env.reward(s, u)
        residual = extract_residual(s, u, s_next, nominal, now, spec.angle_dims).d_hat
        done = t == spec.horizon - 1
        log.steps.append(StepRecord(t, now, s, s_next, u_rl, u_bar, u_cbf, u, eps, reward, barrier_values(barriers, s), residual, mu, sigma, done))
        if learn:
            agent.observe(x, u, reward, env.features(s_next), False)
        visited.append(s_next)
        s = s_next

    log.safety_metric = env.safety_metric(visited)
    log.unsafe = env.is_unsafe(log.safety_metric)
    return log


def compensator_pairs(env: Environment, log: EpisodeLog):
    inputs = [env.features(step.state) for step in log.steps]
    targets = [step.u_bar + step.u_cbf for step in log.steps]
    return inputs, targets


def episode_residuals(env: Environment, log: EpisodeLog) -> List[Residual]:
    return [Residual(env.features(step.state), step.residual, step.u) for step in log.steps]


def proposed_policy_eval(
    agent: Learner,
    compensator: Optional[Mlp],
    env: Environment,
    barriers: Sequence[AffineBarrier],
    n_episodes: int,
    residual_model: Optional[ResidualModel] = None,
    mode: Mode = Mode.GUIDE,
    rng: Optional[np.random.Generator] = None,
    k_delta: float = 2.0,
    slack_weight: float = 1e12,
) -> EvalReport:
    """Noise-free rollouts of the deployed controller; the proposed controller
    u - u_cbf is scored along the same (filtered, safe) trajectory."""
    rng = rng or np.random.default_rng(0)
    report = EvalReport([], [], [])
    for idx in range(n_episodes):
        log = run_episode(env, agent, compensator, barriers, residual_model, mode, rng, idx, k_delta, slack_weight, 0.0, learn=False)
        report.deployed_returns.append(log.total_return)
        report.proposed_returns.append(float(sum(env.reward(step.state, step.u - step.u_cbf) for step in log.steps)))
        report.u_cbf_norms.append(log.mean_u_cbf_norm)
    return report


def train(config: ExperimentConfig, seed: int, out_dir: Path, verbose: Optional[bool] = None) -> RunResult:
    """One seeded run: episodes, GP refits, compensator fits and agent updates."""
    verbose = config.verbose if verbose is None else verbose
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    env = build_env(config.env, config.pendulum, config.car, config.barriers)
    spec = env.spec
    barriers = env.barriers()
    mode = config.mode
    episodes = int(config.episodes or 1)
    env_rng, eval_rng, fit_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))

    obs_dim = env.features(np.zeros(spec.state_dim)).shape[0]
    low, high = spec.box
    agent = DdpgAgent(obs_dim, low, high, config.agent, seed=seed, horizon=spec.horizon)
    compensator = make_compensator(obs_dim, low, high, config.compensator.hidden, seed + 3) if mode is Mode.GUIDE else None
    comp_opt = optim_init(compensator, config.compensator.lr) if compensator is not None else None
    dataset = CompensatorDataset(config.compensator.history_episodes)
    window = ResidualWindow(config.gp.capacity)
    hyper = config.gp.kernel((high - low) / 2.0)
    residual_model = gp_fit([], hyper, config.gp.capacity, spec.state_dim, obs_dim) if mode is not Mode.BASELINE else None

    result = RunResult(seed, out_dir)
    LOGGER.info("Seed %d: %s %s for %d episodes -> %s", seed, config.env, mode.value, episodes, out_dir)
    for k in range(episodes):
        log = run_episode(
            env, agent, compensator, barriers, residual_model, mode, env_rng, k,
            config.gp.k_delta, config.qp.slack_weight, agent.noise_std(k, episodes),
        )
        result.logs.append(log)
        LOGGER.info(
            "Seed %d episode %d: return %.2f, safety %.3f, max eps %.3g%s",
            seed, k, log.total_return, log.safety_metric, log.max_eps, " UNSAFE" if log.unsafe else "",
        )
        if verbose:
            write_steps(out_dir / f"steps_{k}.csv", log)
        if mode is not Mode.BASELINE:
            residual_model = window_update(window, episode_residuals(env, log), hyper, spec.state_dim, obs_dim)
        if compensator is not None:
            dataset.add_episode(*compensator_pairs(env, log))
            compensator_fit(compensator, comp_opt, dataset, config.compensator.epochs, config.compensator.batch_size, fit_rng)
        agent.end_episode(k, compensator)

    write_episodes(out_dir / "episodes.csv", result.logs)
    agent.save(out_dir)
    if compensator is not None:
        save_params(compensator, out_dir / "compensator.bin")
    if config.eval_episodes > 0:
        result.evaluation = proposed_policy_eval(
            agent, compensator, env, barriers, config.eval_episodes, residual_model, mode, eval_rng,
            config.gp.k_delta, config.qp.slack_weight,
        )
        write_evaluation(out_dir / "evaluation.csv", result.evaluation)
    unsafe = sum(log.unsafe for log in result.logs)
    LOGGER.info("Seed %d done: %d unsafe episode(s), files in %s", seed, unsafe, out_dir)
    return result


def run_experiment(config: ExperimentConfig, out_root: Path, seeds: Optional[Sequence[int]] = None, verbose: Optional[bool] = None) -> List[RunResult]:
    """Train every seed into out_root/seed_<N>; seeds run on worker threads."""
    seeds = list(seeds if seeds is not None else config.seeds)
    out_root = Path(out_root)
    if config.workers <= 1 or len(seeds) == 1:
        return [train(config, seed, out_root / f"seed_{seed}", verbose) for seed in seeds]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        futures = [pool.submit(train, config, seed, out_root / f"seed_{seed}", verbose) for seed in seeds]
        return [future.result() for future in futures]
