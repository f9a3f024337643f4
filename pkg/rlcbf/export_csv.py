from __future__ import annotations

import logging
import re
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DataError
from .models import EpisodeLog, EvalReport, StepRecord

LOGGER = logging.getLogger(__name__)

EPISODE_HEADERS = ["episode", "return", "safety_metric", "max_eps", "mean_u_cbf_norm", "min_barrier", "unsafe", "aborted"]
EVALUATION_HEADERS = ["episode", "deployed_return", "proposed_return", "mean_u_cbf_norm"]
AGGREGATED_METRICS = ["return", "safety_metric", "max_eps", "mean_u_cbf_norm"]
VECTOR_PREFIXES = ["s", "ns", "u_rl", "u_bar", "u_cbf", "u"]

PathLike = Union[str, Path]


def step_headers(state_dim: int, action_dim: int, n_barriers: int) -> List[str]:
    headers = ["episode", "t", "time"]
    headers += [f"s_{i}" for i in range(state_dim)]
    headers += [f"ns_{i}" for i in range(state_dim)]
    for prefix in ("u_rl", "u_bar", "u_cbf", "u"):
        headers += [f"{prefix}_{i}" for i in range(action_dim)]
    headers += ["eps", "reward"]
    headers += [f"h_{i}" for i in range(n_barriers)]
    for prefix in ("d", "mu", "sigma"):
        headers += [f"{prefix}_{i}" for i in range(state_dim)]
    return headers


def episode_row(log: EpisodeLog) -> list:
    return [log.episode, log.total_return, log.safety_metric, log.max_eps, log.mean_u_cbf_norm, log.min_barrier, int(log.unsafe), int(log.aborted)]


def write_episodes(path: PathLike, logs: Iterable[EpisodeLog]) -> None:
    frame = pd.DataFrame([episode_row(log) for log in logs], columns=EPISODE_HEADERS)
    frame.to_csv(path, index=False)


def write_steps(path: PathLike, log: EpisodeLog) -> None:
    if not log.steps:
        LOGGER.warning("Episode %d has no steps; %s not written", log.episode, path)
        return
    first = log.steps[0]
    headers = step_headers(first.state.shape[0], first.u.shape[0], first.barrier_values.shape[0])
    rows = []
    for step in log.steps:
        rows.append([
            log.episode, step.t, step.time,
            *step.state, *step.next_state,
            *step.u_rl, *step.u_bar, *step.u_cbf, *step.u,
            step.eps, step.reward,
            *step.barrier_values, *step.residual, *step.mu, *step.sigma,
        ])
    pd.DataFrame(rows, columns=headers).to_csv(path, index=False)


def write_evaluation(path: PathLike, report: EvalReport) -> None:
    rows = [
        [idx, deployed, proposed, norm]
        for idx, (deployed, proposed, norm) in enumerate(zip(report.deployed_returns, report.proposed_returns, report.u_cbf_norms))
    ]
    pd.DataFrame(rows, columns=EVALUATION_HEADERS).to_csv(path, index=False)


def _read_frame(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: unreadable CSV ({exc})") from exc


def _columns(frame: pd.DataFrame, prefix: str) -> np.ndarray:
    pattern = re.compile(rf"^{prefix}_(\d+)$")
    picked = sorted((int(m.group(1)), col) for col in frame.columns if (m := pattern.match(col)))
    try:
        return frame[[col for _, col in picked]].to_numpy(dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric {prefix}_* column ({exc})") from exc


def read_steps(path: PathLike) -> List[StepRecord]:
    """Step records back from a steps_<episode>.csv file."""
    frame = _read_frame(path)
    missing = [col for col in ("episode", "t", "time", "eps", "reward") if col not in frame.columns]
    if missing or "s_0" not in frame.columns or "ns_0" not in frame.columns:
        raise DataError(f"{path}: not a step file (missing {missing or ['s_0', 'ns_0']})")
    try:
        vectors = {prefix: _columns(frame, prefix) for prefix in VECTOR_PREFIXES + ["h", "d", "mu", "sigma"]}
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
    state_dim = vectors["s"].shape[1]
    for prefix in ("d", "mu", "sigma"):
        if vectors[prefix].shape[1] not in (0, state_dim):
            raise DataError(f"{path}: {prefix}_* columns do not match the state dimension {state_dim}")
        if vectors[prefix].shape[1] == 0:
            vectors[prefix] = np.zeros((len(frame), state_dim))
    steps = []
    for i, row in enumerate(frame.itertuples(index=False)):
        try:
            t, time, eps, reward = int(row.t), float(row.time), float(row.eps), float(row.reward)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad value in row {i} ({exc})") from exc
        steps.append(StepRecord(
            t, time,
            vectors["s"][i], vectors["ns"][i],
            vectors["u_rl"][i], vectors["u_bar"][i], vectors["u_cbf"][i], vectors["u"][i],
            eps, reward,
            vectors["h"][i], vectors["d"][i], vectors["mu"][i], vectors["sigma"][i],
        ))
    return steps


def aggregate(paths: Sequence[PathLike]) -> pd.DataFrame:
    """Per-episode mean/min/max over seeds of equal-schema episode files."""
    if not paths:
        raise DataError("no episode files to aggregate")
    frames = []
    for path in paths:
        frame = _read_frame(path)
        if list(frame.columns) != EPISODE_HEADERS:
            raise DataError(f"{path}: columns {list(frame.columns)} do not match {EPISODE_HEADERS}")
        frames.append(frame)
    merged = pd.concat(frames, ignore_index=True)
    grouped = merged.groupby("episode", sort=True)
    out = pd.DataFrame({"episode": sorted(merged["episode"].unique())})
    out["n_seeds"] = grouped.size().to_numpy()
    for metric in AGGREGATED_METRICS:
        stats = grouped[metric].agg(["mean", "min", "max"])
        for stat in ("mean", "min", "max"):
            out[f"{metric}_{stat}"] = stats[stat].to_numpy()
    out["unsafe_count"] = grouped["unsafe"].sum().to_numpy()
    return out


def write_aggregate(path: PathLike, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False)
    LOGGER.info("Wrote %s (%d episodes)", path, len(frame))
