from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .agent import AgentConfig, CompensatorConfig
from .envs import BarrierParams, CarParams, PendulumParams
from .errors import ConfigError
from .gp import KernelHyper
from .models import Mode

LOGGER = logging.getLogger(__name__)

ENVIRONMENTS = ("pendulum", "car")
DEFAULT_EPISODES = {"pendulum": 150, "car": 200}
STATE_DIMS = {"pendulum": 2, "car": 10}
PRESET_DIR = "configs"


@dataclass
class GpConfig:
    lengthscale: Union[float, List[float]] = 1.0
    signal_variance: float = 1.0
    noise_variance: float = 1e-2
    capacity: int = 1000
    k_delta: float = 2.0
    action_input: bool = True

    def kernel(self, action_scale: Optional[Any] = None) -> KernelHyper:
        """Kernel hyperparameters; the action enters the kernel only with action_input and a scale."""
        scale = action_scale if self.action_input else None
        return KernelHyper(self.lengthscale, self.signal_variance, self.noise_variance, scale)


@dataclass
class QpConfig:
    slack_weight: float = 1e12


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    mode: Mode = Mode.BASELINE
    episodes: Optional[int] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    out_dir: str = "out"
    verbose: bool = False
    workers: int = 1
    eval_episodes: int = 5
    gp: GpConfig = field(default_factory=GpConfig)
    barriers: BarrierParams = field(default_factory=BarrierParams)
    qp: QpConfig = field(default_factory=QpConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    compensator: CompensatorConfig = field(default_factory=CompensatorConfig)
    pendulum: PendulumParams = field(default_factory=PendulumParams)
    car: CarParams = field(default_factory=CarParams)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(value: Any, default: Any, path: str, problems: List[str]) -> Any:
    if isinstance(default, Enum):
        try:
            return type(default)(value)
        except ValueError:
            choices = ", ".join(m.value for m in type(default))
            problems.append(f"{path} must be one of {choices}, got {value!r}")
            return default
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        problems.append(f"{path} must be true or false, got {value!r}")
        return default
    if isinstance(default, int) or (default is None and path == "episodes"):
        if _is_number(value) and float(value).is_integer():
            return int(value)
        if value is None and default is None:
            return None
        problems.append(f"{path} must be an integer, got {value!r}")
        return default
    if isinstance(default, float):
        if path.endswith("lengthscale") and isinstance(value, list):
            if all(_is_number(v) for v in value):
                return [float(v) for v in value]
            problems.append(f"{path} must be a number or a list of numbers")
            return default
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        if _is_number(value):
            return float(value)
        problems.append(f"{path} must be a number, got {value!r}")
        return default
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        problems.append(f"{path} must be a string, got {value!r}")
        return default
    if isinstance(default, list):
        if isinstance(value, list):
            return value
        problems.append(f"{path} must be a list, got {value!r}")
        return default
    return value


def _build(cls, data: Any, prefix: str, problems: List[str]):
    defaults = cls()
    if data is None:
        return defaults
    if not isinstance(data, dict):
        problems.append(f"{prefix.rstrip('.') or 'config'} must be a mapping")
        return defaults
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            problems.append(f"unknown key {prefix}{key}")
    kwargs: Dict[str, Any] = {}
    for name in known:
        if name not in data:
            continue
        default = getattr(defaults, name)
        path = prefix + name
        if is_dataclass(default):
            kwargs[name] = _build(type(default), data[name], path + ".", problems)
        else:
            kwargs[name] = _coerce(data[name], default, path, problems)
    return cls(**kwargs)


def _positive(problems: List[str], path: str, value: float, strict: bool = True) -> None:
    if strict and not value > 0:
        problems.append(f"{path} must be positive, got {value}")
    elif not strict and not value >= 0:
        problems.append(f"{path} must be non-negative, got {value}")


def _check_layers(problems: List[str], path: str, hidden: Any) -> None:
    if not all(isinstance(n, int) and not isinstance(n, bool) and n >= 1 for n in hidden):
        problems.append(f"{path} must be a list of positive integers, got {hidden}")


def _check_custom_barriers(config: ExperimentConfig, problems: List[str]) -> None:
    dim = STATE_DIMS.get(config.env)
    for idx, item in enumerate(config.barriers.custom):
        path = f"barriers.custom[{idx}]"
        if not isinstance(item, dict):
            problems.append(f"{path} must be a mapping with p, q and eta")
            continue
        for key in item:
            if key not in ("p", "q", "eta", "name"):
                problems.append(f"unknown key {path}.{key}")
        p = item.get("p")
        if not isinstance(p, list) or not all(_is_number(v) for v in p):
            problems.append(f"{path}.p must be a list of numbers")
        elif dim is not None and len(p) != dim:
            problems.append(f"{path}.p has length {len(p)}, the {config.env} state has {dim}")
        elif not any(p):
            problems.append(f"{path}.p must be non-zero")
        if not _is_number(item.get("q")):
            problems.append(f"{path}.q must be a number")
        eta = item.get("eta", config.barriers.eta)
        if not _is_number(eta) or not 0.0 <= eta <= 1.0:
            problems.append(f"{path}.eta must be in [0, 1], got {eta!r}")


def validate(config: ExperimentConfig) -> List[str]:
    problems: List[str] = []
    if config.env not in ENVIRONMENTS:
        problems.append(f"env must be one of {', '.join(ENVIRONMENTS)}, got {config.env!r}")
    if config.episodes is not None and config.episodes < 1:
        problems.append(f"episodes must be at least 1, got {config.episodes}")
    if not config.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in config.seeds):
        problems.append(f"seeds must be a non-empty list of integers, got {config.seeds}")
    if config.workers < 1:
        problems.append(f"workers must be at least 1, got {config.workers}")
    _positive(problems, "eval_episodes", config.eval_episodes, strict=False)

    gp = config.gp
    scales = gp.lengthscale if isinstance(gp.lengthscale, list) else [gp.lengthscale]
    if not scales or not all(s > 0 for s in scales):
        problems.append(f"gp.lengthscale must be positive, got {gp.lengthscale}")
    _positive(problems, "gp.signal_variance", gp.signal_variance)
    _positive(problems, "gp.noise_variance", gp.noise_variance, strict=False)
    _positive(problems, "gp.capacity", gp.capacity)
    _positive(problems, "gp.k_delta", gp.k_delta, strict=False)

    bp = config.barriers
    if not 0.0 <= bp.eta <= 1.0:
        problems.append(f"barriers.eta must be in [0, 1], got {bp.eta}")
    _positive(problems, "barriers.velocity_gain", bp.velocity_gain, strict=False)
    _positive(problems, "barriers.safe_angle", bp.safe_angle)
    _positive(problems, "barriers.headway_tau", bp.headway_tau, strict=False)
    _positive(problems, "barriers.min_headway", bp.min_headway)
    _check_custom_barriers(config, problems)

    _positive(problems, "qp.slack_weight", config.qp.slack_weight)

    ag = config.agent
    if not 0.0 < ag.gamma < 1.0:
        problems.append(f"agent.gamma must be in (0, 1), got {ag.gamma}")
    if not 0.0 < ag.tau <= 1.0:
        problems.append(f"agent.tau must be in (0, 1], got {ag.tau}")
    _positive(problems, "agent.batch_size", ag.batch_size)
    _positive(problems, "agent.buffer_capacity", ag.buffer_capacity)
    _positive(problems, "agent.noise_start", ag.noise_start, strict=False)
    _positive(problems, "agent.noise_end", ag.noise_end, strict=False)
    _check_layers(problems, "agent.hidden", ag.hidden)
    _positive(problems, "agent.actor_lr", ag.actor_lr)
    _positive(problems, "agent.critic_lr", ag.critic_lr)
    _positive(problems, "agent.updates_per_episode", ag.updates_per_episode, strict=False)
    _positive(problems, "agent.reward_scale", ag.reward_scale)

    comp = config.compensator
    _check_layers(problems, "compensator.hidden", comp.hidden)
    _positive(problems, "compensator.lr", comp.lr)
    _positive(problems, "compensator.epochs", comp.epochs, strict=False)
    _positive(problems, "compensator.batch_size", comp.batch_size)
    _positive(problems, "compensator.history_episodes", comp.history_episodes)

    for section in ("pendulum", "car"):
        params = getattr(config, section)
        _positive(problems, f"{section}.dt", params.dt)
        _positive(problems, f"{section}.horizon", params.horizon)
    _positive(problems, "pendulum.max_torque", config.pendulum.max_torque)
    _positive(problems, "car.max_accel", config.car.max_accel)
    _positive(problems, "car.noise_std", config.car.noise_std, strict=False)
    if config.car.init_gap_low > config.car.init_gap_high:
        problems.append("car.init_gap_low must not exceed car.init_gap_high")
    if config.car.init_speed_low > config.car.init_speed_high:
        problems.append("car.init_speed_low must not exceed car.init_speed_high")
    return problems


def config_from_dict(data: Optional[Dict[str, Any]]) -> ExperimentConfig:
    problems: List[str] = []
    config = _build(ExperimentConfig, data or {}, "", problems)
    problems.extend(validate(config))
    if problems:
        raise ConfigError(problems)
    if config.episodes is None:
        config.episodes = DEFAULT_EPISODES[config.env]
    return config


def config_load(path: Union[str, Path]) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError([f"{path}: {where}: {problem}"]) from exc
    config = config_from_dict(data)
    LOGGER.debug("Loaded config %s (env=%s, mode=%s)", path, config.env, config.mode.value)
    return config


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    data = asdict(config)
    data["mode"] = config.mode.value
    return data


def config_dump(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def resolve_config(name: str, root: Optional[Path] = None) -> Path:
    """A path as given, or a preset name looked up as configs/NAME.yaml."""
    candidate = Path(name)
    if candidate.is_file():
        return candidate
    bases = [Path.cwd()] + ([root] if root else []) + [Path(__file__).resolve().parent.parent]
    for base in bases:
        preset = base / PRESET_DIR / f"{name}.yaml"
        if preset.is_file():
            return preset
    raise FileNotFoundError(f"config {name!r} not found (tried {candidate} and {PRESET_DIR}/{name}.yaml)")
