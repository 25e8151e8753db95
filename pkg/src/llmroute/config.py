"""JSON experiment configuration with field-level validation."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional

from .impact import ImpactConfig
from .latency import HardwareProfile, Thresholds
from .rl.dqn import AgentConfig
from .routers import HEURISTICS, ConfigError, EnvConfig, RewardConfig
from .workload import ScenarioKind

RL_POLICY = "RL"
WORKLOAD_KINDS = ("mixture", "scenario", "trace")
PREDICTOR_KINDS = ("simulated", "oracle", "empirical")
MATRIX_KEYS = ("batching_policy", "routing_policy", "scenario", "chunk_size")


@dataclass(frozen=True)
class WorkloadConfig:
    kind: str = "mixture"
    scenario: Optional[str] = None
    trace_path: Optional[str] = None
    n_requests: int = 2000
    arrival_rate: float = 20.0
    arrival_process: str = "poisson"

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ValueError(f"kind must be one of {list(WORKLOAD_KINDS)}, got {self.kind!r}")
        if self.kind == "scenario":
            if self.scenario is None:
                raise ValueError("scenario is required when kind is 'scenario'")
            ScenarioKind(self.scenario)
        if self.kind == "trace" and not self.trace_path:
            raise ValueError("trace_path is required when kind is 'trace'")
        if self.n_requests < 1:
            raise ValueError("n_requests must be >= 1")
        if not self.arrival_rate > 0:
            raise ValueError("arrival_rate must be positive")
        if self.arrival_process not in ("poisson", "fixed"):
            raise ValueError("arrival_process must be 'poisson' or 'fixed'")


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "simulated"
    # per-task accuracy overrides for the simulated predictor
    accuracy: Optional[Dict[str, float]] = None
    # size of the labelled mixture the empirical predictor is fitted on
    train_requests: int = 5000

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ValueError(f"kind must be one of {list(PREDICTOR_KINDS)}, got {self.kind!r}")
        if self.train_requests < 1:
            raise ValueError("train_requests must be >= 1")
        for task, acc in (self.accuracy or {}).items():
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy[{task!r}] must lie in [0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    profile: HardwareProfile = HardwareProfile()
    thresholds: Thresholds = Thresholds()
    impact: ImpactConfig = ImpactConfig()
    reward: RewardConfig = RewardConfig()
    agent: AgentConfig = AgentConfig()
    workload: WorkloadConfig = WorkloadConfig()
    cluster: EnvConfig = field(default_factory=EnvConfig)
    predictor: PredictorConfig = PredictorConfig()
    routing_policy: str = "RoundRobin"
    checkpoint: Optional[str] = None
    seeds: tuple = (0,)
    episodes: int = 30
    train_seeds: Optional[tuple] = None
    output: str = "results"
    matrix: Optional[Dict[str, list]] = None

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.train_seeds is not None:
            object.__setattr__(self, "train_seeds", tuple(int(s) for s in self.train_seeds))
        if not self.seeds:
            raise ConfigError("config.seeds: at least one seed is required")
        if self.episodes < 1:
            raise ConfigError("config.episodes: must be >= 1")
        _check_policy(self.routing_policy, "config.routing_policy")
        if self.matrix is not None:
            for key, values in self.matrix.items():
                where = f"config.matrix.{key}"
                if key not in MATRIX_KEYS:
                    raise ConfigError(f"{where}: unknown matrix key; choose from {list(MATRIX_KEYS)}")
                if not isinstance(values, list) or not values:
                    raise ConfigError(f"{where}: must be a non-empty list")
                for v in values:
                    _check_matrix_value(key, v, where)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile.to_dict(),
            "thresholds": self.thresholds.to_dict(),
            "impact": self.impact.to_dict(),
            "reward": self.reward.to_dict(),
            "agent": self.agent.to_dict(),
            "workload": asdict(self.workload),
            "cluster": asdict(self.cluster),
            "predictor": asdict(self.predictor),
            "routing_policy": self.routing_policy,
            "checkpoint": self.checkpoint,
            "seeds": list(self.seeds),
            "episodes": self.episodes,
            "train_seeds": None if self.train_seeds is None else list(self.train_seeds),
            "output": self.output,
            "matrix": self.matrix,
        }


def _check_policy(name: str, where: str) -> None:
    if name != RL_POLICY and name not in HEURISTICS:
        raise ConfigError(f"{where}: unknown routing policy {name!r}; choose from {sorted(HEURISTICS) + [RL_POLICY]}")


def _check_matrix_value(key: str, value, where: str) -> None:
    try:
        if key == "routing_policy":
            _check_policy(value, where)
        elif key == "batching_policy":
            EnvConfig(batching_policy=value)
        elif key == "scenario":
            ScenarioKind(value)
        elif key == "chunk_size" and value is not None and (not isinstance(value, int) or value < 1):
            raise ValueError("chunk_size must be null or a positive integer")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _section(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(known)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


SECTIONS = {
    "profile": HardwareProfile,
    "thresholds": Thresholds,
    "impact": ImpactConfig,
    "reward": RewardConfig,
    "agent": AgentConfig,
    "workload": WorkloadConfig,
    "cluster": EnvConfig,
    "predictor": PredictorConfig,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a JSON object")
    allowed = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"config: unknown key(s) {unknown}; allowed {sorted(allowed)}")
    kwargs = {}
    for key, value in data.items():
        if key in SECTIONS:
            kwargs[key] = _section(SECTIONS[key], value, f"config.{key}")
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def with_overrides(cfg: ExperimentConfig, **cell) -> ExperimentConfig:
    """Copy of ``cfg`` with matrix-style overrides applied."""
    cluster = cfg.cluster
    workload = cfg.workload
    out = {}
    for key, value in cell.items():
        if key == "batching_policy":
            cluster = replace(cluster, batching_policy=value)
        elif key == "chunk_size":
            cluster = replace(cluster, chunk_size=value)
        elif key == "scenario":
            workload = replace(workload, kind="scenario", scenario=value)
        elif key == "routing_policy":
            out["routing_policy"] = value
        else:
            raise ConfigError(f"cannot override {key!r}")
    return replace(cfg, cluster=cluster, workload=workload, matrix=None, **out)


def expand_matrix(cfg: ExperimentConfig) -> List[dict]:
    """Cross product of the matrix block, in key order; one empty cell without a matrix."""
    if not cfg.matrix:
        return [{}]
    keys = [k for k in MATRIX_KEYS if k in cfg.matrix]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(cfg.matrix[k] for k in keys))]
