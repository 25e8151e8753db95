"""Build workloads, predictors and policies from a config and run them."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import RL_POLICY, ExperimentConfig, expand_matrix, with_overrides
from .metrics import MetricsReport, compute_metrics
from .predictor import (
    DEFAULT_SCHEME,
    EmpiricalPredictor,
    OraclePredictor,
    SimulatedPredictor,
    fit_empirical,
)
from .rl.dqn import DQNAgent
from .rl.train import AgentPolicy, TrainResult, train
from .routers import ClusterEnv, ConfigError, RoutingPolicy, ShapingMode, make_heuristic, run_policy, state_dim
from .workload import ArrivalTrace, generate_mixture, generate_scenario, load_trace

log = logging.getLogger(__name__)

# seed offset for the labelled data the empirical predictor is fitted on
PREDICTOR_TRAIN_OFFSET = 1_000_003

RL_VARIANTS = {
    "BaselineRL": ShapingMode.none,
    "WorkloadAwareRL": ShapingMode.additive,
    "WorkloadGuidedRL": ShapingMode.guided,
}


def build_trace(cfg: ExperimentConfig, seed: int) -> ArrivalTrace:
    w = cfg.workload
    rng = np.random.default_rng(seed)
    if w.kind == "trace":
        return load_trace(w.trace_path)
    if w.kind == "scenario":
        return generate_scenario(w.scenario, w.n_requests, w.arrival_rate, rng, cfg.profile, cfg.thresholds, w.arrival_process)
    return generate_mixture(w.n_requests, w.arrival_rate, rng, process=w.arrival_process)


def build_predictor(cfg: ExperimentConfig, seed: int):
    p = cfg.predictor
    if p.kind == "oracle":
        return OraclePredictor(DEFAULT_SCHEME)
    if p.kind == "empirical":
        labelled = generate_mixture(p.train_requests, 1.0, np.random.default_rng(seed + PREDICTOR_TRAIN_OFFSET))
        return EmpiricalPredictor(fit_empirical(labelled.requests, DEFAULT_SCHEME))
    return SimulatedPredictor(p.accuracy, DEFAULT_SCHEME, seed=seed)


def build_env(cfg: ExperimentConfig, seed: int, episode: int = 0, compute_rewards: bool = False, trace=None) -> ClusterEnv:
    trace = build_trace(cfg, seed) if trace is None else trace
    return ClusterEnv(
        trace.requests,
        cfg.cluster,
        cfg.profile,
        cfg.reward,
        cfg.impact,
        build_predictor(cfg, seed),
        episode=episode,
        compute_rewards=compute_rewards,
        encode_states=compute_rewards,
    )


def build_policy(cfg: ExperimentConfig, agent: Optional[DQNAgent] = None) -> RoutingPolicy:
    if cfg.routing_policy == RL_POLICY:
        if agent is None:
            if not cfg.checkpoint:
                raise ConfigError("config.checkpoint: required when routing_policy is 'RL'")
            agent = DQNAgent.load(cfg.checkpoint)
        if agent.state_dim != state_dim(cfg.cluster.m) or agent.n_actions != cfg.cluster.m + 1:
            raise ConfigError(f"config.checkpoint: agent shape does not match m={cfg.cluster.m}")
        return AgentPolicy(agent)
    return make_heuristic(cfg.routing_policy, cfg.profile, cfg.thresholds, cfg.impact)


class StalledError(ValueError):
    """The policy held every request at the router until the stall cut-off."""


@dataclass
class RunResult:
    seed: int
    report: MetricsReport
    env: ClusterEnv


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None, agent: Optional[DQNAgent] = None) -> RunResult:
    """Play one seed of ``cfg`` to completion and collect metrics."""
    seed = cfg.seeds[0] if seed is None else seed
    env = build_env(cfg, seed)
    policy = build_policy(cfg, agent)
    if isinstance(policy, AgentPolicy):
        env.encode_states = False  # the policy encodes the state itself
    run_policy(env, policy)
    unfinished = len(env.requests) - len(env.completed_requests())
    if unfinished == len(env.requests):
        raise StalledError(f"policy {cfg.routing_policy!r} completed no requests before the stall cut-off")
    if unfinished:
        log.warning("policy %s left %d requests unfinished; latency aggregates cover completed requests only", cfg.routing_policy, unfinished)
    report = compute_metrics(
        env.completed_requests(),
        [i.iteration_log for i in env.instances],
        env.queue_samples,
        cfg.profile,
        cfg.thresholds,
    )
    report.aggregates["invalid_actions"] = float(env.invalid_actions)
    report.aggregates["unfinished"] = float(unfinished)
    report.aggregates["prefill_iterations"] = float(sum(i.prefill_iterations for i in env.instances))
    return RunResult(seed, report, env)


def run_matrix(cfg: ExperimentConfig, agent: Optional[DQNAgent] = None, progress: Optional[Callable] = None) -> List[dict]:
    """One row per (matrix cell, seed): the cell settings plus every aggregate."""
    rows = []
    for cell in expand_matrix(cfg):
        cell_cfg = with_overrides(cfg, **cell)
        for seed in cfg.seeds:
            res = run_experiment(cell_cfg, seed, agent)
            row = {**cell, "seed": seed, **res.report.aggregates}
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


# --------------------------------------------------------------------------- RL


def rl_config(cfg: ExperimentConfig, mode) -> ExperimentConfig:
    return replace(cfg, reward=replace(cfg.reward, shaping_mode=ShapingMode(mode)))


def train_agent(cfg: ExperimentConfig, episodes: Optional[int] = None, seed: int = 0, log_fn=None) -> TrainResult:
    """Train a fresh agent on freshly sampled workloads, one per episode."""
    episodes = cfg.episodes if episodes is None else episodes
    seeds = cfg.train_seeds or tuple(10_000 + k for k in range(episodes))

    def factory(k: int, s: int) -> ClusterEnv:
        return build_env(cfg, s, episode=k, compute_rewards=True)

    agent = DQNAgent(state_dim(cfg.cluster.m), cfg.cluster.m + 1, cfg.agent, seed=seed)
    return train(factory, agent, episodes, seeds, log=log_fn)


def evaluate(cfg: ExperimentConfig, policies: Dict[str, object], seeds: Sequence[int]) -> Dict[str, List[float]]:
    """Mean E2E per seed for each named policy; values are heuristic names or trained agents.

    A run that stalls with requests unfinished scores ``inf``.
    """
    out: Dict[str, List[float]] = {}
    for name, pol in policies.items():
        for s in seeds:
            try:
                if isinstance(pol, DQNAgent):
                    res = run_experiment(replace(cfg, routing_policy=RL_POLICY), s, pol)
                else:
                    res = run_experiment(replace(cfg, routing_policy=pol), s)
            except StalledError:
                score = float("inf")
            else:
                score = res.report.mean_e2e if res.report.aggregates["unfinished"] == 0 else float("inf")
            out.setdefault(name, []).append(score)
    return out


def write_rows(rows: List[dict], path) -> None:
    if not rows:
        raise ValueError("no rows to write")
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in cols])
