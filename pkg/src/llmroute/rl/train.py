"""Training and greedy evaluation loops for the DQN router."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..metrics import compute_metrics
from ..routers import ClusterEnv, RoutingPolicy, SystemState, encode_state, guidance_discount
from .dqn import DQNAgent, act, dqn_update, epsilon

EnvFactory = Callable[[int, int], ClusterEnv]  # (episode, seed) -> environment


@dataclass
class EpisodeStats:
    episode: int
    seed: int
    epsilon: float
    discount: float
    total_reward: float
    unshaped_reward: float
    shaping_total: float
    mean_e2e: float
    ticks: int
    mean_loss: Optional[float]
    invalid_actions: int
    # requests left at the router when a stalled episode was cut off
    unfinished: int = 0


@dataclass
class TrainResult:
    agent: DQNAgent
    stats: List[EpisodeStats] = field(default_factory=list)

    def rewards(self) -> np.ndarray:
        return np.array([s.total_reward for s in self.stats])


def run_episode(env: ClusterEnv, agent: DQNAgent, episode: int, rng: np.random.Generator, learn: bool = True, eps=None):
    """Play one episode; returns (total reward, unshaped reward, shaping total, losses)."""
    cfg = agent.config
    discount = guidance_discount(env.reward_config, episode)
    per_decision = cfg.transitions == "decision"
    state = env.reset()
    m = env.config.m
    total = unshaped = shaping = 0.0
    losses = []
    # open decision transition: [state, action, discounted reward, ticks]
    pending = None

    def store(s, a, r, s2, done, steps):
        # a stall cut-off is a truncation, so the target still bootstraps
        agent.replay.add(s, a, r * cfg.reward_scale, s2, done and not env.stalled, steps)
        for _ in range(cfg.updates_per_step):
            loss = dqn_update(agent, discount)
            if loss is not None:
                losses.append(loss)

    while not env.done:
        # with an empty router queue every action is a defer
        routing = env.can_route()
        a = act(agent, state, episode, rng, eps) if routing else m
        if learn and per_decision and routing:
            if pending is not None:
                store(pending[0], pending[1], pending[2], state, False, pending[3])
            pending = [state, a, 0.0, 0]
        next_state, r, done, info = env.step(a)
        total += r
        if info.parts is not None:
            unshaped += info.parts.unshaped
            shaping += -info.parts.coefficient * info.parts.h
        if learn:
            if not per_decision:
                store(state, a, r, next_state, done, 1)
            elif pending is not None:
                pending[2] += discount ** pending[3] * r
                pending[3] += 1
        state = next_state
    if learn and pending is not None:
        store(pending[0], pending[1], pending[2], state, True, pending[3])
    return total, unshaped, shaping, losses


def train(env_factory: EnvFactory, agent: DQNAgent, episodes: int, seeds: Optional[Sequence[int]] = None, log=None) -> TrainResult:
    """Standard double-DQN loop; episode ``k`` uses workload seed ``seeds[k % len(seeds)]``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = list(range(episodes)) if seeds is None else list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    result = TrainResult(agent)
    for k in range(episodes):
        seed = seeds[k % len(seeds)]
        env = env_factory(k, seed)
        env.episode = k
        total, unshaped, shaping, losses = run_episode(env, agent, k, agent.rng)
        completed = env.completed_requests()
        mean_e2e = compute_metrics(completed, profile=env.profile).mean_e2e if completed else float("nan")
        st = EpisodeStats(
            k,
            seed,
            epsilon(agent.config, k),
            guidance_discount(env.reward_config, k),
            total,
            unshaped,
            shaping,
            mean_e2e,
            env.tick,
            float(np.mean(losses)) if losses else None,
            env.invalid_actions,
            len(env.requests) - len(completed),
        )
        result.stats.append(st)
        if log is not None:
            log(st)
    return result


class AgentPolicy(RoutingPolicy):
    """Greedy routing with a frozen agent."""

    name = "RL"

    def __init__(self, agent: DQNAgent):
        self.agent = agent

    def __call__(self, system: SystemState) -> int:
        if not system.queue:
            return system.m
        q = self.agent.q_values(encode_state(system))
        return int(np.argmax(q))
