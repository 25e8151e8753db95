"""Double DQN agent over the routing environment."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .mlp import Adam, Params, copy_params, init_params, layer_sizes, mlp_forward, mlp_gradient
from .replay import ReplayBuffer


@dataclass(frozen=True)
class AgentConfig:
    hidden: tuple = (64, 64)
    learning_rate: float = 1e-3
    replay_capacity: int = 100_000
    batch_size: int = 512
    target_sync_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    exploration_episodes: int = 20
    huber_delta: float = 1.0
    # multiplies rewards before they enter the replay buffer
    reward_scale: float = 0.01
    updates_per_step: int = 1
    # "tick": one transition per tick, forced defers included;
    # "decision": one transition per routing decision, rewards accumulated until the next one
    transitions: str = "tick"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden must list at least one positive layer width")
        for name in ("replay_capacity", "batch_size", "target_sync_interval", "updates_per_step"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.transitions not in ("tick", "decision"):
            raise ValueError("transitions must be 'tick' or 'decision'")
        if self.exploration_episodes < 0:
            raise ValueError("exploration_episodes must be >= 0")
        if not self.learning_rate > 0 or not self.huber_delta > 0 or not self.reward_scale > 0:
            raise ValueError("learning_rate, huber_delta and reward_scale must be positive")
        if self.batch_size > self.replay_capacity:
            raise ValueError("batch_size must not exceed replay_capacity")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def epsilon(config: AgentConfig, episode: int) -> float:
    """Linear decay over the exploration episodes, exactly zero afterwards."""
    n = config.exploration_episodes
    if episode > n:
        return 0.0
    frac = min(episode / n, 1.0) if n > 0 else 1.0
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


class DQNAgent:
    def __init__(self, state_dim: int, n_actions: int, config: AgentConfig = AgentConfig(), seed: int = 0):
        self.config = config
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)
        self.online: Params = init_params([state_dim, *config.hidden, n_actions], self.rng)
        self.target: Params = copy_params(self.online)
        self.optimizer = Adam(self.online, config.learning_rate)
        self.replay = ReplayBuffer(config.replay_capacity, state_dim)
        self.updates = 0
        self.syncs = 0

    def q_values(self, state) -> np.ndarray:
        return mlp_forward(self.online, state)

    def sync_target(self) -> None:
        self.target = copy_params(self.online)
        self.syncs += 1

    # ------------------------------------------------------------ persistence

    def save(self, path) -> None:
        """Parameters as little-endian float64 (W then b, layer by layer) plus a JSON sidecar."""
        path = Path(path)
        flat = np.concatenate([a.ravel() for w, b in self.online for a in (w, b)]).astype("<f8")
        path.write_bytes(flat.tobytes())
        meta = {
            "layer_sizes": layer_sizes(self.online),
            "shapes": [[list(w.shape), list(b.shape)] for w, b in self.online],
            "dtype": "<f8",
            "config": self.config.to_dict(),
        }
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, seed: int = 0) -> "DQNAgent":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        flat = np.frombuffer(path.read_bytes(), dtype="<f8")
        sizes = meta["layer_sizes"]
        agent = cls(sizes[0], sizes[-1], AgentConfig.from_dict(meta["config"]), seed)
        params = []
        off = 0
        for (ws, bs) in meta["shapes"]:
            nw, nb = int(np.prod(ws)), int(np.prod(bs))
            w = flat[off : off + nw].reshape(ws).copy()
            off += nw
            b = flat[off : off + nb].reshape(bs).copy()
            off += nb
            params.append((w, b))
        if off != len(flat):
            raise ValueError(f"{path}: {len(flat) - off} trailing values")
        agent.online = params
        agent.target = copy_params(params)
        agent.optimizer = Adam(agent.online, agent.config.learning_rate)
        return agent


def act(agent: DQNAgent, state, episode: int, rng: np.random.Generator, eps: Optional[float] = None) -> int:
    """Epsilon-greedy action; greedy ties go to the lowest index."""
    e = epsilon(agent.config, episode) if eps is None else eps
    if episode > agent.config.exploration_episodes:
        e = 0.0
    if e > 0.0 and rng.random() < e:
        return int(rng.integers(agent.n_actions))
    return int(np.argmax(agent.q_values(state)))


def double_dqn_targets(agent: DQNAgent, rewards, next_states, dones, discount: float, steps=None) -> np.ndarray:
    """r + discount**steps * Q_target(s', argmax_a Q_online(s', a)); r alone for terminal transitions."""
    rewards = np.asarray(rewards, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    factor = discount if steps is None else discount ** np.asarray(steps, dtype=float)
    best = np.argmax(mlp_forward(agent.online, next_states), axis=1)
    q_next = mlp_forward(agent.target, next_states)[np.arange(len(best)), best]
    return np.where(dones, rewards, rewards + factor * q_next)


def dqn_update(agent: DQNAgent, discount: float, batch=None) -> Optional[float]:
    """One optimiser step on a replay minibatch; returns the loss, or None if replay is too small."""
    cfg = agent.config
    if batch is None:
        if len(agent.replay) < cfg.batch_size:
            return None
        batch = agent.replay.sample(cfg.batch_size, agent.rng)
    states, actions, rewards, next_states, dones, *rest = batch
    targets = double_dqn_targets(agent, rewards, next_states, dones, discount, rest[0] if rest else None)
    loss, grads = mlp_gradient(agent.online, states, actions, targets, cfg.huber_delta)
    agent.optimizer.step(agent.online, grads)
    agent.updates += 1
    if agent.updates % cfg.target_sync_interval == 0:
        agent.sync_target()
    return loss
