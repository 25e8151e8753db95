"""Routing environment: state encoding, reward, heuristic policies and the tick loop."""

from __future__ import annotations

import csv
import enum
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .impact import ImpactConfig, heuristic_h, mixing_scores
from .instance import BatchingPolicy, Instance
from .latency import ACTION_PERIOD_S, HardwareProfile, Thresholds, classify_request, estimate_request_time
from .predictor import DEFAULT_SCHEME, STATE_SCHEME, BucketScheme, annotate
from .workload import Request

log = logging.getLogger(__name__)

QUEUE_CLAMP = 512
HEAD_PROMPT_SCALE = 1024.0


class ShapingMode(str, enum.Enum):
    none = "none"
    additive = "additive"
    guided = "guided"


@dataclass(frozen=True)
class RewardConfig:
    r_w: float = 60.0
    gamma: float = 0.99
    beta_d: float = 0.5
    shaping_mode: ShapingMode = ShapingMode.none

    def __post_init__(self):
        object.__setattr__(self, "shaping_mode", ShapingMode(self.shaping_mode))
        if self.r_w <= 0:
            raise ValueError("r_w must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.beta_d <= 0:
            raise ValueError("beta_d must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shaping_mode"] = self.shaping_mode.value
        return d


def guidance_discount(cfg: RewardConfig, k: int) -> float:
    """Discount used by the learner in episode ``k``."""
    if cfg.shaping_mode is ShapingMode.guided:
        return (1.0 - math.exp(-cfg.beta_d * k)) * cfg.gamma
    return cfg.gamma


def shaping_coefficient(cfg: RewardConfig, k: int) -> float:
    """Weight on the heuristic term in episode ``k`` (gamma minus the guidance discount)."""
    if cfg.shaping_mode is ShapingMode.none:
        return 0.0
    if cfg.shaping_mode is ShapingMode.additive:
        return 1.0
    return cfg.gamma * math.exp(-cfg.beta_d * k)


# --------------------------------------------------------------------------- state


@dataclass
class SystemState:
    queue: Sequence[Request]
    instances: Sequence[Instance]
    clock: float

    @property
    def m(self) -> int:
        return len(self.instances)

    @property
    def head(self) -> Optional[Request]:
        return self.queue[0] if self.queue else None


def state_dim(m: int) -> int:
    return 6 * m + 3


def encode_state(
    system: SystemState,
    decode_scheme: BucketScheme = STATE_SCHEME,
    prompt_edges: Sequence[int] = (0,),
) -> np.ndarray:
    """Fixed-layout vector: six features per instance, then three for the router queue."""
    if len(decode_scheme) != 3:
        raise ValueError("state layout expects a three-bucket decode scheme")
    out = np.zeros(state_dim(system.m))
    for i, inst in enumerate(system.instances):
        f = inst.snapshot(prompt_edges, decode_scheme.edges)
        base = 6 * i
        out[base] = f.pending_prompt_tokens / inst.kv_capacity_tokens
        out[base + 1 : base + 4] = f.decode_counts / inst.max_batch_size
        out[base + 4] = round(f.capacity, 2)
        out[base + 5] = round(f.earliest_completion, 2)
    q = 6 * system.m
    out[q] = min(len(system.queue), QUEUE_CLAMP) / QUEUE_CLAMP
    head = system.head
    if head is not None:
        out[q + 1] = head.prompt_tokens / HEAD_PROMPT_SCALE
        out[q + 2] = head.predicted_bucket if head.predicted_bucket is not None else 0
    return out


def instance_load(inst: Instance) -> float:
    """Prompt and decode tokens already processed by the requests at ``inst``."""
    return float(sum((r.prompt_tokens - r.prompt_remaining) + r.tokens_emitted for r in inst.requests()))


def request_h(impact: ImpactConfig, request: Request, instances: Sequence[Instance], action: int) -> float:
    loads = [instance_load(i) for i in instances]
    return heuristic_h(impact, request.prompt_tokens, request.decode_estimate, loads, action)


# --------------------------------------------------------------------------- heuristics


class RoutingPolicy:
    """Maps the router's view to an action in {0..m}; m means defer."""

    name = "policy"

    def reset(self) -> None:
        pass

    def __call__(self, system: SystemState) -> int:
        raise NotImplementedError


class RoundRobin(RoutingPolicy):
    name = "RoundRobin"

    def __init__(self):
        self.next = 0

    def reset(self):
        self.next = 0

    def __call__(self, system):
        if system.head is None:
            return system.m
        a = self.next % system.m
        self.next += 1
        return a


class DedicatedSmallLarge(RoutingPolicy):
    """Heavy-decode requests go to the upper half of the instances, the rest to the lower half."""

    name = "DedicatedSmallLarge"

    def __init__(self, profile: HardwareProfile = HardwareProfile(), thresholds: Thresholds = Thresholds()):
        self.profile = profile
        self.thresholds = thresholds
        self.counters = [0, 0]

    def reset(self):
        self.counters = [0, 0]

    def __call__(self, system):
        head = system.head
        if head is None:
            return system.m
        m = system.m
        if m == 1:
            return 0
        n_large = max(1, m // 2)
        small = list(range(m - n_large))
        large = list(range(m - n_large, m))
        heavy = classify_request(self.profile, self.thresholds, head.prompt_tokens, head.true_decode_tokens).heavy_decode
        group = large if heavy else small
        k = 1 if heavy else 0
        a = group[self.counters[k] % len(group)]
        self.counters[k] += 1
        return a


class DecodeBalancer(RoutingPolicy):
    """Oracle: sends the request where the outstanding true decode tokens are smallest."""

    name = "DecodeBalancer"

    def __call__(self, system):
        if system.head is None:
            return system.m
        return int(np.argmin([i.pending_true_decode() for i in system.instances]))


class JoinShortestQueue(RoutingPolicy):
    name = "JSQ"

    def __call__(self, system):
        if system.head is None:
            return system.m
        return int(np.argmin([i.pending_tokens() for i in system.instances]))


class MaxCapacity(RoutingPolicy):
    """Route the head to the instance with most free KV, using capacity sampled once per ``interval``."""

    name = "MaxCapacity"

    def __init__(self, interval: float = 1.0):
        self.interval = interval
        self.reset()

    def reset(self):
        self.sampled_at = -math.inf
        self.free: List[float] = []

    def __call__(self, system):
        head = system.head
        if system.clock - self.sampled_at >= self.interval - 1e-9 or not self.free:
            self.sampled_at = system.clock
            self.free = [i.kv_capacity_tokens - i.kv_tokens for i in system.instances]
        if head is None:
            return system.m
        need = head.prompt_tokens + head.decode_estimate
        a = int(np.argmax(self.free))
        if self.free[a] < need:
            return system.m
        self.free[a] -= need
        return a


class MinMin(RoutingPolicy):
    """Earliest estimated finish: pending work plus this job, timed with the latency model."""

    name = "MinMin"

    def __init__(self, profile: HardwareProfile = HardwareProfile()):
        self.profile = profile

    def __call__(self, system):
        head = system.head
        if head is None:
            return system.m
        finish = []
        for inst in system.instances:
            backlog = sum(
                estimate_request_time(self.profile, r.prompt_remaining, max(r.decode_estimate - r.tokens_emitted, 0))
                for r in inst.requests()
            )
            finish.append(backlog + estimate_request_time(self.profile, head.prompt_tokens, head.decode_estimate))
        return int(np.argmin(finish))


class EarliestAvailable(RoutingPolicy):
    """Route to the first instance with room for the head request, otherwise wait."""

    name = "EarliestAvailable"

    def __call__(self, system):
        head = system.head
        if head is None:
            return system.m
        need = head.prompt_tokens + head.decode_estimate
        for k, inst in enumerate(system.instances):
            if not inst.waiting and inst.kv_capacity_tokens - inst.kv_tokens >= need:
                return k
        return system.m


class LeastImpact(RoutingPolicy):
    """Greedy on the mixing penalty: the action for which the shaping term is zero."""

    name = "LeastImpact"

    def __init__(self, impact: ImpactConfig = ImpactConfig()):
        self.impact = impact

    def __call__(self, system):
        head = system.head
        if head is None:
            return system.m
        loads = [instance_load(i) for i in system.instances]
        return int(np.argmax(mixing_scores(self.impact, head.prompt_tokens, head.decode_estimate, loads)))


HEURISTICS: Dict[str, Callable[..., RoutingPolicy]] = {
    "RoundRobin": RoundRobin,
    "DedicatedSmallLarge": DedicatedSmallLarge,
    "DecodeBalancer": DecodeBalancer,
    "JSQ": JoinShortestQueue,
    "MaxCapacity": MaxCapacity,
    "MinMin": MinMin,
    "EarliestAvailable": EarliestAvailable,
    "LeastImpact": LeastImpact,
}


class ConfigError(ValueError):
    pass


def make_heuristic(name: str, profile=HardwareProfile(), thresholds=Thresholds(), impact=ImpactConfig()) -> RoutingPolicy:
    if name not in HEURISTICS:
        raise ConfigError(f"unknown routing policy {name!r}; choose from {sorted(HEURISTICS)}")
    if name == "DedicatedSmallLarge":
        return DedicatedSmallLarge(profile, thresholds)
    if name == "MinMin":
        return MinMin(profile)
    if name == "LeastImpact":
        return LeastImpact(impact)
    return HEURISTICS[name]()


def route_heuristic(policy: RoutingPolicy, system: SystemState) -> int:
    return policy(system)


# --------------------------------------------------------------------------- reward


@dataclass
class RewardParts:
    queue_term: float
    completion_term: float
    h: float
    coefficient: float

    @property
    def unshaped(self) -> float:
        return self.queue_term + self.completion_term

    @property
    def total(self) -> float:
        return self.unshaped - self.coefficient * self.h


def outstanding_penalty(profile: HardwareProfile, requests: Sequence[Request], scheme: BucketScheme = DEFAULT_SCHEME) -> float:
    """Sum over outstanding requests of (1 - fraction done) / ideal time."""
    total = 0.0
    for r in requests:
        d_hat = r.predicted_decode_tokens
        if d_hat is None:
            d_hat = scheme.upper_bound(r.predicted_bucket) if r.predicted_bucket is not None else r.true_decode_tokens
        frac = min(r.tokens_emitted / d_hat, 1.0)
        total += (1.0 - frac) / estimate_request_time(profile, r.prompt_tokens, d_hat)
    return total


def compute_reward(
    outstanding: Sequence[Request],
    completions: int,
    h: float,
    reward_config: RewardConfig,
    k: int,
    profile: HardwareProfile = HardwareProfile(),
) -> RewardParts:
    """Per-tick reward split into its terms.

    ``outstanding`` holds every arrived, not yet completed request (queued or
    at an instance) after the transition; ``h`` is the heuristic term of the
    action taken (0 for defer).
    """
    return RewardParts(
        -outstanding_penalty(profile, outstanding),
        reward_config.r_w * completions,
        h,
        shaping_coefficient(reward_config, k),
    )


# --------------------------------------------------------------------------- environment


@dataclass
class EnvConfig:
    m: int = 4
    kv_capacity_tokens: int = 16384
    max_batch_size: int = 128
    batching_policy: str = "FCFS"
    chunk_size: Optional[int] = None
    dt: float = ACTION_PERIOD_S
    max_sim_time: float = 1e6
    # end the episode when requests wait at the router this long while every replica is idle
    max_stall_s: float = 60.0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.dt > 0 or not self.max_stall_s > 0:
            raise ValueError("dt and max_stall_s must be positive")
        BatchingPolicy(self.batching_policy)


@dataclass
class StepInfo:
    tick: int
    action: int
    routed: Optional[int]
    invalid: bool
    parts: Optional[RewardParts]
    completions: int
    queue_len: int


class ClusterEnv:
    """Discrete-time router over ``m`` simulated replicas.

    Each ``step`` applies one routing action, advances every replica until the
    global clock has moved by ``dt`` and injects arrivals that fell in the
    window.
    """

    def __init__(
        self,
        requests: Sequence[Request],
        config: EnvConfig = EnvConfig(),
        profile: HardwareProfile = HardwareProfile(),
        reward_config: RewardConfig = RewardConfig(),
        impact_config: ImpactConfig = ImpactConfig(),
        predictor: Optional[Callable[[Request], int]] = None,
        episode: int = 0,
        compute_rewards: bool = True,
        record_trajectory: bool = False,
        encode_states: bool = True,
    ):
        self.source = list(requests)
        self.config = config
        self.profile = profile
        self.reward_config = reward_config
        self.impact_config = impact_config
        self.predictor = predictor
        self.episode = episode
        self.compute_rewards = compute_rewards
        self.record_trajectory = record_trajectory
        self.encode_states = encode_states
        self.reset()

    # -------------------------------------------------------------- lifecycle

    def reset(self) -> np.ndarray:
        c = self.config
        self.requests = [r.fresh_copy() for r in self.source]
        self.instances = [
            Instance(self.profile, c.kv_capacity_tokens, c.max_batch_size, c.batching_policy, c.chunk_size, index=k)
            for k in range(c.m)
        ]
        self.queue: deque = deque()
        self.outstanding: Dict[int, Request] = {}
        self.clock = 0.0
        self.tick = 0
        self._next_arrival = 0
        self.n_completed = 0
        self.invalid_actions = 0
        self.stalled = False
        self._idle_since: Optional[float] = None
        self.trajectory: List[dict] = []
        self.queue_samples: List[tuple] = []
        self._arrive(self.clock)
        return self.observe() if self.encode_states else None

    def _arrive(self, t: float) -> None:
        reqs = self.requests
        while self._next_arrival < len(reqs) and reqs[self._next_arrival].arrival_time <= t + 1e-12:
            r = reqs[self._next_arrival]
            if self.predictor is not None and r.predicted_bucket is None:
                annotate([r], self.predictor, getattr(self.predictor, "scheme", DEFAULT_SCHEME))
            self.queue.append(r)
            self.outstanding[r.id] = r
            self._next_arrival += 1

    @property
    def done(self) -> bool:
        return self.stalled or (self._next_arrival >= len(self.requests) and not self.outstanding)

    def system_state(self) -> SystemState:
        return SystemState(self.queue, self.instances, self.clock)

    def observe(self) -> np.ndarray:
        return encode_state(self.system_state())

    def can_route(self) -> bool:
        return bool(self.queue)

    # -------------------------------------------------------------- dynamics

    def step(self, action: int):
        c = self.config
        if not 0 <= action <= c.m:
            raise ValueError(f"action {action} outside 0..{c.m}")
        routed = None
        invalid = False
        h = 0.0
        if action < c.m and self.queue:
            head = self.queue[0]
            inst = self.instances[action]
            if inst.can_ever_fit(head):
                if self.compute_rewards:
                    h = request_h(self.impact_config, head, self.instances, action)
                self.queue.popleft()
                head.routed_time = self.clock
                inst.enqueue(head, self.clock)
                routed = head.id
            else:
                invalid = True
                self.invalid_actions += 1
                log.warning("request %s cannot fit on instance %s; treated as defer", head.id, action)
        target = self.clock + c.dt
        completions = 0
        for inst in self.instances:
            for out in inst.advance_to(target):
                for rid in out.completed:
                    self.outstanding.pop(rid, None)
                    completions += 1
        self.n_completed += completions
        self.clock = target
        self.tick += 1
        self._arrive(self.clock)
        self.queue_samples.append((self.clock, len(self.queue), tuple(len(i.waiting) for i in self.instances)))
        parts = None
        reward = 0.0
        if self.compute_rewards:
            parts = compute_reward(
                list(self.outstanding.values()), completions, h, self.reward_config, self.episode, self.profile
            )
            reward = parts.total
        if self.record_trajectory:
            self.trajectory.append(
                {
                    "tick": self.tick,
                    "action": action,
                    "reward": reward,
                    "unshaped_reward": parts.unshaped if parts else 0.0,
                    "h": h,
                    "coefficient": parts.coefficient if parts else 0.0,
                    "queue_len": len(self.queue),
                    "occupancy": [round(1.0 - i.capacity(), 6) for i in self.instances],
                }
            )
        if self.clock > c.max_sim_time:
            raise RuntimeError("simulation exceeded max_sim_time; the system is not draining")
        self._check_stall()
        info = StepInfo(self.tick, action, routed, invalid, parts, completions, len(self.queue))
        return (self.observe() if self.encode_states else None), reward, self.done, info

    def _check_stall(self) -> None:
        if self.queue and not any(i.has_work for i in self.instances):
            if self._idle_since is None:
                self._idle_since = self.clock
            elif self.clock - self._idle_since >= self.config.max_stall_s - 1e-9:
                self.stalled = True
                log.warning("router held %d requests for %.0f s with every replica idle; episode stopped", len(self.queue), self.config.max_stall_s)
        else:
            self._idle_since = None

    def completed_requests(self) -> List[Request]:
        return [r for r in self.requests if r.done]

    def write_trajectory(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tick", "action", "reward", "queue_len"] + [f"occupancy_{k}" for k in range(self.config.m)])
            for row in self.trajectory:
                w.writerow([row["tick"], row["action"], repr(row["reward"]), row["queue_len"], *row["occupancy"]])


def env_step(env: ClusterEnv, action: int):
    return env.step(action)


def run_policy(env: ClusterEnv, policy: Callable[[SystemState], int]) -> ClusterEnv:
    """Play ``policy`` until every request has completed."""
    env.reset()
    if hasattr(policy, "reset"):
        policy.reset()
    while not env.done:
        env.step(policy(env.system_state()) if env.queue else env.config.m)
    return env
