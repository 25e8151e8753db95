"""Analytic estimate of the cost of placing a request on a busy replica."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class ImpactConfig:
    grad1: float = 3.2e-4
    grad2: float = 3.3e-5
    epsilon_s: float = 0.5
    alpha: float = 0.5
    # power on the incoming prompt length in the prompt-phase score
    prompt_exponent: int = 2

    def __post_init__(self):
        if self.grad1 <= 0 or self.grad2 <= 0 or self.epsilon_s <= 0:
            raise ValueError("grad1, grad2 and epsilon_s must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.prompt_exponent not in (1, 2):
            raise ValueError("prompt_exponent must be 1 or 2")

    @classmethod
    def from_dict(cls, data: dict) -> "ImpactConfig":
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def load_total(load: Iterable[Tuple[int, int]]) -> float:
    """Sum of p_j + d_j over the requests already at an instance."""
    return float(sum(p + d for p, d in load))


def prompt_impact(config: ImpactConfig, p_i: int, load_sum: float) -> Tuple[float, float]:
    """Return (T_p, r_p) for an incoming prompt of ``p_i`` tokens."""
    t_p = config.grad1 * (p_i ** config.prompt_exponent + load_sum)
    r_p = 1.0 if t_p <= config.epsilon_s else 1.0 - t_p / config.epsilon_s
    return t_p, r_p


def decode_impact(config: ImpactConfig, p_i: int, d_i: int, load_sum: float) -> float:
    return -config.grad2 * (load_sum + p_i + d_i)


def mixing_penalty(config: ImpactConfig, r_p: float, r_d: float) -> float:
    return config.alpha * r_p + (1.0 - config.alpha) * r_d


def r_mixing(config: ImpactConfig, p_i: int, d_i: int, load_sum: float) -> float:
    _, r_p = prompt_impact(config, p_i, load_sum)
    return mixing_penalty(config, r_p, decode_impact(config, p_i, d_i, load_sum))


def mixing_scores(config: ImpactConfig, p_i: int, d_i: int, load_sums: Sequence[float]) -> np.ndarray:
    return np.array([r_mixing(config, p_i, d_i, s) for s in load_sums])


def heuristic_h(config: ImpactConfig, p_i: int, d_i: int, load_sums: Sequence[float], chosen: int) -> float:
    """Penalty gap between the chosen instance and the best one; 0 when ``chosen`` is best.

    ``chosen`` outside the instance range (the defer action) scores 0.
    """
    if not 0 <= chosen < len(load_sums):
        return 0.0
    scores = mixing_scores(config, p_i, d_i, load_sums)
    return float(scores[chosen] - scores.max())


def best_instance(config: ImpactConfig, p_i: int, d_i: int, load_sums: Sequence[float]) -> int:
    return int(np.argmax(mixing_scores(config, p_i, d_i, load_sums)))
