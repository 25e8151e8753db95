"""Token-count to wall-clock conversion and heavy/light request classes."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

# Router action cadence (seconds); the minimum decode batch time of the profiled setup.
ACTION_PERIOD_S = 0.02


@dataclass(frozen=True)
class HardwareProfile:
    """Affine latency model of one model replica.

    ``decode_time_per_token`` is the per-KV-token cost of a decode iteration as
    seen by the simulator. Its default is calibrated so that a solo
    (1000, 1000) request takes ~17 s and the periodic-injection experiment
    lands near 31 s; the analytic impact estimator carries its own slopes.
    """

    prompt_time_per_token: float = 3.2e-4
    prompt_time_intercept: float = 0.026
    decode_time_per_token: float = 1.0e-6
    decode_time_base: float = 0.01668

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.prompt_time_per_token <= self.decode_time_per_token:
            raise ValueError("prompt_time_per_token must exceed decode_time_per_token")

    @property
    def tokens_per_second_decode(self) -> float:
        return 1.0 / self.decode_time_base

    @classmethod
    def from_dict(cls, data: dict) -> "HardwareProfile":
        known = {k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)


# The slopes exactly as profiled on V100 (decode slope applied per KV token).
PAPER_SLOPES = HardwareProfile(decode_time_per_token=3.3e-5)


@dataclass(frozen=True)
class Thresholds:
    heavy_prompt_seconds: float = 0.5
    heavy_decode_seconds: float = 5.0

    def __post_init__(self):
        if self.heavy_prompt_seconds <= 0 or self.heavy_decode_seconds <= 0:
            raise ValueError("thresholds must be positive")
        if self.heavy_decode_seconds <= self.heavy_prompt_seconds:
            raise ValueError("heavy_decode_seconds must exceed heavy_prompt_seconds")

    @classmethod
    def from_dict(cls, data: dict) -> "Thresholds":
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


class RequestClass(str, enum.Enum):
    LL = "LL"
    LH = "LH"
    HL = "HL"
    HH = "HH"

    @property
    def heavy_prompt(self) -> bool:
        return self.value[0] == "H"

    @property
    def heavy_decode(self) -> bool:
        return self.value[1] == "H"


def prompt_batch_time(profile: HardwareProfile, prompt_tokens_in_batch: int, kv_tokens_in_flight: int = 0) -> float:
    """Duration of an iteration that runs prefill over ``prompt_tokens_in_batch`` tokens."""
    return (
        profile.prompt_time_intercept
        + profile.prompt_time_per_token * prompt_tokens_in_batch
        + profile.decode_time_per_token * kv_tokens_in_flight
    )


def decode_batch_time(profile: HardwareProfile, total_tokens_in_flight: int) -> float:
    return profile.decode_time_base + profile.decode_time_per_token * total_tokens_in_flight


def estimate_request_time(profile: HardwareProfile, p: int, d: int) -> float:
    """Ideal, interference-free completion time of a request."""
    return p * profile.prompt_time_per_token + d * profile.decode_time_base


def estimate_instance_available(profile: HardwareProfile, iterations_left: int) -> float:
    return max(iterations_left, 0) * profile.decode_time_base


def heavy_prompt_min_tokens(profile: HardwareProfile, thresholds: Thresholds) -> int:
    """Smallest prompt length that classifies as heavy."""
    n = max(1, math.ceil(thresholds.heavy_prompt_seconds / profile.prompt_time_per_token))
    # guard against float rounding on either side of the boundary
    while n > 1 and (n - 1) * profile.prompt_time_per_token >= thresholds.heavy_prompt_seconds:
        n -= 1
    while n * profile.prompt_time_per_token < thresholds.heavy_prompt_seconds:
        n += 1
    return n


def heavy_decode_min_tokens(profile: HardwareProfile, thresholds: Thresholds) -> int:
    """Smallest decode length that classifies as heavy."""
    n = max(0, math.ceil(thresholds.heavy_decode_seconds / profile.decode_time_base))
    while n > 0 and (n - 1) * profile.decode_time_base >= thresholds.heavy_decode_seconds:
        n -= 1
    while n * profile.decode_time_base < thresholds.heavy_decode_seconds:
        n += 1
    return n


def classify_request(profile: HardwareProfile, thresholds: Thresholds, p: int, d: int) -> RequestClass:
    heavy_p = p * profile.prompt_time_per_token >= thresholds.heavy_prompt_seconds
    heavy_d = d * profile.decode_time_base >= thresholds.heavy_decode_seconds
    return RequestClass(("H" if heavy_p else "L") + ("H" if heavy_d else "L"))
