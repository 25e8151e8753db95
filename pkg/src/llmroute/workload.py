"""Synthetic request streams and trace ingestion."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .latency import (
    HardwareProfile,
    RequestClass,
    Thresholds,
    classify_request,
    heavy_decode_min_tokens,
    heavy_prompt_min_tokens,
)

MAX_CONTEXT_TOKENS = 4096
MAX_PROMPT_TOKENS = 1000


class TaskKind(str, enum.Enum):
    Translation = "Translation"
    QnA = "QnA"
    SentimentAnalysis = "SentimentAnalysis"
    InContextQnA = "InContextQnA"
    EntityRecognition = "EntityRecognition"


@dataclass
class Request:
    id: int
    task: str
    prompt_tokens: int
    true_decode_tokens: int
    arrival_time: float = 0.0
    predicted_bucket: Optional[int] = None
    # decode length the schedulers may look at; None means use the true value
    predicted_decode_tokens: Optional[int] = None
    first_token_time: Optional[float] = None
    completion_time: Optional[float] = None
    tokens_emitted: int = 0
    preemption_count: int = 0
    # simulator bookkeeping
    prompt_remaining: int = -1
    instance: Optional[int] = None
    routed_time: Optional[float] = None

    def __post_init__(self):
        if self.prompt_tokens < 1:
            raise ValueError(f"request {self.id}: prompt_tokens must be >= 1")
        if self.true_decode_tokens < 1:
            raise ValueError(f"request {self.id}: decode tokens must be >= 1")
        if self.prompt_remaining < 0:
            self.prompt_remaining = self.prompt_tokens

    @property
    def decode_estimate(self) -> int:
        if self.predicted_decode_tokens is None:
            return self.true_decode_tokens
        return self.predicted_decode_tokens

    @property
    def done(self) -> bool:
        return self.completion_time is not None

    def fresh_copy(self) -> "Request":
        """Copy with all simulation state cleared."""
        return Request(
            id=self.id,
            task=self.task,
            prompt_tokens=self.prompt_tokens,
            true_decode_tokens=self.true_decode_tokens,
            arrival_time=self.arrival_time,
            predicted_bucket=self.predicted_bucket,
            predicted_decode_tokens=self.predicted_decode_tokens,
        )


# --------------------------------------------------------------------------- distributions


def _lognormal_pmf(support: np.ndarray, median: float, sigma: float) -> np.ndarray:
    """Lognormal mass on integer bins [k - 0.5, k + 0.5), renormalised over ``support``."""
    from scipy.stats import lognorm

    dist = lognorm(s=sigma, scale=median)
    lo = np.maximum(support - 0.5, 0.0)
    mass = dist.cdf(support + 0.5) - dist.cdf(lo)
    if mass.sum() <= 0:
        # everything fell outside the support; put it on the nearest edge
        mass = np.zeros_like(mass, dtype=float)
        mass[0 if median < support[0] else -1] = 1.0
    return mass / mass.sum()


@dataclass(frozen=True)
class DiscreteDist:
    """Distribution over a contiguous integer range given by its pmf."""

    low: int
    pmf: np.ndarray = field(repr=False)

    @property
    def high(self) -> int:
        return self.low + len(self.pmf) - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.low, self.high + 1), self.pmf))

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.pmf)
        c[-1] = 1.0
        return c

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        u = rng.random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        idx = np.minimum(idx, len(self.pmf) - 1)
        if size is None:
            return int(self.low + idx)
        return self.low + idx

    @classmethod
    def lognormal(cls, low: int, high: int, median: float, sigma: float) -> "DiscreteDist":
        support = np.arange(low, high + 1, dtype=float)
        return cls(low, _lognormal_pmf(support, median, sigma))

    @classmethod
    def shifted_lognormal(cls, low: int, high: int, median_excess: float, sigma: float) -> "DiscreteDist":
        """``low`` plus a lognormal excess, truncated at ``high``."""
        support = np.arange(0, high - low + 1, dtype=float) + 1.0
        return cls(low, _lognormal_pmf(support, median_excess, sigma))

    @classmethod
    def uniform(cls, low: int, high: int) -> "DiscreteDist":
        n = high - low + 1
        return cls(low, np.full(n, 1.0 / n))


def _bisect(f, lo: float, hi: float, iters: int = 200) -> float:
    flo = f(lo)
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return math.sqrt(lo * hi)


PROMPT_SIGMA = 0.7
LIGHT_DECODE_SIGMA = 0.8
HEAVY_DECODE_SIGMA = 0.9
# light median : heavy excess median, both scaled by one per-task factor
LIGHT_SCALE = 150.0
HEAVY_SCALE = 300.0


@dataclass(frozen=True)
class TaskSpec:
    task: str
    mean_prompt: float
    mean_decode: float
    heavy_decode_fraction: float
    prompt_distribution: DiscreteDist
    light_decode_distribution: DiscreteDist
    heavy_decode_distribution: DiscreteDist
    samples: int = 0
    accuracy: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.heavy_decode_fraction <= 1.0:
            raise ValueError("heavy_decode_fraction must lie in [0, 1]")
        for d in (self.prompt_distribution, self.light_decode_distribution, self.heavy_decode_distribution):
            if d.low < 1 or d.high > MAX_CONTEXT_TOKENS:
                raise ValueError("distribution support must lie within [1, 4096]")

    @property
    def decode_mean(self) -> float:
        h = self.heavy_decode_fraction
        return (1 - h) * self.light_decode_distribution.mean + h * self.heavy_decode_distribution.mean

    @classmethod
    def fit(
        cls,
        task: str,
        mean_prompt: float,
        mean_decode: float,
        heavy_decode_fraction: float,
        heavy_decode_tokens: int = 300,
        samples: int = 0,
        accuracy: float = 1.0,
    ) -> "TaskSpec":
        """Moment-match a prompt lognormal and a light/heavy decode mixture to the given means."""
        prompt_hi = MAX_PROMPT_TOKENS

        def prompt_gap(median):
            return DiscreteDist.lognormal(1, prompt_hi, median, PROMPT_SIGMA).mean - mean_prompt

        prompt = DiscreteDist.lognormal(1, prompt_hi, _bisect(prompt_gap, 0.5, 5000.0), PROMPT_SIGMA)

        h = heavy_decode_fraction
        light_hi = heavy_decode_tokens - 1

        def components(scale):
            light = DiscreteDist.lognormal(1, light_hi, LIGHT_SCALE * scale, LIGHT_DECODE_SIGMA)
            heavy = DiscreteDist.shifted_lognormal(
                heavy_decode_tokens, MAX_CONTEXT_TOKENS, HEAVY_SCALE * scale, HEAVY_DECODE_SIGMA
            )
            return light, heavy

        def decode_gap(scale):
            light, heavy = components(scale)
            return (1 - h) * light.mean + h * heavy.mean - mean_decode

        if decode_gap(1e-4) > 0 or decode_gap(100.0) < 0:
            raise ValueError(f"{task}: mean decode {mean_decode} unreachable with heavy fraction {h}")
        light, heavy = components(_bisect(decode_gap, 1e-4, 100.0))
        return cls(task, mean_prompt, mean_decode, h, prompt, light, heavy, samples, accuracy)


# (samples, mean prompt, mean decode, heavy-decode fraction, predictor accuracy)
TABLE1 = {
    TaskKind.Translation: (7351, 29.09, 61.76, 0.0918, 0.9310),
    TaskKind.QnA: (6988, 29.83, 334.40, 0.5818, 0.7036),
    TaskKind.SentimentAnalysis: (6564, 211.54, 142.53, 0.4101, 0.7992),
    TaskKind.InContextQnA: (7122, 125.16, 220.02, 0.4795, 0.6527),
    TaskKind.EntityRecognition: (3304, 26.41, 64.10, 0.0871, 0.9506),
}
TABLE1_TOTAL = dict(samples=31329, mean_prompt=89.03, mean_decode=175.71, heavy_fraction=0.3554, accuracy=0.7915)

_SPEC_CACHE: dict = {}


def table1_specs(profile: HardwareProfile = HardwareProfile(), thresholds: Thresholds = Thresholds()) -> dict:
    key = (profile, thresholds)
    if key not in _SPEC_CACHE:
        dh = heavy_decode_min_tokens(profile, thresholds)
        _SPEC_CACHE[key] = {
            kind.value: TaskSpec.fit(kind.value, mp, md, hf, dh, samples=n, accuracy=acc)
            for kind, (n, mp, md, hf, acc) in TABLE1.items()
        }
    return _SPEC_CACHE[key]


def sample_request(spec: TaskSpec, rng: np.random.Generator, request_id: int = 0, arrival_time: float = 0.0) -> Request:
    prompt = spec.prompt_distribution.sample(rng)
    heavy = rng.random() < spec.heavy_decode_fraction
    dist = spec.heavy_decode_distribution if heavy else spec.light_decode_distribution
    return Request(request_id, spec.task, prompt, dist.sample(rng), arrival_time)


class MixtureSampler:
    """Draws tasks in Table 1 sample proportions, then a request from that task."""

    def __init__(self, specs: dict, rng: np.random.Generator):
        self.specs = specs
        self.tasks = list(specs)
        weights = np.array([max(specs[t].samples, 0) for t in self.tasks], dtype=float)
        if weights.sum() == 0:
            weights[:] = 1.0
        self.weights = weights / weights.sum()
        self.rng = rng

    def draw(self, request_id: int = 0, arrival_time: float = 0.0) -> Request:
        task = self.tasks[int(self.rng.choice(len(self.tasks), p=self.weights))]
        return sample_request(self.specs[task], self.rng, request_id, arrival_time)


# --------------------------------------------------------------------------- arrivals


@dataclass
class ArrivalTrace:
    requests: list
    arrival_process: str = "poisson"

    def __post_init__(self):
        times = [r.arrival_time for r in self.requests]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("arrival times must be non-decreasing")

    def __len__(self):
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def fresh(self) -> "ArrivalTrace":
        return ArrivalTrace([r.fresh_copy() for r in self.requests], self.arrival_process)


def arrival_times(n: int, rate: float, process: str, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        raise ValueError("arrival rate must be positive")
    if process == "poisson":
        gaps = rng.exponential(1.0 / rate, size=n)
        gaps[0] = 0.0
    elif process == "fixed":
        gaps = np.full(n, 1.0 / rate)
        gaps[0] = 0.0
    else:
        raise ValueError(f"unknown arrival process {process!r}")
    return np.cumsum(gaps)


def generate_mixture(
    n: int,
    rate: float,
    rng: np.random.Generator,
    specs: Optional[dict] = None,
    process: str = "poisson",
) -> ArrivalTrace:
    if n < 1:
        raise ValueError("n must be >= 1")
    sampler = MixtureSampler(specs or table1_specs(), rng)
    times = arrival_times(n, rate, process, rng)
    return ArrivalTrace([sampler.draw(i, float(t)) for i, t in enumerate(times)], process)


class ScenarioKind(str, enum.Enum):
    LH_HL_random = "LH_HL_random"
    AllRandom = "AllRandom"
    LH_then_HL = "LH_then_HL"
    HL_then_LH = "HL_then_LH"


class ClassSampler:
    """Draws requests of a requested class.

    Light prompts and both decode components come from the Table 1 mixture;
    heavy prompts (absent from that data, whose prompts stop at 1000 tokens)
    are uniform on [heavy threshold, 2 x heavy threshold].
    """

    def __init__(self, profile: HardwareProfile, thresholds: Thresholds, rng: np.random.Generator, specs=None):
        self.profile = profile
        self.thresholds = thresholds
        self.rng = rng
        self.mixture = MixtureSampler(specs or table1_specs(profile, thresholds), rng)
        p_min = heavy_prompt_min_tokens(profile, thresholds)
        self.heavy_prompt = DiscreteDist.uniform(p_min, min(2 * p_min, 3 * MAX_CONTEXT_TOKENS // 4))
        self.p_min = p_min

    def draw(self, cls: RequestClass, request_id: int, arrival_time: float) -> Request:
        rng = self.rng
        specs = self.mixture.specs
        while True:
            task = self.mixture.tasks[int(rng.choice(len(self.mixture.tasks), p=self.mixture.weights))]
            spec = specs[task]
            if cls.heavy_decode and spec.heavy_decode_fraction == 0:
                continue
            if not cls.heavy_decode and spec.heavy_decode_fraction == 1:
                continue
            break
        if cls.heavy_prompt:
            prompt = self.heavy_prompt.sample(rng)
        else:
            prompt = min(spec.prompt_distribution.sample(rng), self.p_min - 1)
        comp = spec.heavy_decode_distribution if cls.heavy_decode else spec.light_decode_distribution
        decode = min(comp.sample(rng), MAX_CONTEXT_TOKENS - prompt)
        req = Request(request_id, task, prompt, decode, arrival_time)
        assert classify_request(self.profile, self.thresholds, prompt, decode) is cls
        return req


def generate_scenario(
    kind,
    n: int,
    rate: float,
    rng: np.random.Generator,
    profile: HardwareProfile = HardwareProfile(),
    thresholds: Thresholds = Thresholds(),
    process: str = "poisson",
) -> ArrivalTrace:
    kind = ScenarioKind(kind)
    if n < 1:
        raise ValueError("n must be >= 1")
    LH, HL = RequestClass.LH, RequestClass.HL
    if kind is ScenarioKind.LH_then_HL:
        classes = [LH] * (n // 2) + [HL] * (n - n // 2)
    elif kind is ScenarioKind.HL_then_LH:
        classes = [HL] * (n // 2) + [LH] * (n - n // 2)
    elif kind is ScenarioKind.LH_HL_random:
        classes = [LH if rng.random() < 0.5 else HL for _ in range(n)]
    else:
        all4 = list(RequestClass)
        classes = [all4[int(rng.integers(4))] for _ in range(n)]
    sampler = ClassSampler(profile, thresholds, rng)
    times = arrival_times(n, rate, process, rng)
    return ArrivalTrace([sampler.draw(c, i, float(t)) for i, (c, t) in enumerate(zip(classes, times))], process)


# --------------------------------------------------------------------------- traces

TRACE_COLUMNS = ("arrival_time_s", "task", "prompt_tokens", "decode_tokens")


class TraceFormatError(ValueError):
    pass


def load_trace(path) -> ArrivalTrace:
    path = Path(path)
    requests = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
            raise TraceFormatError(f"{path}:1: header must be {','.join(TRACE_COLUMNS)}")
        last = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TraceFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                t = float(row[0])
                prompt = int(row[2])
                decode = int(row[3])
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
            if not math.isfinite(t) or t < 0:
                raise TraceFormatError(f"{path}:{lineno}: bad arrival time {row[0]!r}")
            if t < last:
                raise TraceFormatError(f"{path}:{lineno}: arrival times must be non-decreasing")
            if prompt < 1 or decode < 1:
                raise TraceFormatError(f"{path}:{lineno}: prompt_tokens and decode_tokens must be >= 1")
            last = t
            requests.append(Request(len(requests), row[1].strip(), prompt, decode, t))
    return ArrivalTrace(requests, "trace")


def write_trace(trace: ArrivalTrace, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([repr(float(r.arrival_time)), r.task, r.prompt_tokens, r.true_decode_tokens])


@dataclass
class TaskStats:
    count: int
    mean_prompt: float
    mean_decode: float
    heavy_decode_fraction: float


def task_stats(
    requests: Sequence[Request],
    thresholds: Thresholds = Thresholds(),
    profile: HardwareProfile = HardwareProfile(),
) -> dict:
    """Per-task and overall (key ``"Total"``) count, means and heavy-decode share."""
    requests = list(requests)
    if not requests:
        raise ValueError("task_stats needs a non-empty trace")
    groups: dict = {}
    for r in requests:
        groups.setdefault(r.task, []).append(r)
    groups["Total"] = requests
    out = {}
    for task, rs in groups.items():
        heavy = sum(classify_request(profile, thresholds, r.prompt_tokens, r.true_decode_tokens).heavy_decode for r in rs)
        out[task] = TaskStats(
            len(rs),
            sum(r.prompt_tokens for r in rs) / len(rs),
            sum(r.true_decode_tokens for r in rs) / len(rs),
            heavy / len(rs),
        )
    return out
