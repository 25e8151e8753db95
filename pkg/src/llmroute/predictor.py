"""Decode-length bucket predictors."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np

from .workload import MAX_CONTEXT_TOKENS, TABLE1, Request


@dataclass(frozen=True)
class BucketScheme:
    edges: tuple = (0, 250, 1000, 4000)
    top: int = MAX_CONTEXT_TOKENS  # stand-in upper bound for the open last bucket

    def __post_init__(self):
        edges = tuple(int(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges or edges[0] != 0:
            raise ValueError("bucket edges must start at 0")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("bucket edges must be strictly ascending")

    def __len__(self):
        return len(self.edges)

    def upper_bound(self, bucket: int) -> int:
        if bucket + 1 < len(self.edges):
            return self.edges[bucket + 1]
        return max(self.top, self.edges[-1] + 1)


DEFAULT_SCHEME = BucketScheme()
# coarser histogram used in the router state
STATE_SCHEME = BucketScheme((0, 256, 2048))


def bucket_of(scheme: BucketScheme, decode_tokens: int) -> int:
    if decode_tokens < 0:
        raise ValueError("decode_tokens must be non-negative")
    return int(np.searchsorted(scheme.edges, decode_tokens, side="right") - 1)


def default_accuracy_table() -> Dict[str, float]:
    return {kind.value: row[4] for kind, row in TABLE1.items()}


def predict_simulated(
    true_bucket: int,
    task: str,
    table: Mapping[str, float],
    rng: np.random.Generator,
    n_buckets: int = len(DEFAULT_SCHEME),
) -> int:
    """Return the true bucket with the task's accuracy, otherwise an adjacent one."""
    acc = table.get(task, 1.0)
    if not 0.0 <= acc <= 1.0:
        raise ValueError(f"accuracy for {task!r} must lie in [0, 1]")
    if rng.random() < acc or n_buckets == 1:
        return true_bucket
    if true_bucket == 0:
        return 1
    if true_bucket == n_buckets - 1:
        return n_buckets - 2
    return true_bucket + (1 if rng.random() < 0.5 else -1)


class SimulatedPredictor:
    def __init__(self, table: Optional[Mapping[str, float]] = None, scheme: BucketScheme = DEFAULT_SCHEME, seed: int = 0):
        self.table = dict(default_accuracy_table() if table is None else table)
        self.scheme = scheme
        self.rng = np.random.default_rng(seed)

    def __call__(self, request: Request) -> int:
        true_b = bucket_of(self.scheme, request.true_decode_tokens)
        return predict_simulated(true_b, request.task, self.table, self.rng, len(self.scheme))


class OraclePredictor:
    def __init__(self, scheme: BucketScheme = DEFAULT_SCHEME):
        self.scheme = scheme

    def __call__(self, request: Request) -> int:
        return bucket_of(self.scheme, request.true_decode_tokens)


@dataclass
class EmpiricalPredictorModel:
    scheme: BucketScheme
    band_edges: tuple
    use_task: bool
    cells: Dict[tuple, np.ndarray] = field(default_factory=dict)
    task_marginals: Dict[str, np.ndarray] = field(default_factory=dict)
    global_marginal: np.ndarray = None

    def band(self, prompt_tokens: int) -> int:
        return int(np.searchsorted(self.band_edges, prompt_tokens, side="right") - 1)


def fit_empirical(
    trace: Iterable[Request],
    scheme: BucketScheme = DEFAULT_SCHEME,
    prompt_band_edges: Sequence[int] = (0, 32, 64, 128, 256, 512),
    use_task: bool = True,
) -> EmpiricalPredictorModel:
    """Frequency tables of decode bucket per (task, prompt band).

    With ``use_task=False`` every request is pooled under one task, which
    gives the task-blind baseline.
    """
    requests = list(trace)
    if not requests:
        raise ValueError("fit_empirical needs a non-empty trace")
    k = len(scheme)
    cells: Dict[tuple, np.ndarray] = defaultdict(lambda: np.zeros(k))
    tasks: Dict[str, np.ndarray] = defaultdict(lambda: np.zeros(k))
    glob = np.zeros(k)
    model = EmpiricalPredictorModel(scheme, tuple(prompt_band_edges), use_task)
    for r in requests:
        b = bucket_of(scheme, r.true_decode_tokens)
        task = r.task if use_task else "*"
        cells[(task, model.band(r.prompt_tokens))][b] += 1
        tasks[task][b] += 1
        glob[b] += 1
    model.cells = {key: v / v.sum() for key, v in cells.items()}
    model.task_marginals = {key: v / v.sum() for key, v in tasks.items()}
    model.global_marginal = glob / glob.sum()
    return model


def predict_empirical(model: EmpiricalPredictorModel, task: str, prompt_tokens: int) -> int:
    key_task = task if model.use_task else "*"
    dist = model.cells.get((key_task, model.band(prompt_tokens)))
    if dist is None:
        dist = model.task_marginals.get(key_task)
    if dist is None:
        dist = model.global_marginal
    return int(np.argmax(dist))  # first index on ties


class EmpiricalPredictor:
    def __init__(self, model: EmpiricalPredictorModel):
        self.model = model
        self.scheme = model.scheme

    def __call__(self, request: Request) -> int:
        return predict_empirical(self.model, request.task, request.prompt_tokens)


@dataclass
class AccuracyReport:
    per_task: Dict[str, float]
    overall: float
    counts: Dict[str, int]


def evaluate_predictor(
    predictor: Callable[[Request], int],
    labeled: Iterable[Request],
    scheme: BucketScheme = DEFAULT_SCHEME,
) -> AccuracyReport:
    hits: Counter = Counter()
    counts: Counter = Counter()
    for r in labeled:
        counts[r.task] += 1
        if predictor(r) == bucket_of(scheme, r.true_decode_tokens):
            hits[r.task] += 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError("evaluate_predictor needs a non-empty labeled trace")
    per_task = {t: hits[t] / counts[t] for t in counts}
    return AccuracyReport(per_task, sum(hits.values()) / total, dict(counts))


def annotate(requests: Iterable[Request], predictor: Callable[[Request], int], scheme: BucketScheme = DEFAULT_SCHEME) -> None:
    """Attach predicted bucket and its upper-bound decode estimate to each request."""
    for r in requests:
        b = predictor(r)
        r.predicted_bucket = b
        r.predicted_decode_tokens = scheme.upper_bound(b)
