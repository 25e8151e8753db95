"""Exhaustive two-replica assignment study for small request sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .instance import Instance
from .latency import HardwareProfile
from .workload import Request

MAX_PARTITION_REQUESTS = 14


@dataclass
class PartitionResult:
    best: float
    worst: float
    mean: float
    best_assignments: List[tuple]
    # (assignment, mean E2E) for every assignment, in lexicographic order
    log: List[tuple]

    @property
    def random_over_best(self) -> float:
        """Relative excess of the average assignment over the best one."""
        return self.mean / self.best - 1.0


def simulate_assignment(
    requests: Sequence[Request],
    assignment: Sequence[int],
    m: int = 2,
    profile: HardwareProfile = HardwareProfile(),
    **instance_kwargs,
) -> float:
    """Mean E2E latency when request ``k`` is sent to instance ``assignment[k]`` on arrival."""
    if len(assignment) != len(requests):
        raise ValueError("assignment length must match the number of requests")
    instances = [Instance(profile, index=i, record_iterations=False, **instance_kwargs) for i in range(m)]
    reqs = [r.fresh_copy() for r in requests]
    for r, a in sorted(zip(reqs, assignment), key=lambda x: x[0].arrival_time):
        inst = instances[a]
        inst.advance_to(r.arrival_time)
        inst.enqueue(r, r.arrival_time)
    for inst in instances:
        inst.run_until_idle()
    return float(np.mean([r.completion_time - r.arrival_time for r in reqs]))


def brute_force_partition(
    requests: Sequence[Request],
    profile: HardwareProfile = HardwareProfile(),
    m: int = 2,
    max_requests: int = MAX_PARTITION_REQUESTS,
    **instance_kwargs,
) -> PartitionResult:
    """Simulate all m**n assignments and report the best, worst and mean E2E."""
    n = len(requests)
    if n < 1:
        raise ValueError("need at least one request")
    if n > max_requests:
        raise ValueError(f"{n} requests give {m}**{n} assignments; the limit is n <= {max_requests}")
    log = []
    for assignment in itertools.product(range(m), repeat=n):
        log.append((assignment, simulate_assignment(requests, assignment, m, profile, **instance_kwargs)))
    values = np.array([v for _, v in log])
    best = float(values.min())
    return PartitionResult(
        best,
        float(values.max()),
        float(values.mean()),
        [a for a, v in log if v == best],
        log,
    )


def random_small_requests(
    n: int,
    rng: np.random.Generator,
    low: int = 10,
    high: int = 100,
    interval: float = 1.0,
) -> List[Request]:
    """``n`` requests at fixed ``interval`` with prompt and decode lengths uniform on [low, high]."""
    return [
        Request(k, "uniform", int(rng.integers(low, high + 1)), int(rng.integers(low, high + 1)), k * interval)
        for k in range(n)
    ]
