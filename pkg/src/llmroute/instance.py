"""One simulated model replica with iteration-level batching."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .latency import (
    HardwareProfile,
    decode_batch_time,
    estimate_instance_available,
    prompt_batch_time,
)
from .workload import Request


class BatchingPolicy(str, enum.Enum):
    FCFS = "FCFS"
    BinPacking = "BinPacking"
    LeastWorkLeft = "LeastWorkLeft"


class UnschedulableRequest(ValueError):
    pass


@dataclass
class IterationOutcome:
    elapsed: float
    completed: List[int] = field(default_factory=list)
    preempted: List[int] = field(default_factory=list)
    first_tokens: List[int] = field(default_factory=list)
    prefill: bool = False
    tokens_emitted: int = 0


@dataclass
class InstanceFeatures:
    prompt_counts: np.ndarray
    decode_counts: np.ndarray
    capacity: float
    earliest_completion: float
    pending_prompt_tokens: int


class Instance:
    """Running batch, waiting queue and KV occupancy of a single replica.

    KV accounting reserves the full prompt of every admitted request, so a
    request in prefill already counts ``prompt_tokens + tokens_emitted``.
    """

    def __init__(
        self,
        profile: HardwareProfile = HardwareProfile(),
        kv_capacity_tokens: int = 16384,
        max_batch_size: int = 128,
        batching_policy=BatchingPolicy.FCFS,
        chunk_size: Optional[int] = None,
        index: int = 0,
        record_iterations: bool = True,
    ):
        if kv_capacity_tokens < 1 or max_batch_size < 1:
            raise ValueError("kv_capacity_tokens and max_batch_size must be positive")
        if chunk_size is not None and chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        self.profile = profile
        self.kv_capacity_tokens = kv_capacity_tokens
        self.max_batch_size = max_batch_size
        self.batching_policy = BatchingPolicy(batching_policy)
        self.chunk_size = chunk_size
        self.index = index
        self.running: List[Request] = []  # admission order
        self.waiting: List[Request] = []
        self.clock = 0.0
        self.iterations = 0
        self.prefill_iterations = 0
        self.preemption_log: List[tuple] = []
        self.completed: List[Request] = []
        self.record_iterations = record_iterations
        # (end time, tokens emitted, waiting length, running length)
        self.iteration_log: List[tuple] = []
        self._ids = set()
        self._kv = 0
        self._order_cache: Optional[List[Request]] = None

    # ------------------------------------------------------------------ queries

    def can_ever_fit(self, request: Request) -> bool:
        return request.prompt_tokens + request.true_decode_tokens <= self.kv_capacity_tokens

    @property
    def kv_tokens(self) -> int:
        """Tokens held in KV by the running batch (full prompt reserved)."""
        return self._kv

    @property
    def has_work(self) -> bool:
        return bool(self.running or self.waiting)

    def __len__(self):
        return len(self.running) + len(self.waiting)

    def capacity(self) -> float:
        free = 1.0 - self._kv / self.kv_capacity_tokens
        return min(1.0, max(0.0, free))

    def requests(self):
        yield from self.running
        yield from self.waiting

    def pending_tokens(self) -> int:
        """Prompt plus estimated decode tokens still to be processed."""
        total = 0
        for r in self.running:
            total += r.prompt_remaining + max(r.decode_estimate - r.tokens_emitted, 0)
        for r in self.waiting:
            total += r.prompt_remaining + max(r.decode_estimate - r.tokens_emitted, 0)
        return total

    def pending_true_decode(self) -> int:
        return sum(r.true_decode_tokens - r.tokens_emitted for r in self.requests())

    # ------------------------------------------------------------------ mutation

    def enqueue(self, request: Request, now: Optional[float] = None) -> None:
        if request.id in self._ids:
            raise ValueError(f"request {request.id} already present on instance {self.index}")
        if not self.can_ever_fit(request):
            raise UnschedulableRequest(
                f"request {request.id} needs {request.prompt_tokens + request.true_decode_tokens} KV tokens, "
                f"capacity is {self.kv_capacity_tokens}"
            )
        if now is not None and not self.has_work and self.clock < now:
            self.clock = now
        request.instance = self.index
        self._ids.add(request.id)
        self.waiting.append(request)
        self._order_cache = None

    def _footprint(self, r: Request) -> int:
        return r.prompt_tokens + r.tokens_emitted

    def _order(self) -> List[Request]:
        # Previously started (preempted) requests keep priority over fresh ones.
        # Evictions are inserted at the front and arrivals appended, so
        # ``waiting`` already holds every started request ahead of the fresh ones.
        if self.batching_policy is not BatchingPolicy.LeastWorkLeft:
            return self.waiting
        if self._order_cache is None:
            k = 0
            while k < len(self.waiting) and self.waiting[k].preemption_count > 0:
                k += 1
            fresh = sorted(self.waiting[k:], key=lambda r: r.decode_estimate - r.tokens_emitted)  # stable: FCFS ties
            self._order_cache = self.waiting[:k] + fresh
        return self._order_cache

    def _reservation(self, r: Request) -> int:
        """Final KV footprint if the decode estimate is right (never less than what is held).

        Capped at capacity: an over-estimate must not make a fitting request unschedulable.
        """
        return min(max(r.prompt_tokens + r.decode_estimate, self._footprint(r)), self.kv_capacity_tokens)

    def select_batch(self) -> List[Request]:
        """Move requests from waiting to running according to the batching policy.

        FCFS and LeastWorkLeft admit in priority order while the current
        footprint fits (head-of-line blocking). BinPacking reserves each
        request's full estimated footprint and repeatedly admits the largest
        request that still fits, ties going to the earliest arrival.
        """
        admitted = []
        slots = self.max_batch_size - len(self.running)
        if slots <= 0 or not self.waiting:
            return admitted
        ordered = self._order()
        if self.batching_policy is BatchingPolicy.BinPacking:
            room = self.kv_capacity_tokens - sum(self._reservation(r) for r in self.running)
            pool = list(ordered)
            while slots > 0 and pool:
                if pool[0].preemption_count > 0:
                    # started requests keep strict priority
                    best = pool[0] if self._reservation(pool[0]) <= room else None
                else:
                    best = None
                    for r in pool:  # arrival order, so strict > keeps the earliest on ties
                        size = self._reservation(r)
                        if size <= room and (best is None or size > self._reservation(best)):
                            best = r
                if best is None:
                    break
                pool.remove(best)
                admitted.append(best)
                room -= self._reservation(best)
                slots -= 1
        else:
            room = self.kv_capacity_tokens - self._kv
            for r in ordered:
                if slots == 0 or self._footprint(r) > room:
                    break
                admitted.append(r)
                room -= self._footprint(r)
                slots -= 1
        if admitted:
            chosen = {id(r) for r in admitted}
            self.waiting = [r for r in self.waiting if id(r) not in chosen]
            self._order_cache = None
            for r in admitted:
                self.running.append(r)
                self._kv += self._footprint(r)
        return admitted

    def preempt_if_needed(self) -> List[int]:
        """Evict most-recently-admitted requests until the KV budget holds."""
        evicted = []
        while self._kv > self.kv_capacity_tokens and len(self.running) > 1:
            r = self.running.pop()
            self._kv -= self._footprint(r)
            r.prompt_remaining = r.prompt_tokens
            r.preemption_count += 1
            evicted.append(r)
            self.preemption_log.append((self.clock, r.id))
        # evicted requests go to the front, oldest admission first
        if evicted:
            self.waiting[:0] = evicted[::-1]
            self._order_cache = None
        return [r.id for r in evicted]

    def step(self) -> IterationOutcome:
        """Run one model iteration and advance the clock by its duration."""
        self.select_batch()
        if not self.running:
            return IterationOutcome(0.0)
        out = IterationOutcome(0.0)
        prefilling = [r for r in self.running if r.prompt_remaining > 0]
        kv_before = self._kv
        emitters: List[Request] = []
        if prefilling:
            out.prefill = True
            decoding = [r for r in self.running if r.prompt_remaining == 0]
            budget = self.chunk_size if self.chunk_size is not None else None
            processed = 0
            for r in prefilling:
                take = r.prompt_remaining if budget is None else min(r.prompt_remaining, budget - processed)
                if take <= 0:
                    break
                r.prompt_remaining -= take
                processed += take
                if r.prompt_remaining == 0:
                    emitters.append(r)  # the last prefill pass yields the first output token
            elapsed = prompt_batch_time(self.profile, processed, kv_before)
            if self.chunk_size is not None:
                # chunked prefill piggybacks one decode step for every decoding request
                emitters.extend(decoding)
            self.prefill_iterations += 1
        else:
            emitters = list(self.running)
            elapsed = decode_batch_time(self.profile, kv_before)
        self.clock += elapsed
        self.iterations += 1
        out.elapsed = elapsed
        now = self.clock
        done = []
        for r in emitters:
            r.tokens_emitted += 1
            self._kv += 1
            if r.first_token_time is None:
                r.first_token_time = now
                out.first_tokens.append(r.id)
            if r.tokens_emitted >= r.true_decode_tokens:
                done.append(r)
        out.tokens_emitted = len(emitters)
        if done:
            finished = {id(r) for r in done}
            self.running = [r for r in self.running if id(r) not in finished]
            for r in done:
                r.completion_time = now
                self._kv -= self._footprint(r)
                self._ids.discard(r.id)
                self.completed.append(r)
                out.completed.append(r.id)
        out.preempted = self.preempt_if_needed()
        if self.record_iterations:
            self.iteration_log.append((now, out.tokens_emitted, len(self.waiting), len(self.running)))
        return out

    def advance_to(self, t: float) -> List[IterationOutcome]:
        """Step until the clock reaches ``t``; an iteration crossing ``t`` runs to completion."""
        outcomes = []
        while self.clock < t:
            if not self.has_work:
                self.clock = t
                break
            o = self.step()
            if o.elapsed == 0.0:
                self.clock = t
                break
            outcomes.append(o)
        return outcomes

    def run_until_idle(self) -> None:
        while self.has_work:
            if self.step().elapsed == 0.0:
                raise RuntimeError("instance stalled with work that cannot be admitted")

    # ------------------------------------------------------------------ observation

    def snapshot(self, prompt_edges: Sequence[int], decode_edges: Sequence[int]) -> InstanceFeatures:
        """Bucketed view of the requests at this replica.

        Prompt-phase requests (waiting or mid-prefill) are binned by prompt
        length; decoding requests by their remaining estimated decode tokens.
        """
        pe = np.asarray(prompt_edges)
        de = np.asarray(decode_edges)
        if np.any(np.diff(pe) <= 0) or np.any(np.diff(de) <= 0):
            raise ValueError("bucket edges must be strictly ascending")
        pc = np.zeros(len(pe), dtype=float)
        dc = np.zeros(len(de), dtype=float)
        pending_prompt = 0
        min_left = None
        for r in self.requests():
            if r.prompt_remaining > 0:
                pc[np.searchsorted(pe, r.prompt_tokens, side="right") - 1] += 1
                pending_prompt += r.prompt_remaining
            else:
                left = max(r.decode_estimate - r.tokens_emitted, 0)
                dc[np.searchsorted(de, left, side="right") - 1] += 1
                if min_left is None or left < min_left:
                    min_left = left
        return InstanceFeatures(
            pc,
            dc,
            self.capacity(),
            estimate_instance_available(self.profile, min_left or 0),
            pending_prompt,
        )


def mixing_protocol(
    profile: HardwareProfile = HardwareProfile(),
    first=(1000, 1000),
    injected=(500, 500),
    every: int = 50,
    **instance_kwargs,
) -> tuple:
    """Run one long request while injecting another request every ``every`` iterations.

    Returns (E2E latency of the first request, the instance).
    """
    inst = Instance(profile, **instance_kwargs)
    head = Request(0, "probe", first[0], first[1], 0.0)
    inst.enqueue(head, 0.0)
    next_id = 1
    while not head.done:
        if inst.iterations > 0 and inst.iterations % every == 0:
            inst.enqueue(Request(next_id, "probe", injected[0], injected[1], inst.clock), inst.clock)
            next_id += 1
        inst.step()
    return head.completion_time - head.arrival_time, inst
