"""Per-request latency metrics, aggregates and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .latency import HardwareProfile, Thresholds, classify_request
from .workload import Request

REQUEST_COLUMNS = (
    "id",
    "task",
    "class",
    "prompt_tokens",
    "decode_tokens",
    "arrival_s",
    "ttft_s",
    "tbt_s",
    "e2e_s",
    "preemptions",
    "instance",
)
PERCENTILES = (50, 90, 99)


@dataclass
class RequestMetrics:
    id: int
    task: str
    cls: str
    prompt_tokens: int
    decode_tokens: int
    arrival_s: float
    ttft_s: float
    tbt_s: Optional[float]
    e2e_s: float
    preemptions: int
    instance: int

    def row(self) -> list:
        tbt = "" if self.tbt_s is None else repr(self.tbt_s)
        return [
            self.id,
            self.task,
            self.cls,
            self.prompt_tokens,
            self.decode_tokens,
            repr(self.arrival_s),
            repr(self.ttft_s),
            tbt,
            repr(self.e2e_s),
            self.preemptions,
            self.instance,
        ]

    @classmethod
    def from_row(cls, row: dict) -> "RequestMetrics":
        return cls(
            int(row["id"]),
            row["task"],
            row["class"],
            int(row["prompt_tokens"]),
            int(row["decode_tokens"]),
            float(row["arrival_s"]),
            float(row["ttft_s"]),
            None if row["tbt_s"] == "" else float(row["tbt_s"]),
            float(row["e2e_s"]),
            int(row["preemptions"]),
            int(row["instance"]),
        )


@dataclass
class MetricsReport:
    requests: List[RequestMetrics]
    aggregates: Dict[str, float]
    timeseries: List[dict] = field(default_factory=list)

    @property
    def mean_e2e(self) -> float:
        return self.aggregates["e2e_mean"]

    @property
    def makespan(self) -> float:
        return self.aggregates["makespan"]


def request_metrics(r: Request, profile: HardwareProfile, thresholds: Thresholds) -> RequestMetrics:
    if r.completion_time is None or r.first_token_time is None:
        raise ValueError(f"request {r.id} has not completed")
    n = r.tokens_emitted
    # mean inter-token gap telescopes to (last - first) / (n - 1)
    tbt = (r.completion_time - r.first_token_time) / (n - 1) if n > 1 else None
    return RequestMetrics(
        r.id,
        r.task,
        classify_request(profile, thresholds, r.prompt_tokens, r.true_decode_tokens).value,
        r.prompt_tokens,
        r.true_decode_tokens,
        r.arrival_time,
        r.first_token_time - r.arrival_time,
        tbt,
        r.completion_time - r.arrival_time,
        r.preemption_count,
        -1 if r.instance is None else r.instance,
    )


def _summary(prefix: str, values: Sequence[float], out: Dict[str, float]) -> None:
    if not values:
        return
    arr = np.asarray(values, dtype=float)
    out[f"{prefix}_mean"] = float(arr.mean())
    for q in PERCENTILES:
        out[f"{prefix}_p{q}"] = float(np.percentile(arr, q))


def aggregate(rows: Sequence[RequestMetrics]) -> Dict[str, float]:
    """Aggregates that depend only on the per-request rows."""
    if not rows:
        raise ValueError("no completed requests to aggregate")
    out: Dict[str, float] = {"completed": float(len(rows))}
    _summary("e2e", [r.e2e_s for r in rows], out)
    _summary("ttft", [r.ttft_s for r in rows], out)
    _summary("tbt", [r.tbt_s for r in rows if r.tbt_s is not None], out)
    out["e2e_total"] = float(sum(r.e2e_s for r in rows))
    first = min(r.arrival_s for r in rows)
    last = max(r.arrival_s + r.e2e_s for r in rows)
    out["makespan"] = last - first
    out["preemptions"] = float(sum(r.preemptions for r in rows))
    out["decode_tokens"] = float(sum(r.decode_tokens for r in rows))
    return out


def throughput_series(iteration_logs: Sequence[Sequence[tuple]], window: float = 1.0) -> List[dict]:
    """Tokens emitted per ``window`` seconds, summed over instances."""
    buckets: Dict[int, int] = {}
    for logs in iteration_logs:
        for t, tokens, *_ in logs:
            k = int(math.floor(t / window))
            buckets[k] = buckets.get(k, 0) + tokens
    if not buckets:
        return []
    return [{"t": k * window, "tokens_per_s": buckets.get(k, 0) / window} for k in range(max(buckets) + 1)]


def compute_metrics(
    completed: Sequence[Request],
    instance_logs: Sequence[Sequence[tuple]] = (),
    queue_samples: Sequence[tuple] = (),
    profile: HardwareProfile = HardwareProfile(),
    thresholds: Thresholds = Thresholds(),
) -> MetricsReport:
    completed = [r for r in completed if r.done]
    if not completed:
        raise ValueError("compute_metrics needs at least one completed request")
    rows = [request_metrics(r, profile, thresholds) for r in sorted(completed, key=lambda r: r.id)]
    agg = aggregate(rows)
    waits = [r.routed_time - r.arrival_time for r in completed if r.routed_time is not None]
    if waits:
        agg["router_wait_mean"] = float(np.mean(waits))
    series = throughput_series(instance_logs)
    if series:
        agg["throughput_mean"] = float(np.mean([s["tokens_per_s"] for s in series]))
    ts = []
    if queue_samples:
        m = len(queue_samples[0][2])
        inst_q = np.array([s[2] for s in queue_samples], dtype=float)
        agg["router_queue_mean"] = float(np.mean([s[1] for s in queue_samples]))
        agg["instance_queue_mean"] = float(inst_q.mean())
        tp = {int(round(s["t"])): s["tokens_per_s"] for s in series}
        for k, (t, rq, iq) in enumerate(queue_samples):
            if k % 50:  # one row per second at the default tick
                continue
            row = {"tick": k, "t": t, "router_queue": rq, "throughput": tp.get(int(math.floor(t)), 0.0)}
            for i in range(m):
                row[f"queue_{i}"] = iq[i]
            ts.append(row)
    return MetricsReport(rows, agg, ts)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)


def emit_report(report: MetricsReport, out_dir, prefix: str = "", extra: Optional[dict] = None) -> Dict[str, Path]:
    """Write summary JSON, per-request CSV and time-series CSV into ``out_dir``."""
    if not report.requests:
        raise ValueError("refusing to write an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out / f"{prefix}summary.json",
        "requests": out / f"{prefix}requests.csv",
        "timeseries": out / f"{prefix}timeseries.csv",
    }
    summary = {"aggregates": report.aggregates}
    if extra:
        summary.update(extra)
    paths["summary"].write_text(_dumps(summary) + "\n", encoding="utf-8")
    with paths["requests"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_COLUMNS)
        for r in report.requests:
            w.writerow(r.row())
    with paths["timeseries"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if report.timeseries:
            cols = list(report.timeseries[0])
            w.writerow(cols)
            for row in report.timeseries:
                w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        else:
            w.writerow(["tick", "t", "router_queue", "throughput"])
    return paths


def read_request_csv(path) -> List[RequestMetrics]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [RequestMetrics.from_row(row) for row in csv.DictReader(fh)]
