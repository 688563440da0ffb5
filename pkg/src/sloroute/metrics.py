"""Outcome aggregation: goodput, violation ratio, logs, and the overhead bench."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .router import (
    InstanceView,
    PolicyState,
    RoutingPolicy,
    select_instance,
)

MS_PER_S = 1000.0


@dataclass(frozen=True)
class RequestRecord:
    """Timeline of one request from arrival to completion (or rejection)."""

    request_id: int
    arrival_ms: float
    deadline_ms: float
    completion_ms: float | None
    queue_ms: float
    prefill_ms: float
    transfer_ms: float
    migrations: int
    instance_path: tuple[str, ...]
    rejected: bool
    true_output_length: int
    predicted_total: float | None = None
    token_times_ms: tuple[float, ...] = ()

    @property
    def latency_ms(self) -> float | None:
        if self.completion_ms is None:
            return None
        return self.completion_ms - self.arrival_ms

    @property
    def decode_ms(self) -> float:
        if self.completion_ms is None:
            return 0.0
        return (
            self.completion_ms
            - self.arrival_ms
            - self.queue_ms
            - self.prefill_ms
            - self.transfer_ms
        )

    @property
    def within_slo(self) -> bool:
        latency = self.latency_ms
        return latency is not None and latency <= self.deadline_ms


@dataclass(frozen=True)
class DecisionLogRow:
    request_id: int
    arrival_ms: float
    policy: str
    chosen_instance: str
    feasible: bool
    estimated_t_ms: float
    decision_latency_us: float


@dataclass(frozen=True)
class MigrationLogRow:
    request_id: int
    time_ms: float
    source: str
    destination: str
    mode: str
    tokens: int
    cost_ms: float


@dataclass(frozen=True)
class LatencyDistribution:
    count: int
    mean_us: float
    p50_us: float
    p95_us: float
    max_us: float

    @staticmethod
    def from_samples(samples_us: Sequence[float]) -> "LatencyDistribution":
        if not len(samples_us):
            return LatencyDistribution(0, 0.0, 0.0, 0.0, 0.0)
        arr = np.asarray(samples_us, dtype=np.float64)
        return LatencyDistribution(
            count=int(arr.size),
            mean_us=float(arr.mean()),
            p50_us=float(np.percentile(arr, 50)),
            p95_us=float(np.percentile(arr, 95)),
            max_us=float(arr.max()),
        )


@dataclass(frozen=True)
class MetricsReport:
    total_requests: int
    within_slo: int
    violated: int
    rejected: int
    goodput_rps: float
    violation_ratio: float
    span_s: float
    migration_count: int
    migration_mean_cost_ms: float
    predictor_mae: float | None
    predictor_normalized_mae: float | None
    decision_latency: LatencyDistribution

    def to_dict(self) -> dict:
        data = asdict(self)
        return data

    @staticmethod
    def from_dict(data: dict) -> "MetricsReport":
        payload = dict(data)
        payload["decision_latency"] = LatencyDistribution(**payload["decision_latency"])
        return MetricsReport(**payload)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        return MetricsReport.from_dict(json.loads(text))


def goodput(records: Sequence[RequestRecord]) -> float:
    """Requests finishing within their deadline per second of trace span.

    Span runs from the first arrival to the last completion; a zero span
    (single-instant run) degenerates to the within-SLO count.
    """
    if not records:
        raise ValidationError("goodput of empty record list is undefined")
    within = sum(1 for r in records if r.within_slo)
    completions = [r.completion_ms for r in records if r.completion_ms is not None]
    if not completions:
        return 0.0
    first_arrival = min(r.arrival_ms for r in records)
    span_s = (max(completions) - first_arrival) / MS_PER_S
    if span_s <= 0.0:
        return float(within)
    return within / span_s


def violation_ratio(records: Sequence[RequestRecord]) -> float:
    """Fraction of arrivals that missed their deadline; rejections count."""
    if not records:
        raise ValidationError("violation ratio of empty record list is undefined")
    violations = sum(1 for r in records if not r.within_slo)
    return violations / len(records)


def build_report(
    records: Sequence[RequestRecord],
    decision_latencies_us: Sequence[float],
    migrations: Sequence[MigrationLogRow],
) -> MetricsReport:
    if not records:
        raise ValidationError("cannot build a report from zero records")
    within = sum(1 for r in records if r.within_slo)
    rejected = sum(1 for r in records if r.rejected)
    completions = [r.completion_ms for r in records if r.completion_ms is not None]
    first_arrival = min(r.arrival_ms for r in records)
    span_s = ((max(completions) - first_arrival) / MS_PER_S) if completions else 0.0

    predicted = [
        (r.predicted_total, r.true_output_length)
        for r in records
        if r.predicted_total is not None
    ]
    mae_value = norm_mae = None
    if predicted:
        preds = np.array([p for p, _ in predicted])
        truths = np.array([t for _, t in predicted], dtype=np.float64)
        mae_value = float(np.abs(preds - truths).mean())
        norm_mae = mae_value / float(truths.mean())

    return MetricsReport(
        total_requests=len(records),
        within_slo=within,
        violated=len(records) - within,
        rejected=rejected,
        goodput_rps=goodput(records),
        violation_ratio=violation_ratio(records),
        span_s=span_s,
        migration_count=len(migrations),
        migration_mean_cost_ms=(
            float(np.mean([m.cost_ms for m in migrations])) if migrations else 0.0
        ),
        predictor_mae=mae_value,
        predictor_normalized_mae=norm_mae,
        decision_latency=LatencyDistribution.from_samples(decision_latencies_us),
    )


def write_timeline_csv(records: Sequence[RequestRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "request_id",
                "arrival_ms",
                "instance_path",
                "prefill_ms",
                "decode_ms",
                "queue_ms",
                "migrations",
                "completion_ms",
                "deadline_ms",
                "within_slo",
            ]
        )
        for r in records:
            writer.writerow(
                [
                    r.request_id,
                    f"{r.arrival_ms:.3f}",
                    ">".join(r.instance_path),
                    f"{r.prefill_ms:.3f}",
                    f"{r.decode_ms:.3f}",
                    f"{r.queue_ms:.3f}",
                    r.migrations,
                    "" if r.completion_ms is None else f"{r.completion_ms:.3f}",
                    f"{r.deadline_ms:.3f}",
                    int(r.within_slo),
                ]
            )


def write_decision_csv(rows: Sequence[DecisionLogRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "request_id",
                "arrival_ms",
                "policy",
                "chosen_instance",
                "feasible",
                "estimated_t_ms",
                "decision_latency_us",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    row.request_id,
                    f"{row.arrival_ms:.3f}",
                    row.policy,
                    row.chosen_instance,
                    int(row.feasible),
                    f"{row.estimated_t_ms:.3f}",
                    f"{row.decision_latency_us:.1f}",
                ]
            )


def write_migration_csv(rows: Sequence[MigrationLogRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["request_id", "time_ms", "src", "dst", "mode", "tokens", "cost_ms"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.request_id,
                    f"{row.time_ms:.3f}",
                    row.source,
                    row.destination,
                    row.mode,
                    row.tokens,
                    f"{row.cost_ms:.3f}",
                ]
            )


@dataclass(frozen=True)
class BenchResult:
    instance_count: int
    target_rps: float
    decisions: int
    latency: LatencyDistribution

    def to_dict(self) -> dict:
        return asdict(self)


def bench_overhead(
    instance_count: int,
    rps: float,
    duration_s: float,
    model,
    seed: int = 0,
    prompt_tokens: int = 64,
    batch_window_s: float = 0.01,
) -> BenchResult:
    """Wall-clock cost of the full selection path at simulated cluster scale.

    Registers ``instance_count`` virtual instances with synthetic estimates
    and streams ``rps * duration_s`` synthetic requests through featurize ->
    predict -> estimate -> select.  Predictions are batched over a
    ``batch_window_s`` arrival window; each decision's recorded latency is
    its share of the batch plus its own selection time.  Training time is
    excluded by construction.
    """
    from .predictor.moe import MoeModel, predict_total_batch

    if instance_count < 1:
        raise ValidationError("instance_count must be >= 1")
    if rps <= 0 or duration_s <= 0:
        raise ValidationError("rps and duration_s must be > 0")
    if not isinstance(model, MoeModel):
        raise ValidationError("bench_overhead needs a MoeModel")

    rng = np.random.default_rng([seed, instance_count])
    views = []
    for i in range(instance_count):
        views.append(
            InstanceView(
                index=i,
                name=f"v{i}",
                q_s=float(rng.uniform(0.0, 0.5)),
                p_s_per_token=float(rng.uniform(5e-6, 5e-5)),
                d_s_per_token=float(rng.uniform(0.005, 0.05)),
                pending=int(rng.integers(0, 32)),
                running=int(rng.integers(0, 32)),
                max_batch=64,
                free_token_budget=int(rng.integers(10_000, 100_000)),
                tpm_tokens=float(rng.uniform(0, 1e6)),
                hit_prefix_tokens=0,
            )
        )

    vocab_tokens = model.vocab.tokens()
    total = int(round(rps * duration_s))
    batch_size = max(1, min(512, int(round(rps * batch_window_s))))
    policy = RoutingPolicy(kind="goodserve")
    state = PolicyState(policy)
    latencies_us: list[float] = []

    done = 0
    while done < total:
        n = min(batch_size, total - done)
        prompts = []
        deadlines = []
        for _ in range(n):
            ids = rng.integers(0, len(vocab_tokens), size=prompt_tokens)
            prompts.append(" ".join(vocab_tokens[int(t)] for t in ids))
            deadlines.append(float(rng.uniform(1.0, 8.0)))
        t0 = time.perf_counter()
        totals = predict_total_batch(model, prompts)
        t_batch_us = (time.perf_counter() - t0) * 1e6
        share_us = t_batch_us / n
        for j in range(n):
            t1 = time.perf_counter()
            select_instance(
                request_id=done + j,
                input_length=prompt_tokens,
                deadline_s=deadlines[j],
                predicted_output=float(totals[j]),
                views=views,
                policy=policy,
                state=state,
            )
            select_us = (time.perf_counter() - t1) * 1e6
            latencies_us.append(share_us + select_us)
        done += n

    return BenchResult(
        instance_count=instance_count,
        target_rps=rps,
        decisions=total,
        latency=LatencyDistribution.from_samples(latencies_us),
    )
