"""Trace ingestion, synthetic workload generation, and deadline assignment.

Everything here is a pure function over immutable inputs: traces are lists
of frozen ``RequestSpec`` records, generation is fully determined by the
config seed, and deadline assignment returns a new trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, TraceFormatError, ValidationError
from .profiles import GpuProfile

MS_PER_S = 1000.0

_REQUIRED_TRACE_FIELDS = ("id", "arrival_ms", "prompt", "input_length", "output_length")


@dataclass(frozen=True)
class RequestSpec:
    """One inference request as seen by the harness.

    ``true_output_length`` is simulator ground truth; routing policies only
    ever see lengths through a predictor.  ``deadline_ms`` is the absolute
    end-to-end budget measured from arrival.
    """

    id: int
    arrival_ms: float
    prompt_text: str
    input_length: int
    true_output_length: int
    task_type: str = ""
    deadline_ms: float | None = None

    def validate(self) -> None:
        if self.input_length < 1:
            raise ValidationError(f"request {self.id}: input_length must be >= 1")
        if self.true_output_length < 1:
            raise ValidationError(f"request {self.id}: output_length must be >= 1")
        if self.arrival_ms < 0:
            raise ValidationError(f"request {self.id}: arrival_ms must be >= 0")
        if self.deadline_ms is not None and self.deadline_ms <= 0:
            raise ValidationError(f"request {self.id}: deadline_ms must be > 0")

    @property
    def prompt_tokens(self) -> list[str]:
        return self.prompt_text.split()


@dataclass(frozen=True)
class ArrivalProcess:
    """Arrival process spec: poisson(rate_rps), fixed(interval_ms) or explicit times."""

    kind: str
    rate_rps: float | None = None
    interval_ms: float | None = None
    times_ms: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "poisson":
            if not self.rate_rps or self.rate_rps <= 0:
                raise ValidationError("poisson arrivals need rate_rps > 0")
        elif self.kind == "fixed":
            if self.interval_ms is None or self.interval_ms < 0:
                raise ValidationError("fixed arrivals need interval_ms >= 0")
        elif self.kind == "explicit":
            if not self.times_ms:
                raise ValidationError("explicit arrivals need a times_ms list")
        else:
            raise ValidationError(f"unknown arrival kind {self.kind!r}")

    @staticmethod
    def poisson(rate_rps: float) -> "ArrivalProcess":
        return ArrivalProcess(kind="poisson", rate_rps=rate_rps)

    @staticmethod
    def fixed(interval_ms: float) -> "ArrivalProcess":
        return ArrivalProcess(kind="fixed", interval_ms=interval_ms)

    @staticmethod
    def explicit(times_ms: Sequence[float]) -> "ArrivalProcess":
        return ArrivalProcess(kind="explicit", times_ms=tuple(times_ms))


@dataclass(frozen=True)
class ClusterSpec:
    """One task cluster: length ranges plus a token pool for prompt text."""

    task_type: str
    input_range: tuple[int, int]
    output_range: tuple[int, int]
    vocabulary: tuple[str, ...]

    def __post_init__(self) -> None:
        lo_i, hi_i = self.input_range
        lo_o, hi_o = self.output_range
        if lo_i < 1 or hi_i < lo_i:
            raise ValidationError(f"cluster {self.task_type}: bad input_range")
        if lo_o < 1 or hi_o < lo_o:
            raise ValidationError(f"cluster {self.task_type}: bad output_range")
        if not self.vocabulary:
            raise ValidationError(f"cluster {self.task_type}: empty vocabulary")


@dataclass(frozen=True)
class TraceConfig:
    request_count: int
    arrival: ArrivalProcess
    clusters: tuple[ClusterSpec, ...]
    rng_seed: int = 0
    disjoint_vocabularies: bool = True

    def __post_init__(self) -> None:
        if self.request_count < 1:
            raise ValidationError("request_count must be >= 1")
        if not self.clusters:
            raise ValidationError("cluster_spec must list at least one cluster")
        if self.disjoint_vocabularies:
            seen: dict[str, str] = {}
            for cluster in self.clusters:
                for token in cluster.vocabulary:
                    if token in seen and seen[token] != cluster.task_type:
                        raise ValidationError(
                            f"token {token!r} appears in clusters "
                            f"{seen[token]!r} and {cluster.task_type!r}"
                        )
                    seen[token] = cluster.task_type


@dataclass(frozen=True)
class SloPolicy:
    """Deadline policy: scale the reference-instance solo latency."""

    reference_profile: str
    relaxation_factor: float

    def __post_init__(self) -> None:
        if self.relaxation_factor <= 0:
            raise ValidationError("relaxation_factor must be > 0")


def solo_latency_ms(input_length: int, output_length: int, profile: GpuProfile) -> float:
    """Unloaded end-to-end latency on a profile: no queue, cold cache, batch 1."""
    return (
        profile.prefill_ms_per_token * input_length
        + profile.unloaded_decode_ms_per_token * output_length
    )


def load_trace(path: str) -> list[RequestSpec]:
    """Parse a JSON-lines trace file, validate it, and sort by arrival time."""
    specs: list[RequestSpec] = []
    seen_ids: set[int] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"line {line_no}: invalid JSON ({exc.msg})")
            if not isinstance(record, dict):
                raise TraceFormatError(f"line {line_no}: record must be an object")
            for field in _REQUIRED_TRACE_FIELDS:
                if field not in record:
                    raise TraceFormatError(f"line {line_no}: missing field {field}")
            spec = RequestSpec(
                id=int(record["id"]),
                arrival_ms=float(record["arrival_ms"]),
                prompt_text=str(record["prompt"]),
                input_length=int(record["input_length"]),
                true_output_length=int(record["output_length"]),
                task_type=str(record.get("task_type", "")),
                deadline_ms=(
                    float(record["deadline_ms"])
                    if record.get("deadline_ms") is not None
                    else None
                ),
            )
            try:
                spec.validate()
            except ValidationError as exc:
                raise TraceFormatError(f"line {line_no}: {exc}")
            if spec.id in seen_ids:
                raise ValidationError(f"line {line_no}: duplicate request id {spec.id}")
            seen_ids.add(spec.id)
            specs.append(spec)
    specs.sort(key=lambda s: (s.arrival_ms, s.id))
    return specs


def save_trace(trace: Iterable[RequestSpec], path: str) -> None:
    """Write a trace in the JSON-lines format accepted by :func:`load_trace`."""
    with open(path, "w", encoding="utf-8") as handle:
        for spec in trace:
            record = {
                "id": spec.id,
                "arrival_ms": spec.arrival_ms,
                "prompt": spec.prompt_text,
                "input_length": spec.input_length,
                "output_length": spec.true_output_length,
                "task_type": spec.task_type,
            }
            if spec.deadline_ms is not None:
                record["deadline_ms"] = spec.deadline_ms
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def _arrival_times(config: TraceConfig, rng: np.random.Generator) -> np.ndarray:
    n = config.request_count
    arrival = config.arrival
    if arrival.kind == "poisson":
        gaps = rng.exponential(MS_PER_S / float(arrival.rate_rps), size=n)
        return np.cumsum(gaps)
    if arrival.kind == "fixed":
        return np.arange(n, dtype=float) * float(arrival.interval_ms)
    times = np.asarray(arrival.times_ms, dtype=float)
    if len(times) < n:
        raise ValidationError(
            f"explicit arrivals provide {len(times)} times for {n} requests"
        )
    return np.sort(times[:n])


def generate_synthetic(config: TraceConfig) -> list[RequestSpec]:
    """Generate a deterministic synthetic trace from cluster specs.

    Each request is drawn from exactly one cluster: lengths uniform within
    the cluster ranges, prompt tokens sampled from the cluster vocabulary.
    """
    rng = np.random.default_rng(config.rng_seed)
    arrivals = _arrival_times(config, rng)
    specs: list[RequestSpec] = []
    for i in range(config.request_count):
        cluster = config.clusters[int(rng.integers(len(config.clusters)))]
        lo_i, hi_i = cluster.input_range
        lo_o, hi_o = cluster.output_range
        input_length = int(rng.integers(lo_i, hi_i + 1))
        output_length = int(rng.integers(lo_o, hi_o + 1))
        token_ids = rng.integers(len(cluster.vocabulary), size=input_length)
        prompt = " ".join(cluster.vocabulary[int(t)] for t in token_ids)
        specs.append(
            RequestSpec(
                id=i,
                arrival_ms=float(arrivals[i]),
                prompt_text=prompt,
                input_length=input_length,
                true_output_length=output_length,
                task_type=cluster.task_type,
            )
        )
    return specs


def assign_slos(
    trace: Sequence[RequestSpec],
    policy: SloPolicy,
    profiles: Mapping[str, GpuProfile],
) -> list[RequestSpec]:
    """Set each request's deadline to factor x its reference solo latency.

    Deadline setting is an offline oracle step: it uses the true output
    length, mirroring a measure-then-scale methodology.  The router itself
    never reads true lengths.
    """
    if policy.reference_profile not in profiles:
        known = ", ".join(sorted(profiles))
        raise ConfigError(
            f"unknown reference profile {policy.reference_profile!r} (known: {known})"
        )
    reference = profiles[policy.reference_profile]
    assigned = []
    for spec in trace:
        solo = solo_latency_ms(spec.input_length, spec.true_output_length, reference)
        assigned.append(replace(spec, deadline_ms=policy.relaxation_factor * solo))
    return assigned


def with_fixed_deadline(trace: Sequence[RequestSpec], deadline_ms: float) -> list[RequestSpec]:
    """Give every request the same absolute deadline (fixed-SLO scenarios)."""
    if deadline_ms <= 0:
        raise ValidationError("deadline_ms must be > 0")
    return [replace(spec, deadline_ms=deadline_ms) for spec in trace]
