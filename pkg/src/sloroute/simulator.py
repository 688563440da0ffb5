"""Deterministic discrete-event simulation of heterogeneous serving instances.

Each instance runs continuous batching: between decode iterations it admits
waiting requests FIFO (charging serial prefill for non-cached tokens), then
advances every running request by one token per iteration, with iteration
latency affine in batch size.  Memory is reserved at admission for the full
final context so capacity safety holds without preemption.  All randomness
comes from seeded generators and events are processed in (time, seq) order,
so identical scenarios replay byte-identically.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, SizeLimitError, ValidationError
from .estimator import (
    DECODE_PER_TOKEN,
    EmaConfig,
    EmaEstimator,
    PREFILL_PER_TOKEN,
    PrefixCacheIndex,
    QUEUE_WAIT,
)
from .metrics import (
    DecisionLogRow,
    MigrationLogRow,
    RequestRecord,
)
from .profiles import GpuProfile, ModelProfile
from .router import (
    ActiveRequestView,
    FIXED_POLICY,
    InstanceView,
    MigrationAction,
    MS_PER_S,
    PolicyState,
    RiskCheckConfig,
    RoutingPolicy,
    check_risk,
    migration_cost,
    select_instance,
)
from .workload import RequestSpec

logger = logging.getLogger(__name__)

ARRIVAL = 0
WAKE = 1
RISK_CHECK = 2
MIGRATION_COMPLETE = 3

WAITING = "waiting"
RUNNING = "running"
TRANSIT = "transit"
DONE = "done"
REJECTED = "rejected"


@dataclass
class SimConfig:
    rng_seed: int = 0
    link_bandwidth_bps: float = 1e10
    model_profile: ModelProfile = field(default_factory=ModelProfile)
    risk_check: RiskCheckConfig = field(default_factory=RiskCheckConfig)
    policy: RoutingPolicy = field(default_factory=lambda: RoutingPolicy(kind="goodserve"))
    ema: EmaConfig = field(default_factory=EmaConfig)
    prefix_block_size: int = 16
    prefix_capacity_tokens: int = 65536
    migration_enabled: bool = True
    migration_mode: str = "token_ids"
    record_estimator_series: bool = True
    record_token_times: bool = False
    debug_checks: bool = False

    def __post_init__(self) -> None:
        if self.link_bandwidth_bps <= 0:
            raise ValidationError("link bandwidth must be > 0")
        if self.migration_mode not in ("token_ids", "kv_cache"):
            raise ValidationError(f"unknown migration mode {self.migration_mode!r}")


class RequestSim:
    """Mutable in-flight state for one request."""

    __slots__ = (
        "spec",
        "prompt_tokens",
        "predicted_total",
        "generated",
        "context_tokens",
        "status",
        "host",
        "enqueue_ms",
        "queue_ms",
        "prefill_ms",
        "transfer_ms",
        "kv_carried",
        "migrations",
        "landed_iteration",
        "instance_path",
        "completion_ms",
        "token_times",
    )

    def __init__(self, spec: RequestSpec):
        self.spec = spec
        self.prompt_tokens = spec.prompt_text.split()
        self.predicted_total: float | None = None
        self.generated = 0
        self.context_tokens = spec.input_length
        self.status = WAITING
        self.host: "InstanceSim | None" = None
        self.enqueue_ms = 0.0
        self.queue_ms = 0.0
        self.prefill_ms = 0.0
        self.transfer_ms = 0.0
        self.kv_carried = False
        self.migrations = 0
        self.landed_iteration: int | None = None
        self.instance_path: list[str] = []
        self.completion_ms: float | None = None
        self.token_times: list[float] = []

    @property
    def remaining_output(self) -> int:
        return self.spec.true_output_length - self.generated

    @property
    def final_context_tokens(self) -> int:
        # KV for prompt plus every token the request will ever generate;
        # invariant across migrations, reserved in full at admission.
        return self.spec.input_length + self.spec.true_output_length


class InstanceSim:
    """One continuous-batching instance: queue, batch, cache, telemetry."""

    def __init__(
        self,
        index: int,
        profile: GpuProfile,
        config: SimConfig,
    ):
        self.index = index
        self.name = profile.name
        self.profile = profile
        self.waiting: deque[RequestSim] = deque()
        self.running: list[RequestSim] = []
        self.reserved_tokens = 0
        self.iterations = 0
        self.wake_at: float | None = None
        self.estimator = EmaEstimator(
            instance_name=profile.name,
            config=config.ema,
            seed_q_s=0.0,
            seed_p_s_per_token=profile.prefill_ms_per_token / MS_PER_S,
            seed_d_s_per_token=profile.unloaded_decode_ms_per_token / MS_PER_S,
            record_series=config.record_estimator_series,
        )
        self.prefix_cache = PrefixCacheIndex(
            block_size=config.prefix_block_size,
            capacity_tokens=config.prefix_capacity_tokens,
        )
        self.tpm_events: deque[tuple[float, int]] = deque()

    @property
    def pending(self) -> int:
        return len(self.waiting) + len(self.running)

    @property
    def free_tokens(self) -> int:
        return self.profile.token_budget - self.reserved_tokens

    def current_context_tokens(self) -> int:
        return sum(r.context_tokens for r in self.running)

    def add_tpm(self, now_ms: float, tokens: int) -> None:
        if tokens > 0:
            self.tpm_events.append((now_ms, tokens))

    def tpm_tokens(self, now_ms: float, window_s: float) -> float:
        horizon = now_ms - window_s * MS_PER_S
        while self.tpm_events and self.tpm_events[0][0] < horizon:
            self.tpm_events.popleft()
        return float(sum(tokens for _, tokens in self.tpm_events))

    def admission_wait_ms(self, final_context: int) -> float:
        """Lookahead on true state: time until this request could be admitted.

        Assumes no further arrivals, FIFO admission of the current queue
        ahead, and true remaining lengths of the running batch.  Used only
        by the oracle arm.
        """
        profile = self.profile
        if final_context > profile.token_budget:
            return float("inf")
        running = [[r.remaining_output, r.final_context_tokens] for r in self.running]
        ahead = [
            (
                r.context_tokens * profile.prefill_ms_per_token,
                r.final_context_tokens,
                r.remaining_output,
            )
            for r in self.waiting
        ]
        reserved = self.reserved_tokens
        batch = len(running)
        t = 0.0
        while True:
            progressed = True
            while progressed:
                progressed = False
                if batch < profile.max_batch:
                    if ahead:
                        prefill_ms, ctx, remaining = ahead[0]
                        if reserved + ctx <= profile.token_budget:
                            ahead.pop(0)
                            t += prefill_ms
                            reserved += ctx
                            running.append([remaining, ctx])
                            batch += 1
                            progressed = True
                    elif reserved + final_context <= profile.token_budget:
                        return t
            if not running:
                return float("inf")
            shortest = min(r[0] for r in running)
            t += shortest * profile.iter_ms(batch)
            survivors = []
            for r in running:
                r[0] -= shortest
                if r[0] <= 0:
                    reserved -= r[1]
                    batch -= 1
                else:
                    survivors.append(r)
            running = survivors


@dataclass
class SimResult:
    records: list[RequestRecord]
    decisions: list[DecisionLogRow]
    migrations: list[MigrationLogRow]
    estimators: list[EmaEstimator]
    instance_names: list[str]
    decision_latencies_us: list[float]


class Engine:
    """Single-threaded event loop over arrivals, iterations, and migrations."""

    def __init__(
        self,
        trace: Sequence[RequestSpec],
        instances: Sequence[GpuProfile],
        config: SimConfig,
        predictor=None,
    ):
        if not instances:
            raise ConfigError("at least one instance is required")
        names = [p.name for p in instances]
        if len(set(names)) != len(names):
            raise ConfigError("instance names must be unique")
        ids = [spec.id for spec in trace]
        if len(set(ids)) != len(ids):
            raise ValidationError("request ids must be unique")
        for spec in trace:
            spec.validate()
            if spec.deadline_ms is None:
                raise ConfigError(
                    f"request {spec.id} has no deadline; assign SLOs before simulating"
                )
        needs_predictor = config.policy.kind == "goodserve"
        if needs_predictor and predictor is None:
            raise ConfigError("the goodserve policy needs an output-length predictor")

        self.trace = sorted(trace, key=lambda s: (s.arrival_ms, s.id))
        self.config = config
        self.predictor = predictor
        self.instances = [InstanceSim(i, p, config) for i, p in enumerate(instances)]
        self.policy_state = PolicyState(config.policy)
        self.requests: dict[int, RequestSim] = {}
        self.decisions: list[DecisionLogRow] = []
        self.migration_rows: list[MigrationLogRow] = []
        self.decision_latencies_us: list[float] = []
        self._events: list[tuple[float, int, int, object]] = []
        self._seq = itertools.count()
        self._truths = {spec.id: spec.true_output_length for spec in self.trace}

    # -- event plumbing -------------------------------------------------

    def _push(self, time_ms: float, kind: int, payload: object) -> None:
        heapq.heappush(self._events, (time_ms, next(self._seq), kind, payload))

    def _schedule_wake(self, instance: InstanceSim, time_ms: float) -> None:
        if instance.wake_at is None:
            instance.wake_at = time_ms
            self._push(time_ms, WAKE, instance.index)

    # -- views ----------------------------------------------------------

    def _view(self, instance: InstanceSim, request: RequestSim | None, now_ms: float) -> InstanceView:
        hit = (
            instance.prefix_cache.match_tokens(request.prompt_tokens)
            if request is not None
            else 0
        )
        if self.config.policy.kind == "oracle" and request is not None:
            profile = instance.profile
            batch_next = min(len(instance.running) + 1, profile.max_batch)
            q_s = instance.admission_wait_ms(request.final_context_tokens) / MS_PER_S
            p_s = profile.prefill_ms_per_token / MS_PER_S
            d_s = profile.iter_ms(batch_next) / MS_PER_S
        else:
            est = instance.estimator
            q_s, p_s, d_s = est.q_s, est.p_s_per_token, est.d_s_per_token
        return InstanceView(
            index=instance.index,
            name=instance.name,
            q_s=q_s,
            p_s_per_token=p_s,
            d_s_per_token=d_s,
            pending=instance.pending,
            running=len(instance.running),
            max_batch=instance.profile.max_batch,
            free_token_budget=instance.free_tokens,
            tpm_tokens=instance.tpm_tokens(now_ms, self.config.policy.tpm_window_s),
            hit_prefix_tokens=hit,
        )

    # -- arrival & routing ------------------------------------------------

    def _handle_arrival(self, request: RequestSim, now_ms: float) -> None:
        spec = request.spec
        started = time.perf_counter()
        if self.config.policy.kind == "oracle":
            predicted = float(spec.true_output_length)
            request.predicted_total = predicted
        elif self.predictor is not None:
            predicted = self.predictor.predict_total(spec.id, spec.prompt_text)
            request.predicted_total = predicted
        else:
            predicted = 0.0
            request.predicted_total = None

        views = [self._view(inst, request, now_ms) for inst in self.instances]
        decision = select_instance(
            request_id=spec.id,
            input_length=spec.input_length,
            deadline_s=spec.deadline_ms / MS_PER_S,
            predicted_output=predicted,
            views=views,
            policy=self.config.policy,
            state=self.policy_state,
        )
        latency_us = (time.perf_counter() - started) * 1e6
        latency_us += getattr(self.predictor, "latency_ms", 0.0) * 1000.0
        decision.decision_latency_us = latency_us
        self.decision_latencies_us.append(latency_us)
        self.decisions.append(
            DecisionLogRow(
                request_id=spec.id,
                arrival_ms=spec.arrival_ms,
                policy=self.config.policy.kind,
                chosen_instance=decision.instance_name,
                feasible=decision.feasible,
                estimated_t_ms=decision.estimates_s[decision.instance_name] * MS_PER_S,
                decision_latency_us=latency_us,
            )
        )
        chosen = self.instances[decision.instance_index]
        request.host = chosen
        request.status = WAITING
        request.enqueue_ms = now_ms
        request.instance_path.append(chosen.name)
        chosen.waiting.append(request)
        self._schedule_wake(chosen, now_ms)

    # -- instance stepping -----------------------------------------------

    def _admit(self, instance: InstanceSim, now_ms: float) -> float:
        """Admit FIFO-eligible requests, charging serial prefill; returns new local time."""
        t_local = now_ms
        profile = instance.profile
        while instance.waiting:
            head = instance.waiting[0]
            if head.final_context_tokens > profile.token_budget:
                instance.waiting.popleft()
                head.status = REJECTED
                head.host = None
                logger.warning(
                    "request %d rejected: context %d exceeds %s budget %d",
                    head.spec.id,
                    head.final_context_tokens,
                    instance.name,
                    profile.token_budget,
                )
                continue
            if len(instance.running) >= profile.max_batch:
                break
            if instance.reserved_tokens + head.final_context_tokens > profile.token_budget:
                break
            instance.waiting.popleft()
            wait_ms = t_local - head.enqueue_ms
            head.queue_ms += wait_ms
            instance.estimator.observe(QUEUE_WAIT, wait_ms / MS_PER_S, t_local)
            if head.kv_carried:
                uncached = 0
                head.kv_carried = False
            else:
                hit = instance.prefix_cache.match_tokens(head.prompt_tokens)
                uncached = head.context_tokens - min(hit, head.context_tokens)
            prefill_ms = uncached * profile.prefill_ms_per_token
            if uncached > 0:
                instance.estimator.observe(
                    PREFILL_PER_TOKEN,
                    (prefill_ms / MS_PER_S) / uncached,
                    t_local + prefill_ms,
                )
            t_local += prefill_ms
            head.prefill_ms += prefill_ms
            instance.prefix_cache.record(head.prompt_tokens, t_local)
            instance.add_tpm(t_local, uncached)
            head.status = RUNNING
            instance.running.append(head)
            instance.reserved_tokens += head.final_context_tokens
        return t_local

    def _handle_wake(self, instance: InstanceSim, now_ms: float) -> None:
        instance.wake_at = None
        t_local = self._admit(instance, now_ms)
        if not instance.running:
            if instance.waiting:
                # Admission with an empty batch can only be blocked by an
                # oversize head, and those are rejected inside _admit.
                raise ValidationError(
                    f"instance {instance.name} deadlocked with a non-empty queue"
                )
            return
        if self.config.debug_checks:
            assert len(instance.running) <= instance.profile.max_batch
            assert instance.reserved_tokens <= instance.profile.token_budget
            assert instance.current_context_tokens() <= instance.profile.token_budget
        batch = len(instance.running)
        iter_ms = instance.profile.iter_ms(batch)
        t_end = t_local + iter_ms
        instance.estimator.observe(DECODE_PER_TOKEN, iter_ms / MS_PER_S, t_end)
        instance.add_tpm(t_end, batch)
        finished: list[RequestSim] = []
        for request in instance.running:
            request.generated += 1
            request.context_tokens += 1
            if self.config.record_token_times:
                request.token_times.append(t_end)
            if request.generated >= request.spec.true_output_length:
                finished.append(request)
        for request in finished:
            instance.running.remove(request)
            instance.reserved_tokens -= request.final_context_tokens
            request.status = DONE
            request.completion_ms = t_end
            if self.predictor is not None:
                self.predictor.observe_completion(request.spec.true_output_length)
        instance.iterations += 1
        if (
            self.config.migration_enabled
            and instance.iterations % self.config.risk_check.tau_iterations == 0
        ):
            self._push(t_end, RISK_CHECK, instance.index)
        if instance.running or instance.waiting:
            self._schedule_wake(instance, t_end)

    # -- risk check & migration -------------------------------------------

    def _handle_risk_check(self, instance: InstanceSim, now_ms: float) -> None:
        if not self.config.migration_enabled:
            return
        # Rectification belongs to the predict-and-rectify arms; the fixed
        # arm joins in only when a predictor is explicitly supplied (tests).
        if self.config.policy.kind == "oracle":
            pass
        elif self.predictor is None:
            return
        elif self.config.policy.kind not in ("goodserve", FIXED_POLICY):
            return
        active_requests = list(instance.running) + list(instance.waiting)
        if not active_requests:
            return
        cfg = self.config.risk_check
        active_views = []
        for request in active_requests:
            eligible = (
                request.landed_iteration is None
                or instance.iterations - request.landed_iteration >= cfg.tau_iterations
            )
            active_views.append(
                ActiveRequestView(
                    request_id=request.spec.id,
                    arrival_ms=request.spec.arrival_ms,
                    deadline_ms=request.spec.deadline_ms,
                    input_length=request.spec.input_length,
                    context_tokens=request.context_tokens,
                    generated=request.generated,
                    queued=request.status == WAITING,
                    window_text=request.spec.prompt_text,
                    migrations_so_far=request.migrations,
                    migration_eligible=eligible,
                    final_context_tokens=request.final_context_tokens,
                    source_hit_tokens=instance.prefix_cache.match_tokens(
                        request.prompt_tokens
                    ),
                )
            )
        source_view = self._view(instance, None, now_ms)
        views = [self._view(inst, None, now_ms) for inst in self.instances]
        by_id = {r.spec.id: r for r in active_requests}

        def dest_hit(request_view: ActiveRequestView, view: InstanceView) -> int:
            request = by_id[request_view.request_id]
            return self.instances[view.index].prefix_cache.match_tokens(
                request.prompt_tokens
            )

        def dest_free(view: InstanceView) -> int:
            return self.instances[view.index].free_tokens

        predictor = (
            _TrueLengths(self._truths)
            if self.config.policy.kind == "oracle"
            else self.predictor
        )
        actions = check_risk(
            source=source_view,
            active=active_views,
            views=views,
            now_ms=now_ms,
            predictor=predictor,
            config=cfg,
            dest_hit_tokens=dest_hit,
            dest_free_tokens=dest_free,
            mode=self.config.migration_mode,
            link_bandwidth_bps=self.config.link_bandwidth_bps,
            model_profile=self.config.model_profile,
        )
        for action in actions:
            self._apply_migration(action, now_ms)

    def _apply_migration(self, action: MigrationAction, now_ms: float) -> None:
        request = self.requests[action.request_id]
        source = self.instances[action.source_index]
        destination = self.instances[action.destination_index]
        if request.host is not source or request.status not in (WAITING, RUNNING):
            return
        if request.final_context_tokens > destination.profile.token_budget:
            logger.warning(
                "migration of request %d aborted: destination %s budget too small",
                action.request_id,
                destination.name,
            )
            return
        if request.status == RUNNING:
            source.running.remove(request)
            source.reserved_tokens -= request.final_context_tokens
        else:
            source.waiting.remove(request)
            wait_ms = now_ms - request.enqueue_ms
            request.queue_ms += wait_ms
        request.status = TRANSIT
        request.host = None
        request.migrations += 1
        transfer_s = migration_cost(
            action, self.config.link_bandwidth_bps, self.config.model_profile
        )
        request.transfer_ms += transfer_s * MS_PER_S
        self.migration_rows.append(
            MigrationLogRow(
                request_id=action.request_id,
                time_ms=now_ms,
                source=source.name,
                destination=destination.name,
                mode=action.mode,
                tokens=action.tokens_to_transfer,
                cost_ms=action.estimated_total_cost_s * MS_PER_S,
            )
        )
        self._push(now_ms + transfer_s * MS_PER_S, MIGRATION_COMPLETE, action)

    def _handle_migration_complete(self, action: MigrationAction, now_ms: float) -> None:
        request = self.requests[action.request_id]
        destination = self.instances[action.destination_index]
        request.host = destination
        request.landed_iteration = destination.iterations
        request.instance_path.append(destination.name)
        request.enqueue_ms = now_ms
        profile = destination.profile
        if (
            action.mode == "kv_cache"
            and len(destination.running) < profile.max_batch
            and destination.reserved_tokens + request.final_context_tokens
            <= profile.token_budget
        ):
            # Cache state came along; the request resumes decoding directly.
            request.status = RUNNING
            destination.running.append(request)
            destination.reserved_tokens += request.final_context_tokens
            destination.prefix_cache.record(request.prompt_tokens, now_ms)
            self._schedule_wake(destination, now_ms)
            return
        request.status = WAITING
        if action.mode == "kv_cache":
            request.kv_carried = True
            destination.waiting.appendleft(request)
        else:
            destination.waiting.append(request)
        self._schedule_wake(destination, now_ms)

    # -- main loop ---------------------------------------------------------

    def run(self) -> SimResult:
        for spec in self.trace:
            request = RequestSim(spec)
            self.requests[spec.id] = request
            self._push(spec.arrival_ms, ARRIVAL, request)
        while self._events:
            now_ms, _, kind, payload = heapq.heappop(self._events)
            if kind == ARRIVAL:
                self._handle_arrival(payload, now_ms)
            elif kind == WAKE:
                self._handle_wake(self.instances[payload], now_ms)
            elif kind == RISK_CHECK:
                self._handle_risk_check(self.instances[payload], now_ms)
            else:
                self._handle_migration_complete(payload, now_ms)

        records = []
        for spec in self.trace:
            request = self.requests[spec.id]
            if request.status not in (DONE, REJECTED):
                raise ValidationError(
                    f"request {spec.id} ended in non-terminal state {request.status}"
                )
            records.append(
                RequestRecord(
                    request_id=spec.id,
                    arrival_ms=spec.arrival_ms,
                    deadline_ms=spec.deadline_ms,
                    completion_ms=request.completion_ms,
                    queue_ms=request.queue_ms,
                    prefill_ms=request.prefill_ms,
                    transfer_ms=request.transfer_ms,
                    migrations=request.migrations,
                    instance_path=tuple(request.instance_path),
                    rejected=request.status == REJECTED,
                    true_output_length=spec.true_output_length,
                    predicted_total=request.predicted_total,
                    token_times_ms=tuple(request.token_times),
                )
            )
        return SimResult(
            records=records,
            decisions=self.decisions,
            migrations=self.migration_rows,
            estimators=[inst.estimator for inst in self.instances],
            instance_names=[inst.name for inst in self.instances],
            decision_latencies_us=self.decision_latencies_us,
        )


class _TrueLengths:
    """Length provider for oracle-arm rechecks."""

    def __init__(self, truths: Mapping[int, int]):
        self._truths = truths

    def predict_total(self, request_id: int, window_text: str) -> float:
        return float(self._truths[request_id])

    def observe_completion(self, output_length: float) -> None:
        pass


def run(
    trace: Sequence[RequestSpec],
    instances: Sequence[GpuProfile],
    config: SimConfig,
    predictor=None,
) -> SimResult:
    """Simulate one scenario to completion; deterministic in (scenario, seed)."""
    return Engine(trace, instances, config, predictor).run()


@dataclass(frozen=True)
class BruteForceResult:
    assignment: tuple[int, ...]
    goodput_count: int
    total_latency_ms: float
    per_request_within: tuple[bool, ...]
    assignments_evaluated: int


def _assignment_policy(trace: Sequence[RequestSpec], assignment: Mapping[int, int]) -> RoutingPolicy:
    return RoutingPolicy(kind=FIXED_POLICY, fixed_assignment=dict(assignment))


def brute_force_optimal(
    trace: Sequence[RequestSpec],
    instances: Sequence[GpuProfile],
    config: SimConfig | None = None,
    memoize: bool = True,
    max_requests: int = 10,
    max_instances: int = 4,
    max_assignments: int = 2_000_000,
) -> BruteForceResult:
    """Exhaustive assignment search: the goodput upper bound for small cases.

    Every assignment of requests to instances is evaluated under fixed
    routing with migrations disabled and true lengths, and the one
    maximizing within-SLO count (ties: lower total latency, then
    enumeration order) is returned.  With migrations off, instances are
    independent, so per-(instance, subset) outcomes are shared across
    assignments; ``memoize=False`` forces one full simulation per
    assignment instead (same results, used for cross-validation).
    """
    n_requests = len(trace)
    n_instances = len(instances)
    if n_requests > max_requests:
        raise SizeLimitError(
            f"brute force supports at most {max_requests} requests, got {n_requests}"
        )
    if n_instances > max_instances:
        raise SizeLimitError(
            f"brute force supports at most {max_instances} instances, got {n_instances}"
        )
    total_assignments = n_instances**n_requests
    if total_assignments > max_assignments:
        raise SizeLimitError(
            f"{n_instances}^{n_requests} assignments exceed the cap {max_assignments}"
        )
    base = config or SimConfig()
    ordered = sorted(trace, key=lambda s: (s.arrival_ms, s.id))
    ids = [spec.id for spec in ordered]

    def quiet_config(policy: RoutingPolicy) -> SimConfig:
        return replace(
            base,
            policy=policy,
            migration_enabled=False,
            record_estimator_series=False,
            record_token_times=False,
        )

    def outcome_by_request(result: SimResult) -> dict[int, tuple[bool, float]]:
        out = {}
        for record in result.records:
            latency = record.latency_ms
            out[record.request_id] = (
                record.within_slo,
                latency if latency is not None else float("inf"),
            )
        return out

    subset_cache: dict[tuple[int, tuple[int, ...]], dict[int, tuple[bool, float]]] = {}

    def subset_outcome(instance_idx: int, subset: tuple[int, ...]) -> dict[int, tuple[bool, float]]:
        key = (instance_idx, subset)
        cached = subset_cache.get(key)
        if cached is not None:
            return cached
        sub_trace = [spec for spec in ordered if spec.id in set(subset)]
        policy = _assignment_policy(sub_trace, {rid: 0 for rid in subset})
        result = run(sub_trace, [instances[instance_idx]], quiet_config(policy))
        outcome = outcome_by_request(result)
        subset_cache[key] = outcome
        return outcome

    best: tuple[int, float, tuple[int, ...], tuple[bool, ...]] | None = None
    evaluated = 0
    for assignment in itertools.product(range(n_instances), repeat=n_requests):
        evaluated += 1
        if memoize:
            per_instance: dict[int, list[int]] = {}
            for rid, g in zip(ids, assignment):
                per_instance.setdefault(g, []).append(rid)
            outcomes: dict[int, tuple[bool, float]] = {}
            for g, members in per_instance.items():
                outcomes.update(subset_outcome(g, tuple(members)))
        else:
            policy = _assignment_policy(ordered, dict(zip(ids, assignment)))
            outcomes = outcome_by_request(run(ordered, instances, quiet_config(policy)))
        within_flags = tuple(outcomes[rid][0] for rid in ids)
        count = sum(within_flags)
        total_latency = sum(outcomes[rid][1] for rid in ids)
        candidate = (count, -total_latency, assignment, within_flags)
        if best is None or (candidate[0], candidate[1]) > (best[0], best[1]):
            best = candidate
    assert best is not None
    return BruteForceResult(
        assignment=best[2],
        goodput_count=best[0],
        total_latency_ms=-best[1],
        per_request_within=best[3],
        assignments_evaluated=evaluated,
    )
