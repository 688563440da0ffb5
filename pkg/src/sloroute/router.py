"""Routing core: per-instance latency estimates, instance selection, rectification.

The estimated end-to-end latency of a request on an instance is

    T = q + p * (input_length - hit_prefix) + d * predicted_output

with q/p/d in seconds.  Selection follows the just-enough rule: among
deadline-feasible instances pick the one with the largest per-token decode
latency, reserving fast instances for urgent requests; with no feasible
instance, fall back to the smallest deadline overshoot (best effort, never
drop).  A periodic risk recheck migrates at-risk requests to stronger
instances by shipping token ids and re-prefilling at the destination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .profiles import ModelProfile

MS_PER_S = 1000.0

POLICY_KINDS = (
    "goodserve",
    "oracle",
    "random",
    "round_robin",
    "least_request",
    "lowest_tpm",
    "prefix_affinity",
    "max_free_memory",
)

# internal arm used by the exhaustive-search oracle; not user selectable
FIXED_POLICY = "fixed"

MIGRATION_MODES = ("token_ids", "kv_cache")


@dataclass(frozen=True)
class RoutingPolicy:
    kind: str
    tpm_window_s: float = 60.0
    affinity_load_weight: float = 0.5
    rng_seed: int = 0
    fixed_assignment: dict[int, int] | None = None

    def __post_init__(self) -> None:
        if self.kind not in POLICY_KINDS + (FIXED_POLICY,):
            raise ValidationError(
                f"unknown policy {self.kind!r}; valid: {', '.join(POLICY_KINDS)}"
            )
        if self.kind == FIXED_POLICY and self.fixed_assignment is None:
            raise ValidationError("fixed policy needs an assignment map")


class PolicyState:
    """Mutable per-run policy bookkeeping (round-robin counter, RNG)."""

    def __init__(self, policy: RoutingPolicy):
        self.policy = policy
        self.round_robin = 0
        self.rng = np.random.default_rng([policy.rng_seed, 0x5E1EC7])


@dataclass(frozen=True)
class InstanceView:
    """Snapshot of one instance as seen by a routing decision."""

    index: int
    name: str
    q_s: float
    p_s_per_token: float
    d_s_per_token: float
    pending: int
    running: int
    max_batch: int
    free_token_budget: int
    tpm_tokens: float
    hit_prefix_tokens: int


@dataclass
class RoutingDecision:
    request_id: int
    instance_index: int
    instance_name: str
    estimates_s: dict[str, float]
    feasible: bool
    decision_latency_us: float = 0.0


@dataclass(frozen=True)
class RiskCheckConfig:
    """Cadence and budgets of the periodic SLO-risk recheck."""

    tau_iterations: int = 50
    max_migrations_per_request: int = 2
    per_check_budget: int = 1

    def __post_init__(self) -> None:
        if self.tau_iterations < 1:
            raise ValidationError("tau_iterations must be >= 1")
        if self.max_migrations_per_request < 0 or self.per_check_budget < 0:
            raise ValidationError("migration budgets must be >= 0")


@dataclass
class MigrationAction:
    request_id: int
    source_index: int
    destination_index: int
    mode: str
    tokens_to_transfer: int
    transfer_s: float
    estimated_dest_prefill_s: float

    def __post_init__(self) -> None:
        if self.source_index == self.destination_index:
            raise ValidationError("migration source and destination must differ")
        if self.mode not in MIGRATION_MODES:
            raise ValidationError(f"unknown migration mode {self.mode!r}")

    @property
    def estimated_total_cost_s(self) -> float:
        return self.transfer_s + self.estimated_dest_prefill_s


def estimate_latency(
    q_s: float,
    p_s_per_token: float,
    d_s_per_token: float,
    input_length: int,
    hit_prefix_tokens: int,
    predicted_output: float,
) -> float:
    """Estimated end-to-end seconds on an instance; a full cache hit zeroes prefill."""
    if not (0 <= hit_prefix_tokens <= input_length):
        raise ValidationError("hit prefix must lie in [0, input_length]")
    return (
        q_s
        + p_s_per_token * (input_length - hit_prefix_tokens)
        + d_s_per_token * predicted_output
    )


def latency_for_view(view: InstanceView, input_length: int, predicted_output: float) -> float:
    return estimate_latency(
        view.q_s,
        view.p_s_per_token,
        view.d_s_per_token,
        input_length,
        view.hit_prefix_tokens,
        predicted_output,
    )


def _pick_min(views: Sequence[InstanceView], key) -> InstanceView:
    """Deterministic argmin; equal keys resolve to the lowest instance index."""
    best = None
    best_key = None
    for view in views:
        k = key(view)
        if best_key is None or k < best_key:
            best, best_key = view, k
    return best


def select_instance(
    request_id: int,
    input_length: int,
    deadline_s: float,
    predicted_output: float,
    views: Sequence[InstanceView],
    policy: RoutingPolicy,
    state: PolicyState,
) -> RoutingDecision:
    """One O(M) pass: estimate T per instance, then apply the policy rule.

    Ties everywhere break deterministically: fewer pending requests first,
    then lower instance index, so identical runs replay identically.
    """
    if not views:
        raise ValidationError("no instances registered")
    estimates = {
        view.name: latency_for_view(view, input_length, predicted_output)
        for view in views
    }
    feasible = [view for view in views if estimates[view.name] <= deadline_s]

    kind = policy.kind
    if kind in ("goodserve", "oracle"):
        if feasible:
            chosen = _pick_min(
                feasible, lambda v: (-v.d_s_per_token, v.pending, v.index)
            )
        else:
            chosen = _pick_min(
                views,
                lambda v: (estimates[v.name] - deadline_s, v.pending, v.index),
            )
    elif kind == "random":
        chosen = views[int(state.rng.integers(len(views)))]
    elif kind == "round_robin":
        chosen = views[state.round_robin % len(views)]
        state.round_robin += 1
    elif kind == "least_request":
        chosen = _pick_min(views, lambda v: (v.pending, v.index))
    elif kind == "lowest_tpm":
        chosen = _pick_min(views, lambda v: (v.tpm_tokens, v.index))
    elif kind == "prefix_affinity":
        weight = policy.affinity_load_weight

        def affinity_score(v: InstanceView) -> float:
            hit_share = v.hit_prefix_tokens / input_length if input_length else 0.0
            return hit_share - weight * v.pending / max(v.max_batch, 1)

        chosen = _pick_min(views, lambda v: (-affinity_score(v), v.index))
    elif kind == "max_free_memory":
        chosen = _pick_min(views, lambda v: (-v.free_token_budget, v.index))
    elif kind == FIXED_POLICY:
        target = policy.fixed_assignment.get(request_id)
        if target is None:
            raise ValidationError(f"fixed policy has no assignment for request {request_id}")
        chosen = next(view for view in views if view.index == target)
    else:  # pragma: no cover - guarded by RoutingPolicy validation
        raise ValidationError(f"unknown policy {kind!r}")

    return RoutingDecision(
        request_id=request_id,
        instance_index=chosen.index,
        instance_name=chosen.name,
        estimates_s=estimates,
        feasible=bool(feasible),
    )


def migration_cost(
    action: MigrationAction, link_bandwidth_bps: float, model_profile: ModelProfile
) -> float:
    """Wire-transfer seconds for a migration action.

    Token-id mode ships 4-byte-ish ids and pays a destination re-prefill
    (charged by the simulator at destination rates); kv mode ships the full
    per-token cache tensors and skips re-prefill.
    """
    if link_bandwidth_bps <= 0:
        raise ValidationError("link bandwidth must be > 0")
    per_token_bytes = (
        model_profile.id_bytes
        if action.mode == "token_ids"
        else model_profile.kv_bytes_per_token
    )
    return action.tokens_to_transfer * per_token_bytes * 8.0 / link_bandwidth_bps


def transfer_seconds(
    tokens: int, mode: str, link_bandwidth_bps: float, model_profile: ModelProfile
) -> float:
    if mode not in MIGRATION_MODES:
        raise ValidationError(f"unknown migration mode {mode!r}")
    per_token_bytes = (
        model_profile.id_bytes if mode == "token_ids" else model_profile.kv_bytes_per_token
    )
    return tokens * per_token_bytes * 8.0 / link_bandwidth_bps


def migration_mode_sweep(
    context_lengths: Sequence[int],
    prefill_ms_per_token: float,
    model_profile: ModelProfile,
    link_bandwidth_bps: float,
) -> list[dict[str, float]]:
    """Total migration cost of both modes across context lengths, plus ratios.

    Token-id total = id transfer + cold destination re-prefill; kv total =
    cache transfer only.  Used to document the kv/token-id cost ratio band
    of the shipped default profiles.
    """
    rows = []
    for context in context_lengths:
        token_id_total = (
            transfer_seconds(context, "token_ids", link_bandwidth_bps, model_profile)
            + context * prefill_ms_per_token / MS_PER_S
        )
        kv_total = transfer_seconds(context, "kv_cache", link_bandwidth_bps, model_profile)
        rows.append(
            {
                "context_tokens": float(context),
                "token_id_total_s": token_id_total,
                "kv_total_s": kv_total,
                "kv_over_token_id": kv_total / token_id_total,
            }
        )
    return rows


@dataclass(frozen=True)
class ActiveRequestView:
    """One in-flight request on the instance under risk check."""

    request_id: int
    arrival_ms: float
    deadline_ms: float
    input_length: int
    context_tokens: int
    generated: int
    queued: bool
    window_text: str
    migrations_so_far: int
    migration_eligible: bool
    final_context_tokens: int
    source_hit_tokens: int = 0


def check_risk(
    source: InstanceView,
    active: Sequence[ActiveRequestView],
    views: Sequence[InstanceView],
    now_ms: float,
    predictor,
    config: RiskCheckConfig,
    dest_hit_tokens: Callable[[ActiveRequestView, InstanceView], int],
    dest_free_tokens: Callable[[InstanceView], int],
    mode: str,
    link_bandwidth_bps: float,
    model_profile: ModelProfile,
) -> list[MigrationAction]:
    """Find at-risk requests on one instance and pick rescuing destinations.

    A request is at risk when its projected finish under the source's
    current rates overshoots the deadline.  Rescue destinations must be
    strictly stronger (smaller d), absorb transfer + re-prefill + remaining
    decode within the deadline, and are chosen just-enough (largest d among
    qualifiers).  Budgets and hysteresis are enforced here; capacity is
    re-validated by the simulator when the move lands.
    """
    at_risk: list[tuple[float, ActiveRequestView, int]] = []
    for request in active:
        if not request.migration_eligible:
            continue
        if request.migrations_so_far >= config.max_migrations_per_request:
            continue
        predicted_total = predictor.predict_total(request.request_id, request.window_text)
        remaining = max(int(round(predicted_total)) - request.generated, 1)
        remaining_s = source.d_s_per_token * remaining
        if request.queued:
            uncached = max(request.context_tokens - request.source_hit_tokens, 0)
            remaining_s += source.p_s_per_token * uncached
        slack_ms = (request.arrival_ms + request.deadline_ms) - (
            now_ms + remaining_s * MS_PER_S
        )
        if slack_ms < 0.0:
            at_risk.append((slack_ms, request, remaining))

    at_risk.sort(key=lambda item: (item[0], item[1].request_id))
    actions: list[MigrationAction] = []
    for _, request, remaining in at_risk:
        if len(actions) >= config.per_check_budget:
            break
        transfer = transfer_seconds(
            request.context_tokens, mode, link_bandwidth_bps, model_profile
        )
        qualifying = []
        for view in views:
            if view.index == source.index:
                continue
            if view.d_s_per_token >= source.d_s_per_token:
                continue
            if dest_free_tokens(view) < request.final_context_tokens:
                continue
            hit = dest_hit_tokens(request, view)
            prefill_s = (
                view.p_s_per_token * max(request.context_tokens - hit, 0)
                if mode == "token_ids"
                else 0.0
            )
            finish_ms = now_ms + (
                transfer + view.q_s + prefill_s + view.d_s_per_token * remaining
            ) * MS_PER_S
            if finish_ms <= request.arrival_ms + request.deadline_ms:
                qualifying.append((view, prefill_s))
        if not qualifying:
            continue
        best, best_prefill = None, 0.0
        best_key = None
        for view, prefill_s in qualifying:
            key = (-view.d_s_per_token, view.pending, view.index)
            if best_key is None or key < best_key:
                best, best_prefill, best_key = view, prefill_s, key
        actions.append(
            MigrationAction(
                request_id=request.request_id,
                source_index=source.index,
                destination_index=best.index,
                mode=mode,
                tokens_to_transfer=request.context_tokens,
                transfer_s=transfer,
                estimated_dest_prefill_s=best_prefill,
            )
        )
    return actions
