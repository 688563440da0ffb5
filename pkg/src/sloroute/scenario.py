"""Scenario config files: JSON schema, resolution, and run manifests.

One file declares everything a simulation needs — instances, model profile,
policy arm, predictor, risk-check knobs, trace source, seed — so experiment
arms stay diffable and any emitted run manifest reproduces its run.
"""

from __future__ import annotations

import dataclasses
import json
import os
from typing import Sequence

from .errors import ConfigError
from .estimator import EmaConfig
from .predictor import (
    HistoryPredictor,
    MoePredictorArm,
    NoisyOracleLengths,
    OracleLengths,
    SingleMlpArm,
    load_checkpoint,
)
from .predictor.baselines import SingleMlpModel
from .predictor.moe import MoeModel
from .profiles import BUILTIN_PROFILES, GpuProfile, ModelProfile
from .router import POLICY_KINDS, RiskCheckConfig, RoutingPolicy
from .simulator import SimConfig
from .workload import (
    ArrivalProcess,
    ClusterSpec,
    RequestSpec,
    SloPolicy,
    TraceConfig,
    assign_slos,
    generate_synthetic,
    load_trace,
    with_fixed_deadline,
)

ARTIFACT_NAME = "sloroute"

PREDICTOR_KINDS = ("moe", "single-mlp", "history", "oracle", "noisy")


def load_config_file(path: str) -> dict:
    """Read a scenario config or a run manifest (which embeds one)."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if data.get("artifact") == ARTIFACT_NAME and "config" in data:
        inner = data["config"]
        if "seed" not in inner and "seed" in data:
            inner["seed"] = data["seed"]
        return inner
    return data


def _vocabulary_from_spec(spec) -> tuple[str, ...]:
    if isinstance(spec, dict):
        prefix = spec.get("prefix", "tok")
        size = int(spec.get("size", 0))
        if size < 1:
            raise ConfigError("vocabulary spec needs size >= 1")
        return tuple(f"{prefix}{i:03d}" for i in range(size))
    return tuple(str(token) for token in spec)


def trace_config_from_dict(data: dict) -> TraceConfig:
    arrival_data = data.get("arrival", {})
    kind = arrival_data.get("kind", "poisson")
    if kind == "poisson":
        arrival = ArrivalProcess.poisson(float(arrival_data["rate_rps"]))
    elif kind == "fixed":
        arrival = ArrivalProcess.fixed(float(arrival_data["interval_ms"]))
    elif kind == "explicit":
        arrival = ArrivalProcess.explicit([float(t) for t in arrival_data["times_ms"]])
    else:
        raise ConfigError(f"unknown arrival kind {kind!r}")
    clusters = []
    for cluster in data.get("clusters", []):
        clusters.append(
            ClusterSpec(
                task_type=str(cluster.get("task_type", f"c{len(clusters)}")),
                input_range=tuple(int(x) for x in cluster["input_range"]),
                output_range=tuple(int(x) for x in cluster["output_range"]),
                vocabulary=_vocabulary_from_spec(cluster["vocabulary"]),
            )
        )
    return TraceConfig(
        request_count=int(data["request_count"]),
        arrival=arrival,
        clusters=tuple(clusters),
        rng_seed=int(data.get("rng_seed", 0)),
        disjoint_vocabularies=bool(data.get("disjoint_vocabularies", True)),
    )


def profile_from_dict(data: dict) -> GpuProfile:
    try:
        return GpuProfile(
            name=str(data["name"]),
            base_ms=float(data["base_ms"]),
            slope_ms=float(data["slope_ms"]),
            prefill_ms_per_token=float(data["prefill_ms_per_token"]),
            token_budget=int(data["token_budget"]),
            max_batch=int(data["max_batch"]),
        )
    except KeyError as exc:
        raise ConfigError(f"profile is missing field {exc.args[0]!r}")


def resolve_instances(scenario: dict) -> list[GpuProfile]:
    custom = {
        name: profile_from_dict({"name": name, **body})
        for name, body in scenario.get("profiles", {}).items()
    }
    catalog = {**BUILTIN_PROFILES, **custom}
    entries = scenario.get("instances")
    if not entries:
        raise ConfigError("scenario must list at least one instance")
    instances: list[GpuProfile] = []
    for entry in entries:
        if isinstance(entry, str):
            if entry not in catalog:
                raise ConfigError(f"unknown instance profile {entry!r}")
            instances.append(catalog[entry])
        elif isinstance(entry, dict) and "profile" in entry:
            base_name = entry["profile"]
            if base_name not in catalog:
                raise ConfigError(f"unknown instance profile {base_name!r}")
            base = catalog[base_name]
            name = entry.get("name", base_name)
            instances.append(dataclasses.replace(base, name=name))
        elif isinstance(entry, dict):
            instances.append(profile_from_dict(entry))
        else:
            raise ConfigError(f"bad instance entry: {entry!r}")
    names = [p.name for p in instances]
    if len(set(names)) != len(names):
        raise ConfigError(
            "duplicate instance names; give repeated profiles explicit names"
        )
    return instances


def resolve_raw_trace(scenario: dict, base_dir: str, seed: int) -> list[RequestSpec]:
    """Load or generate the trace without touching deadlines."""
    source = scenario.get("trace")
    if source is None:
        raise ConfigError("scenario needs a 'trace' entry (path or synthetic spec)")
    if isinstance(source, str):
        path = source if os.path.isabs(source) else os.path.join(base_dir, source)
        return load_trace(path)
    if isinstance(source, dict) and "synthetic" in source:
        spec = dict(source["synthetic"])
        spec.setdefault("rng_seed", seed)
        return generate_synthetic(trace_config_from_dict(spec))
    raise ConfigError("'trace' must be a file path or {'synthetic': {...}}")


def resolve_trace(scenario: dict, base_dir: str, seed: int) -> list[RequestSpec]:
    trace = resolve_raw_trace(scenario, base_dir, seed)
    instances = resolve_instances(scenario)
    profiles = {p.name: p for p in instances}
    slo = scenario.get("slo")
    fixed = scenario.get("fixed_deadline_ms")
    if slo is not None and fixed is not None:
        raise ConfigError("give either 'slo' or 'fixed_deadline_ms', not both")
    if slo is not None:
        policy = SloPolicy(
            reference_profile=str(slo["reference_profile"]),
            relaxation_factor=float(slo["relaxation_factor"]),
        )
        catalog = {**BUILTIN_PROFILES, **profiles}
        trace = assign_slos(trace, policy, catalog)
    elif fixed is not None:
        trace = with_fixed_deadline(trace, float(fixed))
    missing = [spec.id for spec in trace if spec.deadline_ms is None]
    if missing:
        raise ConfigError(
            f"{len(missing)} requests have no deadline; add 'slo' or 'fixed_deadline_ms'"
        )
    return trace


def build_sim_config(scenario: dict, seed: int) -> SimConfig:
    policy_name = scenario.get("policy", "goodserve")
    if policy_name not in POLICY_KINDS:
        raise ConfigError(
            f"unknown policy {policy_name!r}; valid policies: {', '.join(POLICY_KINDS)}"
        )
    risk = scenario.get("risk_check", {})
    migration = scenario.get("migration", {})
    cache = scenario.get("prefix_cache", {})
    model = scenario.get("model_profile", {})
    return SimConfig(
        rng_seed=seed,
        link_bandwidth_bps=float(scenario.get("link_bandwidth_bps", 1e10)),
        model_profile=ModelProfile(
            kv_bytes_per_token=int(model.get("kv_bytes_per_token", 131072)),
            id_bytes=int(model.get("id_bytes", 4)),
        ),
        risk_check=RiskCheckConfig(
            tau_iterations=int(risk.get("tau_iterations", 50)),
            max_migrations_per_request=int(risk.get("max_migrations_per_request", 2)),
            per_check_budget=int(risk.get("per_check_budget", 1)),
        ),
        policy=RoutingPolicy(kind=policy_name, rng_seed=seed),
        ema=EmaConfig(alpha=float(scenario.get("ema_alpha", 0.3))),
        prefix_block_size=int(cache.get("block_size", 16)),
        prefix_capacity_tokens=int(cache.get("capacity_tokens", 65536)),
        migration_enabled=bool(migration.get("enabled", True)),
        migration_mode=str(migration.get("mode", "token_ids")),
    )


def parse_predictor_flag(flag: str) -> dict:
    """CLI shorthand: moe | single-mlp | history | oracle | noisy:<sigma>."""
    if flag.startswith("noisy:"):
        try:
            sigma = float(flag.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad noisy predictor spec {flag!r}; use noisy:<sigma>")
        return {"kind": "noisy", "sigma": sigma}
    if flag not in PREDICTOR_KINDS:
        raise ConfigError(
            f"unknown predictor {flag!r}; valid: "
            + ", ".join(list(PREDICTOR_KINDS[:-1]) + ["noisy:<sigma>"])
        )
    if flag == "noisy":
        return {"kind": "noisy", "sigma": 0.3}
    return {"kind": flag}


def make_predictor(spec: dict, trace: Sequence[RequestSpec], seed: int, base_dir: str = "."):
    """Instantiate the predictor arm a scenario asks for."""
    kind = spec.get("kind", "oracle")
    truths = {request.id: request.true_output_length for request in trace}
    if kind == "oracle":
        return OracleLengths(truths)
    if kind == "noisy":
        return NoisyOracleLengths(
            truths,
            sigma=float(spec.get("sigma", 0.3)),
            seed=int(spec.get("noise_seed", seed)),
            latency_ms=float(spec.get("latency_ms", 0.0)),
        )
    if kind == "history":
        return HistoryPredictor(
            window=int(spec.get("history_window", 256)),
            prior=float(spec.get("prior", 256.0)),
        )
    if kind in ("moe", "single-mlp"):
        path = spec.get("checkpoint")
        if not path:
            raise ConfigError(f"predictor kind {kind!r} needs a 'checkpoint' path")
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        model = load_checkpoint(path)
        if kind == "moe":
            if not isinstance(model, MoeModel):
                raise ConfigError(f"checkpoint {path} is not an ensemble model")
            return MoePredictorArm(model)
        if not isinstance(model, SingleMlpModel):
            raise ConfigError(f"checkpoint {path} is not a single-MLP model")
        return SingleMlpArm(model)
    raise ConfigError(f"unknown predictor kind {kind!r}")


def make_manifest(command: str, seed: int, scenario: dict, version: str) -> dict:
    return {
        "artifact": ARTIFACT_NAME,
        "version": version,
        "command": command,
        "seed": seed,
        "config": scenario,
    }
