"""Command-line entry point: simulation, predictor training, benches, oracles.

Exit codes: 0 success, 1 validation/config error, 2 runtime failure.
Every subcommand writes a run manifest next to its outputs; feeding that
manifest back as ``--config`` reproduces the reports byte-identically.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time

from . import __version__
from .errors import SloRouteError, ValidationError
from .estimator import write_estimator_csv
from .metrics import (
    bench_overhead,
    build_report,
    write_decision_csv,
    write_migration_csv,
    write_timeline_csv,
)
from .predictor import (
    MoePredictorArm,
    SingleMlpArm,
    TrainConfig,
    load_checkpoint,
    mae,
    normalized_mae,
    save_checkpoint,
    train_moe,
    train_single_mlp,
)
from .predictor.baselines import SingleMlpModel, single_mlp_predict_batch
from .predictor.moe import MoeModel, predict_total_batch
from .router import migration_mode_sweep
from .scenario import (
    build_sim_config,
    load_config_file,
    make_manifest,
    make_predictor,
    parse_predictor_flag,
    resolve_instances,
    resolve_raw_trace,
    resolve_trace,
    trace_config_from_dict,
)
from .simulator import brute_force_optimal, run
from .workload import generate_synthetic, save_trace

logger = logging.getLogger(__name__)

POLICY_CHOICES = (
    "goodserve",
    "oracle",
    "random",
    "round_robin",
    "least_request",
    "lowest_tpm",
    "prefix_affinity",
    "max_free_memory",
)


def _write_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _prepare_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _apply_overrides(scenario: dict, args) -> dict:
    scenario = json.loads(json.dumps(scenario))  # deep copy
    if getattr(args, "policy", None):
        scenario["policy"] = args.policy
    if getattr(args, "slo_scale", None) is not None:
        slo = scenario.get("slo")
        if slo is None:
            raise ValidationError("--slo-scale needs an 'slo' section in the scenario")
        slo["relaxation_factor"] = args.slo_scale
    if getattr(args, "predictor", None):
        spec = parse_predictor_flag(args.predictor)
        existing = scenario.get("predictor", {})
        if spec["kind"] == existing.get("kind"):
            existing.update(spec)
            scenario["predictor"] = existing
        else:
            # keep a checkpoint path around for the kinds that need one
            if "checkpoint" in existing and spec["kind"] in ("moe", "single-mlp"):
                spec.setdefault("checkpoint", existing["checkpoint"])
            scenario["predictor"] = spec
    if getattr(args, "no_migration", False):
        scenario.setdefault("migration", {})["enabled"] = False
    if getattr(args, "tau", None) is not None:
        scenario.setdefault("risk_check", {})["tau_iterations"] = args.tau
    return scenario


def _run_one_arm(scenario: dict, seed: int, base_dir: str, out_dir: str) -> dict:
    trace = resolve_trace(scenario, base_dir, seed)
    instances = resolve_instances(scenario)
    config = build_sim_config(scenario, seed)
    predictor = None
    if config.policy.kind == "goodserve":
        predictor = make_predictor(
            scenario.get("predictor", {"kind": "oracle"}), trace, seed, base_dir
        )
    result = run(trace, instances, config, predictor)
    report = build_report(result.records, result.decision_latencies_us, result.migrations)
    payload = report.to_dict()
    # wall-clock decision latencies are measurement noise, not simulated
    # state; keeping them out of summary.json makes replays byte-identical
    overhead = {"decision_latency": payload.pop("decision_latency")}
    _write_json(payload, os.path.join(out_dir, "summary.json"))
    _write_json(overhead, os.path.join(out_dir, "overhead.json"))
    write_timeline_csv(result.records, os.path.join(out_dir, "timeline.csv"))
    write_decision_csv(result.decisions, os.path.join(out_dir, "decisions.csv"))
    write_migration_csv(result.migrations, os.path.join(out_dir, "migrations.csv"))
    write_estimator_csv(result.estimators, os.path.join(out_dir, "estimator.csv"))
    return payload


def cmd_simulate(args) -> int:
    scenario = _apply_overrides(load_config_file(args.config), args)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else int(scenario.get("seed", 0))
    arms = args.arms.split(",") if args.arms else [scenario.get("policy", "goodserve")]
    for arm in arms:
        if arm not in POLICY_CHOICES:
            raise ValidationError(
                f"unknown policy {arm!r}; valid policies: {', '.join(POLICY_CHOICES)}"
            )
    summary = {}
    for arm in arms:
        arm_scenario = json.loads(json.dumps(scenario))
        arm_scenario["policy"] = arm
        arm_dir = _prepare_out(os.path.join(out, arm)) if len(arms) > 1 else out
        summary[arm] = _run_one_arm(arm_scenario, seed, base_dir, arm_dir)
        _write_json(
            make_manifest("simulate", seed, arm_scenario, __version__),
            os.path.join(arm_dir, "run_manifest.json"),
        )
        print(
            f"{arm}: goodput={summary[arm]['goodput_rps']:.4f} req/s, "
            f"violation_ratio={summary[arm]['violation_ratio']:.4f}"
        )
    if len(arms) > 1:
        _write_json(summary, os.path.join(out, "arms_summary.json"))
    return 0


def cmd_gen_trace(args) -> int:
    config = load_config_file(args.config)
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    spec = dict(config.get("synthetic", config))
    spec.setdefault("rng_seed", seed)
    trace = generate_synthetic(trace_config_from_dict(spec))
    path = os.path.join(out, "trace.jsonl")
    save_trace(trace, path)
    _write_json(
        make_manifest("gen-trace", seed, config, __version__),
        os.path.join(out, "run_manifest.json"),
    )
    print(f"wrote {len(trace)} requests to {path}")
    return 0


def _dataset_from_trace(trace) -> list[tuple[str, int]]:
    return [(spec.prompt_text, spec.true_output_length) for spec in trace]


def cmd_train_predictor(args) -> int:
    config = load_config_file(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    kind = config.get("kind", "moe")
    train_section = dict(config.get("train", {}))
    if args.experts is not None:
        train_section["expert_count"] = args.experts
    train_config = TrainConfig(
        epochs=int(train_section.get("epochs", 150)),
        learning_rate=float(train_section.get("learning_rate", 0.05)),
        batch_size=int(train_section.get("batch_size", 32)),
        rng_seed=seed,
        expert_count=int(train_section.get("expert_count", 9)),
        hidden_width=int(train_section.get("hidden_width", 128)),
        vocab_cap=int(train_section.get("vocab_cap", 4096)),
        window_length=int(train_section.get("window_length", 256)),
        huber_delta=float(train_section.get("huber_delta", 1.0)),
    )
    trace = resolve_raw_trace(config, base_dir, seed)
    dataset = _dataset_from_trace(trace)
    started = time.perf_counter()
    if kind == "moe":
        model = train_moe(dataset, train_config)
    elif kind == "single-mlp":
        model = train_single_mlp(dataset, train_config)
    else:
        raise ValidationError(f"cannot train predictor kind {kind!r}")
    elapsed = time.perf_counter() - started
    checkpoint = os.path.join(out, "predictor.npz")
    save_checkpoint(model, checkpoint)
    _write_json(
        make_manifest("train-predictor", seed, config, __version__),
        os.path.join(out, "run_manifest.json"),
    )
    _write_json(
        {
            "kind": kind,
            "samples": len(dataset),
            "train_seconds": elapsed,
            "checkpoint": checkpoint,
        },
        os.path.join(out, "train_summary.json"),
    )
    print(f"trained {kind} predictor on {len(dataset)} samples in {elapsed:.1f}s")
    return 0


def cmd_eval_predictor(args) -> int:
    config = load_config_file(args.config)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    checkpoint = config.get("checkpoint")
    if not checkpoint:
        raise ValidationError("eval-predictor config needs a 'checkpoint' path")
    if not os.path.isabs(checkpoint):
        checkpoint = os.path.join(base_dir, checkpoint)
    model = load_checkpoint(checkpoint)
    trace = resolve_raw_trace(config, base_dir, seed)
    prompts = [spec.prompt_text for spec in trace]
    truths = [spec.true_output_length for spec in trace]
    started = time.perf_counter()
    if isinstance(model, MoeModel):
        predictions = predict_total_batch(model, prompts)
    elif isinstance(model, SingleMlpModel):
        predictions = single_mlp_predict_batch(model, prompts)
    else:
        raise ValidationError("unsupported checkpoint contents")
    per_request_ms = (time.perf_counter() - started) * 1000.0 / max(len(prompts), 1)
    payload = {
        "samples": len(prompts),
        "mae": mae(predictions, truths),
        "normalized_mae": normalized_mae(predictions, truths),
        "batched_prediction_ms_per_request": per_request_ms,
    }
    _write_json(payload, os.path.join(out, "eval_summary.json"))
    _write_json(
        make_manifest("eval-predictor", seed, config, __version__),
        os.path.join(out, "run_manifest.json"),
    )
    print(
        f"MAE={payload['mae']:.2f} normalized={payload['normalized_mae']:.4f} "
        f"({per_request_ms:.3f} ms/request batched)"
    )
    return 0


def cmd_bench_overhead(args) -> int:
    config = load_config_file(args.config) if args.config else {}
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    sizes = config.get("instance_counts", [8, 32, 128, 512])
    rps = float(config.get("rps", 10000))
    duration = float(config.get("duration_s", 0.2))
    checkpoint = config.get("checkpoint")
    if checkpoint:
        model = load_checkpoint(checkpoint)
        if not isinstance(model, MoeModel):
            raise ValidationError("bench-overhead needs an ensemble checkpoint")
    else:
        from .predictor.testing import build_random_moe

        model = build_random_moe(seed=seed)
    results = {}
    for m in sizes:
        bench = bench_overhead(int(m), rps, duration, model, seed=seed)
        results[str(m)] = bench.to_dict()
        print(
            f"M={m}: mean={bench.latency.mean_us / 1000:.3f} ms "
            f"p95={bench.latency.p95_us / 1000:.3f} ms over {bench.decisions} decisions"
        )
    sweep = migration_mode_sweep(
        context_lengths=config.get("sweep_contexts", [4096, 8192, 16384]),
        prefill_ms_per_token=float(config.get("sweep_prefill_ms_per_token", 0.010)),
        model_profile=build_sim_config({"policy": "goodserve"}, seed).model_profile,
        link_bandwidth_bps=float(config.get("link_bandwidth_bps", 1e10)),
    )
    _write_json({"bench": results, "migration_sweep": sweep},
                os.path.join(out, "bench.json"))
    _write_json(
        make_manifest("bench-overhead", seed, config, __version__),
        os.path.join(out, "run_manifest.json"),
    )
    return 0


def cmd_brute_force(args) -> int:
    scenario = _apply_overrides(load_config_file(args.config), args)
    base_dir = os.path.dirname(os.path.abspath(args.config))
    out = _prepare_out(args.out)
    seed = args.seed if args.seed is not None else int(scenario.get("seed", 0))
    trace = resolve_trace(scenario, base_dir, seed)
    instances = resolve_instances(scenario)
    config = build_sim_config(scenario, seed)
    optimum = brute_force_optimal(trace, instances, config)
    payload = {
        "assignment": {
            str(spec.id): instances[g].name
            for spec, g in zip(sorted(trace, key=lambda s: (s.arrival_ms, s.id)),
                               optimum.assignment)
        },
        "goodput_count": optimum.goodput_count,
        "total_latency_ms": optimum.total_latency_ms,
        "assignments_evaluated": optimum.assignments_evaluated,
    }
    if scenario.get("compare_heuristic", True):
        heuristic_scenario = json.loads(json.dumps(scenario))
        heuristic_scenario["policy"] = "goodserve"
        heuristic_scenario["predictor"] = {"kind": "oracle"}
        heuristic_scenario.setdefault("migration", {})["enabled"] = False
        h_config = build_sim_config(heuristic_scenario, seed)
        h_config = dataclasses.replace(h_config, migration_enabled=False)
        predictor = make_predictor({"kind": "oracle"}, trace, seed, base_dir)
        result = run(trace, instances, h_config, predictor)
        heuristic_within = sum(1 for r in result.records if r.within_slo)
        payload["heuristic_goodput_count"] = heuristic_within
        payload["optimality_ratio"] = (
            heuristic_within / optimum.goodput_count if optimum.goodput_count else 1.0
        )
    _write_json(payload, os.path.join(out, "brute_force.json"))
    _write_json(
        make_manifest("brute-force", seed, scenario, __version__),
        os.path.join(out, "run_manifest.json"),
    )
    print(
        f"optimum goodput {optimum.goodput_count}/{len(trace)} over "
        f"{optimum.assignments_evaluated} assignments"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sloroute",
        description="SLO-goodput routing engine with a deterministic cluster simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario/config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    p_sim = sub.add_parser("simulate", help="run one scenario (or several policy arms)")
    common(p_sim)
    p_sim.add_argument("--policy", choices=POLICY_CHOICES, default=None)
    p_sim.add_argument("--arms", default=None, help="comma-separated policy list")
    p_sim.add_argument("--slo-scale", type=float, default=None, dest="slo_scale")
    p_sim.add_argument("--predictor", default=None,
                       help="moe | single-mlp | history | oracle | noisy:<sigma>")
    p_sim.add_argument("--no-migration", action="store_true", dest="no_migration")
    p_sim.add_argument("--tau", type=int, default=None, help="risk-check interval")
    p_sim.set_defaults(func=cmd_simulate)

    p_gen = sub.add_parser("gen-trace", help="generate a synthetic trace file")
    common(p_gen)
    p_gen.set_defaults(func=cmd_gen_trace)

    p_train = sub.add_parser("train-predictor", help="train an output-length predictor")
    common(p_train)
    p_train.add_argument("--experts", type=int, default=None, help="expert count K")
    p_train.set_defaults(func=cmd_train_predictor)

    p_eval = sub.add_parser("eval-predictor", help="evaluate a predictor checkpoint")
    common(p_eval)
    p_eval.set_defaults(func=cmd_eval_predictor)

    p_bench = sub.add_parser("bench-overhead", help="measure routing decision latency")
    p_bench.add_argument("--config", required=False, default=None)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench_overhead)

    p_bf = sub.add_parser("brute-force", help="exhaustive optimal assignment search")
    common(p_bf)
    p_bf.add_argument("--policy", choices=POLICY_CHOICES, default=None)
    p_bf.set_defaults(func=cmd_brute_force)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help/--version
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except SloRouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
