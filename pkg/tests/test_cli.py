import json
import os

import pytest

from sloroute.cli import main
from sloroute.predictor import TrainConfig, save_checkpoint, train_moe


def write_json(path, payload):
    with open(path, "w") as handle:
        json.dump(payload, handle)
    return str(path)


GEN_CONFIG = {
    "seed": 3,
    "synthetic": {
        "request_count": 40,
        "arrival": {"kind": "poisson", "rate_rps": 10.0},
        "clusters": [
            {
                "task_type": "t0",
                "input_range": [20, 40],
                "output_range": [30, 90],
                "vocabulary": {"prefix": "tok", "size": 30},
            }
        ],
    },
}


def scenario_config(trace_rel="trace.jsonl", **extra):
    payload = {
        "seed": 5,
        "trace": trace_rel,
        "fixed_deadline_ms": 6000.0,
        "instances": ["h800", "a40"],
        "policy": "goodserve",
        "predictor": {"kind": "oracle"},
    }
    payload.update(extra)
    return payload


@pytest.fixture()
def trace_dir(tmp_path):
    out = tmp_path / "gen"
    assert main(["gen-trace", "--config",
                 write_json(tmp_path / "gen.json", GEN_CONFIG),
                 "--out", str(out)]) == 0
    return out


class TestGenTrace:
    def test_writes_trace_and_manifest(self, trace_dir):
        assert (trace_dir / "trace.jsonl").exists()
        assert (trace_dir / "run_manifest.json").exists()
        lines = (trace_dir / "trace.jsonl").read_text().strip().splitlines()
        assert len(lines) == 40


class TestSimulate:
    def test_happy_path(self, tmp_path, trace_dir):
        config = scenario_config(trace_rel=str(trace_dir / "trace.jsonl"))
        out = tmp_path / "run"
        code = main([
            "simulate", "--config", write_json(tmp_path / "s.json", config),
            "--out", str(out),
        ])
        assert code == 0
        for name in ("summary.json", "timeline.csv", "decisions.csv",
                     "migrations.csv", "estimator.csv", "run_manifest.json"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["total_requests"] == 40

    def test_invalid_policy_exits_one(self, tmp_path, trace_dir, capsys):
        config = scenario_config(trace_rel=str(trace_dir / "trace.jsonl"))
        code = main([
            "simulate", "--config", write_json(tmp_path / "s.json", config),
            "--out", str(tmp_path / "x"), "--policy", "nonsense",
        ])
        assert code == 1
        err = capsys.readouterr().err
        assert "goodserve" in err and "round_robin" in err

    def test_unknown_flag_exits_one(self, tmp_path):
        assert main(["simulate", "--bogus"]) == 1

    def test_manifest_reproduces_reports_byte_identically(self, tmp_path, trace_dir):
        config = scenario_config(trace_rel=str(trace_dir / "trace.jsonl"))
        first = tmp_path / "first"
        again = tmp_path / "again"
        assert main(["simulate", "--config",
                     write_json(tmp_path / "s.json", config),
                     "--out", str(first)]) == 0
        assert main(["simulate", "--config", str(first / "run_manifest.json"),
                     "--out", str(again)]) == 0
        for name in ("summary.json", "timeline.csv", "migrations.csv"):
            assert (first / name).read_bytes() == (again / name).read_bytes()

    def test_arms_run_against_identical_trace(self, tmp_path, trace_dir):
        config = scenario_config(trace_rel=str(trace_dir / "trace.jsonl"))
        out = tmp_path / "arms"
        code = main([
            "simulate", "--config", write_json(tmp_path / "s.json", config),
            "--out", str(out), "--arms", "goodserve,round_robin",
        ])
        assert code == 0
        assert (out / "goodserve" / "summary.json").exists()
        assert (out / "round_robin" / "summary.json").exists()
        assert (out / "arms_summary.json").exists()

    def test_slo_scale_override(self, tmp_path, trace_dir):
        config = scenario_config(trace_rel=str(trace_dir / "trace.jsonl"))
        del config["fixed_deadline_ms"]
        config["slo"] = {"reference_profile": "a800", "relaxation_factor": 1.0}
        out = tmp_path / "scaled"
        code = main([
            "simulate", "--config", write_json(tmp_path / "s.json", config),
            "--out", str(out), "--slo-scale", "2.5",
        ])
        assert code == 0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config"]["slo"]["relaxation_factor"] == 2.5


class TestPredictorCommands:
    def make_train_config(self, tmp_path, trace_dir, kind="moe"):
        payload = {
            "seed": 2,
            "kind": kind,
            "trace": str(trace_dir / "trace.jsonl"),
            "train": {
                "epochs": 4,
                "expert_count": 4,
                "hidden_width": 8,
                "vocab_cap": 32,
                "window_length": 32,
            },
        }
        return write_json(tmp_path / "train.json", payload)

    def test_train_then_eval(self, tmp_path, trace_dir):
        train_out = tmp_path / "train_out"
        code = main(["train-predictor", "--config",
                     self.make_train_config(tmp_path, trace_dir),
                     "--out", str(train_out)])
        assert code == 0
        checkpoint = train_out / "predictor.npz"
        assert checkpoint.exists()
        eval_config = write_json(
            tmp_path / "eval.json",
            {"checkpoint": str(checkpoint), "trace": str(trace_dir / "trace.jsonl")},
        )
        eval_out = tmp_path / "eval_out"
        assert main(["eval-predictor", "--config", eval_config,
                     "--out", str(eval_out)]) == 0
        summary = json.loads((eval_out / "eval_summary.json").read_text())
        assert summary["samples"] == 40
        assert summary["mae"] >= 0.0

    def test_experts_flag_overrides(self, tmp_path, trace_dir):
        out = tmp_path / "k9"
        code = main(["train-predictor", "--config",
                     self.make_train_config(tmp_path, trace_dir),
                     "--out", str(out), "--experts", "1"])
        assert code == 0

    def test_simulate_with_trained_checkpoint(self, tmp_path, trace_dir):
        from sloroute.workload import load_trace

        trace = load_trace(str(trace_dir / "trace.jsonl"))
        dataset = [(r.prompt_text, r.true_output_length) for r in trace]
        model = train_moe(dataset, TrainConfig(
            epochs=4, learning_rate=0.1, batch_size=16, rng_seed=0,
            expert_count=4, hidden_width=8, vocab_cap=32, window_length=32,
        ))
        checkpoint = tmp_path / "m.npz"
        save_checkpoint(model, str(checkpoint))
        config = scenario_config(
            trace_rel=str(trace_dir / "trace.jsonl"),
            predictor={"kind": "moe", "checkpoint": str(checkpoint)},
        )
        out = tmp_path / "simrun"
        assert main(["simulate", "--config",
                     write_json(tmp_path / "s.json", config),
                     "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["predictor_mae"] is not None


class TestBruteForceCommand:
    def test_small_scenario_runs(self, tmp_path):
        gen = dict(GEN_CONFIG)
        gen["synthetic"] = dict(gen["synthetic"], request_count=5)
        gen["synthetic"]["clusters"] = [
            {
                "task_type": "t0",
                "input_range": [5, 10],
                "output_range": [3, 8],
                "vocabulary": {"prefix": "tok", "size": 10},
            }
        ]
        gen_out = tmp_path / "g"
        assert main(["gen-trace", "--config", write_json(tmp_path / "g.json", gen),
                     "--out", str(gen_out)]) == 0
        config = scenario_config(
            trace_rel=str(gen_out / "trace.jsonl"),
            instances=["h800", "a40"],
            fixed_deadline_ms=2000.0,
        )
        out = tmp_path / "bf"
        assert main(["brute-force", "--config",
                     write_json(tmp_path / "bf.json", config),
                     "--out", str(out)]) == 0
        payload = json.loads((out / "brute_force.json").read_text())
        assert payload["assignments_evaluated"] == 2 ** 5
        assert 0 <= payload["heuristic_goodput_count"] <= 5
        assert payload["optimality_ratio"] <= 1.0

    def test_oversized_scenario_exits_one(self, tmp_path, trace_dir, capsys):
        config = scenario_config(trace_rel=str(trace_dir / "trace.jsonl"))
        code = main(["brute-force", "--config",
                     write_json(tmp_path / "bf.json", config),
                     "--out", str(tmp_path / "bf")])
        assert code == 1
        assert "at most 10 requests" in capsys.readouterr().err


class TestBenchCommand:
    def test_bench_overhead_smoke(self, tmp_path):
        config = write_json(
            tmp_path / "bench.json",
            {"instance_counts": [2, 4], "rps": 100, "duration_s": 0.1},
        )
        out = tmp_path / "bench_out"
        assert main(["bench-overhead", "--config", config, "--out", str(out)]) == 0
        payload = json.loads((out / "bench.json").read_text())
        assert set(payload["bench"]) == {"2", "4"}
        assert len(payload["migration_sweep"]) == 3
