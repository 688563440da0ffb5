import numpy as np
import pytest

from sloroute.predictor import TrainConfig, train_moe, train_single_mlp
from sloroute.profiles import BUILTIN_PROFILES
from sloroute.workload import (
    ArrivalProcess,
    ClusterSpec,
    TraceConfig,
    generate_synthetic,
    with_fixed_deadline,
)


def cluster_vocab(prefix: str, size: int = 40) -> tuple[str, ...]:
    return tuple(f"{prefix}{i:03d}" for i in range(size))


def nine_cluster_specs() -> tuple[ClusterSpec, ...]:
    """3x3 grid of task clusters: input scale x output scale, disjoint vocabularies."""
    clusters = []
    for i in range(3):
        for j in range(3):
            out_center = 90 + 230 * j + 35 * i
            out_half = 30 + int(0.10 * out_center)
            in_center = 45 + 45 * i
            clusters.append(
                ClusterSpec(
                    task_type=f"task_{i}{j}",
                    input_range=(in_center - 15, in_center + 15),
                    output_range=(out_center - out_half, out_center + out_half),
                    vocabulary=cluster_vocab(f"c{i}{j}_"),
                )
            )
    return tuple(clusters)


def make_corpus(count: int, seed: int) -> list[tuple[str, int]]:
    config = TraceConfig(
        request_count=count,
        arrival=ArrivalProcess.fixed(10.0),
        clusters=nine_cluster_specs(),
        rng_seed=seed,
    )
    return [
        (spec.prompt_text, spec.true_output_length)
        for spec in generate_synthetic(config)
    ]


def predictor_corpus(count: int, seed: int) -> list[tuple[str, int]]:
    """Nine task clusters, each with its own token pool whose histogram tilt
    carries a verbosity signal: output = base_c + 0.25*base_c*u + noise."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        cluster = int(rng.integers(9))
        row, col = divmod(cluster, 3)
        base = 90 + 230 * col + 35 * row
        amp = 0.25 * base
        length = int(rng.integers(45 + 45 * row - 15, 45 + 45 * row + 16))
        u = float(rng.uniform(-1, 1))
        low = rng.random(length) < (1 + u) / 2
        ids = np.where(
            low, rng.integers(0, 20, length), rng.integers(20, 40, length)
        )
        prompt = " ".join(f"c{cluster}_{t:03d}" for t in ids)
        y = max(1, int(round(base + amp * u + rng.normal(0, 0.05 * base))))
        out.append((prompt, y))
    return out


def motivation_trace(seed: int, request_count: int = 600, rate_rps: float = 10.0):
    """Single-cluster workload: 100-token prompts, outputs uniform in [100, 500]."""
    config = TraceConfig(
        request_count=request_count,
        arrival=ArrivalProcess.poisson(rate_rps),
        clusters=(
            ClusterSpec(
                task_type="mixed",
                input_range=(100, 100),
                output_range=(100, 500),
                vocabulary=cluster_vocab("m"),
            ),
        ),
        rng_seed=seed,
    )
    return with_fixed_deadline(generate_synthetic(config), 6000.0)


def mixed_trace(seed: int, request_count: int = 400, rate_rps: float = 8.0):
    """Multi-cluster workload for SLO-scaled experiments (deadlines unassigned)."""
    config = TraceConfig(
        request_count=request_count,
        arrival=ArrivalProcess.poisson(rate_rps),
        clusters=nine_cluster_specs(),
        rng_seed=seed,
    )
    return generate_synthetic(config)


SMALL_TRAIN = TrainConfig(
    epochs=60,
    learning_rate=0.2,
    batch_size=32,
    rng_seed=7,
    expert_count=9,
    hidden_width=32,
    vocab_cap=512,
    window_length=192,
)


@pytest.fixture(scope="session")
def four_profiles():
    return [BUILTIN_PROFILES[name] for name in ("h800", "a800", "a40", "v100")]


@pytest.fixture(scope="session")
def corpus_train():
    return make_corpus(2000, seed=11)


@pytest.fixture(scope="session")
def corpus_test():
    return make_corpus(500, seed=12)


@pytest.fixture(scope="session")
def trained_moe(corpus_train):
    """Session model for simulator arms; trained on the trace-like corpus."""
    return train_moe(corpus_train, SMALL_TRAIN)


@pytest.fixture(scope="session")
def trained_single_mlp(corpus_train):
    return train_single_mlp(corpus_train, SMALL_TRAIN)


# Predictor-quality corpus at its documented scale (8k train / 2k test) and
# the training config used by the held-out comparisons.
ORDERING_TRAIN = TrainConfig(
    epochs=150,
    learning_rate=0.2,
    batch_size=32,
    rng_seed=7,
    expert_count=9,
    hidden_width=32,
    vocab_cap=512,
    window_length=192,
)


@pytest.fixture(scope="session")
def quality_corpus_train():
    return predictor_corpus(8000, seed=11)


@pytest.fixture(scope="session")
def quality_corpus_test():
    return predictor_corpus(2000, seed=12)


@pytest.fixture(scope="session")
def quality_moe(quality_corpus_train):
    return train_moe(quality_corpus_train, ORDERING_TRAIN)


@pytest.fixture(scope="session")
def quality_single_mlp(quality_corpus_train):
    return train_single_mlp(quality_corpus_train, ORDERING_TRAIN)
