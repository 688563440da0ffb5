"""Factories for synthetic predictor models used by benches and smoke tests."""

from __future__ import annotations

import numpy as np

from .features import TfidfVocab
from .mlp import init_mlp
from .moe import MoeModel


def build_random_moe(
    vocab_cap: int = 4096,
    hidden_width: int = 128,
    expert_count: int = 9,
    window_length: int = 256,
    seed: int = 0,
) -> MoeModel:
    """Randomly initialized ensemble at the default desk scale.

    The parameters are untrained but the architecture and inference math are
    the real thing, which is all a wall-clock bench needs.
    """
    rng = np.random.default_rng([seed, 0xBE9C4])
    tokens = [f"tok{i:04d}" for i in range(vocab_cap)]
    vocab = TfidfVocab(
        index={token: i for i, token in enumerate(tokens)},
        idf=np.ones(vocab_cap, dtype=np.float64),
        window_length=window_length,
    )
    gate = init_mlp([vocab_cap, hidden_width, expert_count], rng)
    experts = [
        init_mlp([vocab_cap, hidden_width, hidden_width, hidden_width, 1], rng)
        for _ in range(expert_count)
    ]
    return MoeModel(
        gate=gate,
        experts=experts,
        vocab=vocab,
        target_mean=300.0,
        target_std=150.0,
    )
