"""Ensemble output-length predictor: gating network over small expert regressors.

The gate is a 2-layer MLP emitting a softmax distribution over K experts;
each expert is a 4-layer MLP regressing the (standardized) output length.
Training runs in two phases: experts first on length-tier cells of one data
half, then the gate on the other half with expert parameters frozen.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ValidationError
from .features import TfidfVocab, featurize, featurize_batch, fit_tfidf, tokenize
from .mlp import Mlp, forward, init_mlp, predict as mlp_predict, sgd_step, train_regressor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.05
    batch_size: int = 32
    rng_seed: int = 0
    expert_count: int = 9
    hidden_width: int = 128
    vocab_cap: int = 4096
    window_length: int = 256
    huber_delta: float = 1.0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        root = math.isqrt(self.expert_count)
        if root * root != self.expert_count:
            raise ValidationError("expert_count must be a perfect square")

    @property
    def tiers_per_axis(self) -> int:
        return math.isqrt(self.expert_count)


@dataclass
class MoeModel:
    gate: Mlp
    experts: list[Mlp]
    vocab: TfidfVocab
    target_mean: float
    target_std: float

    @property
    def expert_count(self) -> int:
        return len(self.experts)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def gate_probabilities(model: MoeModel, features: np.ndarray) -> np.ndarray:
    """Softmax gate output; rows always lie on the probability simplex."""
    if features.ndim == 1:
        features = features[None, :]
    return softmax(mlp_predict(model.gate, features))


def _tier_boundaries(values: np.ndarray, tiers: int) -> np.ndarray:
    """Equal-mass cut points: empirical quantiles at 1/t .. (t-1)/t."""
    qs = np.arange(1, tiers) / tiers
    return np.quantile(values, qs)


def _tier_of(values: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    return np.searchsorted(boundaries, values, side="right")


def _nearest_nonempty_cell(cell: int, tiers: int, counts: np.ndarray) -> int:
    """Closest populated cell by grid (Manhattan) distance; ties to lower index."""
    row, col = divmod(cell, tiers)
    best = None
    for other in range(tiers * tiers):
        if counts[other] == 0:
            continue
        o_row, o_col = divmod(other, tiers)
        dist = abs(o_row - row) + abs(o_col - col)
        if best is None or (dist, other) < best:
            best = (dist, other)
    if best is None:
        raise ValidationError("no populated tier cell; dataset too small")
    return best[1]


def train_moe(dataset: Sequence[tuple[str, int]], config: TrainConfig) -> MoeModel:
    """Two-phase ensemble training, deterministic given the config seed.

    Phase 1 partitions half of the data into K cells by input-length and
    output-length tiers and fits one expert per cell.  Phase 2 freezes the
    experts and fits the gate on the other half against the combined
    prediction.
    """
    k = config.expert_count
    if len(dataset) < 2 * k:
        raise ValidationError(f"need at least {2 * k} samples to train {k} experts")
    rng = np.random.default_rng(config.rng_seed)

    prompts = [prompt for prompt, _ in dataset]
    lengths = np.array([float(y) for _, y in dataset])
    if np.any(lengths < 1):
        raise ValidationError("output lengths must be >= 1")

    vocab = fit_tfidf(prompts, cap=config.vocab_cap, window_length=config.window_length)
    features = featurize_batch(vocab, prompts)
    input_lengths = np.array([len(tokenize(p)) for p in prompts], dtype=np.float64)

    target_mean = float(lengths.mean())
    target_std = float(lengths.std())
    if target_std < 1e-9:
        target_std = 1.0
    y_std = (lengths - target_mean) / target_std

    order = rng.permutation(len(dataset))
    half = len(dataset) // 2
    idx_a, idx_b = order[:half], order[half:]

    # Phase 1: tier cells over half A, one expert per cell.
    tiers = config.tiers_per_axis
    in_bounds = _tier_boundaries(input_lengths[idx_a], tiers)
    out_bounds = _tier_boundaries(lengths[idx_a], tiers)
    cells = _tier_of(input_lengths[idx_a], in_bounds) * tiers + _tier_of(
        lengths[idx_a], out_bounds
    )
    counts = np.bincount(cells, minlength=k)

    dim = vocab.size
    width = config.hidden_width
    experts: list[Mlp] = []
    for cell in range(k):
        source_cell = cell
        if counts[cell] == 0:
            source_cell = _nearest_nonempty_cell(cell, tiers, counts)
            logger.warning(
                "tier cell %d is empty; training its expert on cell %d", cell, source_cell
            )
        members = idx_a[cells == source_cell]
        expert = init_mlp([dim, width, width, width, 1], rng)
        # Start each expert as a constant predictor of its cell mean: its
        # response to foreign features then stays near that mean instead of
        # random-init noise, which keeps phase 2 from locking the gate onto
        # accidental value matches by out-of-cell experts.
        expert.biases[-1][0] = float(y_std[members].mean())
        train_regressor(
            expert,
            features[members],
            y_std[members],
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            huber_delta=config.huber_delta,
            rng=rng,
        )
        experts.append(expert)

    # Phase 2: gate on half B against the frozen-expert combination.
    expert_outputs = np.column_stack(
        [mlp_predict(expert, features[idx_b])[:, 0] for expert in experts]
    )
    gate = init_mlp([dim, width, k], rng)
    x_b = features[idx_b]
    y_b = y_std[idx_b]
    n_b = len(idx_b)
    # softmax over one logit is constant 1.0, so the gate gradient vanishes
    gate_epochs = config.epochs if k > 1 else 0
    for _ in range(gate_epochs):
        epoch_order = rng.permutation(n_b)
        for start in range(0, n_b, config.batch_size):
            batch = epoch_order[start : start + config.batch_size]
            logits, cache = forward(gate, x_b[batch])
            probs = softmax(logits)
            e_batch = expert_outputs[batch]
            combined = (probs * e_batch).sum(axis=1)
            residual = combined - y_b[batch]
            abs_r = np.abs(residual)
            grad_res = np.where(
                abs_r <= config.huber_delta,
                residual,
                config.huber_delta * np.sign(residual),
            ) / len(batch)
            # d(combined)/d(logit_j) = p_j * (e_j - combined)
            grad_logits = probs * (e_batch - combined[:, None]) * grad_res[:, None]
            grad_w, grad_b = _gate_backward(gate, cache, grad_logits)
            sgd_step(gate, grad_w, grad_b, config.learning_rate)

    model = MoeModel(
        gate=gate,
        experts=experts,
        vocab=vocab,
        target_mean=target_mean,
        target_std=target_std,
    )
    return model


def _gate_backward(gate: Mlp, cache: list[np.ndarray], grad_logits: np.ndarray):
    from .mlp import backward

    return backward(gate, cache, grad_logits)


def predict_total_batch(model: MoeModel, windows: Sequence[str]) -> np.ndarray:
    """De-standardized total-length estimates for a batch of token windows."""
    features = featurize_batch(model.vocab, windows)
    probs = softmax(mlp_predict(model.gate, features))
    expert_outputs = np.column_stack(
        [mlp_predict(expert, features)[:, 0] for expert in model.experts]
    )
    combined = (probs * expert_outputs).sum(axis=1)
    totals = combined * model.target_std + model.target_mean
    return np.maximum(np.nan_to_num(totals, nan=1.0), 1.0)


def predict_total(model: MoeModel, window: str) -> float:
    return float(predict_total_batch(model, [window])[0])


def predict(model: MoeModel, window: str, already_generated: int = 0) -> int:
    """Remaining-length estimate: total prediction minus tokens already out.

    Clamped to at least one token; initial routing passes
    ``already_generated=0``.
    """
    total = predict_total(model, window)
    return max(int(round(total)) - already_generated, 1)
