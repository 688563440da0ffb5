"""Baseline output-length predictors and the uniform arm interface.

Every arm exposes ``predict_total(request_id, window_text) -> float`` and
``observe_completion(output_length)``; routing code consumes lengths only
through this interface.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import ValidationError
from .features import TfidfVocab, featurize_batch, fit_tfidf
from .mlp import Mlp, init_mlp, predict as mlp_predict, train_regressor
from .moe import MoeModel, TrainConfig, predict_total_batch


class HistoryPredictor:
    """Running mean of the last ``window`` completed output lengths."""

    def __init__(self, window: int = 256, prior: float = 256.0):
        if window < 1:
            raise ValidationError("history window must be >= 1")
        self.window = window
        self.prior = float(prior)
        self._completions: deque[float] = deque(maxlen=window)

    def observe_completion(self, output_length: float) -> None:
        self._completions.append(float(output_length))

    def predict_total(self, request_id: int, window_text: str) -> float:
        if not self._completions:
            return self.prior
        return sum(self._completions) / len(self._completions)


class OracleLengths:
    """Ground-truth lengths; used only by explicit oracle experiment arms."""

    def __init__(self, truths: Mapping[int, int]):
        self._truths = dict(truths)

    def observe_completion(self, output_length: float) -> None:
        pass

    def predict_total(self, request_id: int, window_text: str) -> float:
        return float(self._truths[request_id])


class NoisyOracleLengths:
    """Truth with multiplicative noise: total = true * (1 + sigma * z).

    One standard-normal draw per request id, derived from (seed, id) so the
    same request sees the same noise in every arm of a paired comparison.
    Also serves as the accuracy/latency stand-in for heavyweight learned
    predictors: ``latency_ms`` is added to decision-latency accounting.
    """

    def __init__(self, truths: Mapping[int, int], sigma: float, seed: int = 0,
                 latency_ms: float = 0.0):
        if sigma < 0:
            raise ValidationError("sigma must be >= 0")
        self._truths = dict(truths)
        self.sigma = sigma
        self.seed = seed
        self.latency_ms = latency_ms
        self._cache: dict[int, float] = {}

    def observe_completion(self, output_length: float) -> None:
        pass

    def predict_total(self, request_id: int, window_text: str) -> float:
        cached = self._cache.get(request_id)
        if cached is not None:
            return cached
        z = float(np.random.default_rng([self.seed, request_id]).standard_normal())
        total = max(1.0, self._truths[request_id] * (1.0 + self.sigma * z))
        self._cache[request_id] = total
        return total


@dataclass
class SingleMlpModel:
    """Plain 4-layer MLP regressor over the same TF-IDF features."""

    net: Mlp
    vocab: TfidfVocab
    target_mean: float
    target_std: float


def train_single_mlp(dataset: Sequence[tuple[str, int]], config: TrainConfig) -> SingleMlpModel:
    """Train the single-MLP baseline: the expert-count-1 degenerate pipeline.

    Running the standard two-phase trainer with one expert yields exactly a
    single 4-layer MLP (the gate is a constant 1.0), so this baseline
    differs from the ensemble only in the expert count.
    """
    import dataclasses

    from .moe import train_moe

    degenerate = train_moe(dataset, dataclasses.replace(config, expert_count=1))
    return SingleMlpModel(
        net=degenerate.experts[0],
        vocab=degenerate.vocab,
        target_mean=degenerate.target_mean,
        target_std=degenerate.target_std,
    )


def single_mlp_predict_batch(model: SingleMlpModel, windows: Sequence[str]) -> np.ndarray:
    features = featurize_batch(model.vocab, windows)
    out = mlp_predict(model.net, features)[:, 0]
    totals = out * model.target_std + model.target_mean
    return np.maximum(np.nan_to_num(totals, nan=1.0), 1.0)


class MoePredictorArm:
    """Arm wrapper around a trained ensemble model."""

    def __init__(self, model: MoeModel):
        self.model = model

    def observe_completion(self, output_length: float) -> None:
        pass

    def predict_total(self, request_id: int, window_text: str) -> float:
        return float(predict_total_batch(self.model, [window_text])[0])

    def predict_total_batch(self, windows: Sequence[str]) -> np.ndarray:
        return predict_total_batch(self.model, windows)


class SingleMlpArm:
    def __init__(self, model: SingleMlpModel):
        self.model = model

    def observe_completion(self, output_length: float) -> None:
        pass

    def predict_total(self, request_id: int, window_text: str) -> float:
        return float(single_mlp_predict_batch(self.model, [window_text])[0])


def mae(predictions: Sequence[float], truths: Sequence[float]) -> float:
    """Mean absolute error."""
    if len(predictions) != len(truths):
        raise ValidationError("predictions and truths must have equal length")
    if not len(predictions):
        raise ValidationError("cannot compute MAE of empty sequences")
    preds = np.asarray(predictions, dtype=np.float64)
    actual = np.asarray(truths, dtype=np.float64)
    return float(np.abs(preds - actual).mean())


def normalized_mae(predictions: Sequence[float], truths: Sequence[float]) -> float:
    """MAE divided by the mean true value."""
    value = mae(predictions, truths)
    mean_truth = float(np.asarray(truths, dtype=np.float64).mean())
    if mean_truth == 0.0:
        raise ValidationError("normalized MAE undefined for zero-mean truths")
    return value / mean_truth
