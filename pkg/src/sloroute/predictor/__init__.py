"""Output-length prediction: featurization, the expert ensemble, baselines."""

from .features import TfidfVocab, featurize, featurize_batch, fit_tfidf, tokenize
from .mlp import Mlp, forward, huber_loss, init_mlp, train_regressor
from .moe import (
    MoeModel,
    TrainConfig,
    gate_probabilities,
    predict,
    predict_total,
    predict_total_batch,
    softmax,
    train_moe,
)
from .baselines import (
    HistoryPredictor,
    MoePredictorArm,
    NoisyOracleLengths,
    OracleLengths,
    SingleMlpArm,
    SingleMlpModel,
    mae,
    normalized_mae,
    single_mlp_predict_batch,
    train_single_mlp,
)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "TfidfVocab",
    "featurize",
    "featurize_batch",
    "fit_tfidf",
    "tokenize",
    "Mlp",
    "forward",
    "huber_loss",
    "init_mlp",
    "train_regressor",
    "MoeModel",
    "TrainConfig",
    "gate_probabilities",
    "predict",
    "predict_total",
    "predict_total_batch",
    "softmax",
    "train_moe",
    "HistoryPredictor",
    "MoePredictorArm",
    "NoisyOracleLengths",
    "OracleLengths",
    "SingleMlpArm",
    "SingleMlpModel",
    "mae",
    "normalized_mae",
    "single_mlp_predict_batch",
    "train_single_mlp",
    "load_checkpoint",
    "save_checkpoint",
]
