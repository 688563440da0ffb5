"""Model checkpointing: one self-describing ``.npz`` per model.

Layer matrices are stored raw (bit-exact round trip); vocabulary, scaler,
and architecture live in an embedded JSON header with a format version.
"""

from __future__ import annotations

import json

import numpy as np

from ..errors import ValidationError
from .features import TfidfVocab
from .mlp import Mlp
from .baselines import SingleMlpModel
from .moe import MoeModel

FORMAT_VERSION = 1


def _pack_net(prefix: str, net: Mlp, arrays: dict[str, np.ndarray]) -> int:
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}_w{k}"] = w
        arrays[f"{prefix}_b{k}"] = b
    return len(net.weights)


def _unpack_net(prefix: str, depth: int, data) -> Mlp:
    weights = [np.asarray(data[f"{prefix}_w{k}"]) for k in range(depth)]
    biases = [np.asarray(data[f"{prefix}_b{k}"]) for k in range(depth)]
    return Mlp(weights=weights, biases=biases)


def save_checkpoint(model: MoeModel | SingleMlpModel, path: str) -> None:
    arrays: dict[str, np.ndarray] = {}
    if isinstance(model, MoeModel):
        kind = "moe"
        gate_depth = _pack_net("gate", model.gate, arrays)
        expert_depths = [
            _pack_net(f"expert{k}", expert, arrays)
            for k, expert in enumerate(model.experts)
        ]
        header = {
            "format_version": FORMAT_VERSION,
            "kind": kind,
            "gate_depth": gate_depth,
            "expert_depths": expert_depths,
            "expert_count": model.expert_count,
        }
        vocab = model.vocab
    elif isinstance(model, SingleMlpModel):
        kind = "single_mlp"
        net_depth = _pack_net("net", model.net, arrays)
        header = {
            "format_version": FORMAT_VERSION,
            "kind": kind,
            "net_depth": net_depth,
        }
        vocab = model.vocab
    else:
        raise ValidationError(f"cannot checkpoint object of type {type(model).__name__}")

    header["target_mean"] = model.target_mean
    header["target_std"] = model.target_std
    header["window_length"] = vocab.window_length
    header["vocab_tokens"] = vocab.tokens()
    arrays["idf"] = vocab.idf
    arrays["header"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)


def load_checkpoint(path: str) -> MoeModel | SingleMlpModel:
    with np.load(path) as data:
        header = json.loads(bytes(np.asarray(data["header"]).tobytes()).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint format version {header.get('format_version')!r}"
            )
        vocab = TfidfVocab(
            index={token: i for i, token in enumerate(header["vocab_tokens"])},
            idf=np.asarray(data["idf"]),
            window_length=int(header["window_length"]),
        )
        if header["kind"] == "moe":
            gate = _unpack_net("gate", header["gate_depth"], data)
            experts = [
                _unpack_net(f"expert{k}", depth, data)
                for k, depth in enumerate(header["expert_depths"])
            ]
            return MoeModel(
                gate=gate,
                experts=experts,
                vocab=vocab,
                target_mean=float(header["target_mean"]),
                target_std=float(header["target_std"]),
            )
        if header["kind"] == "single_mlp":
            net = _unpack_net("net", header["net_depth"], data)
            return SingleMlpModel(
                net=net,
                vocab=vocab,
                target_mean=float(header["target_mean"]),
                target_std=float(header["target_std"]),
            )
        raise ValidationError(f"unknown checkpoint kind {header['kind']!r}")
