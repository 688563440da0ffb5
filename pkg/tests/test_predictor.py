import numpy as np
import pytest

from conftest import SMALL_TRAIN, predictor_corpus
from sloroute.errors import ValidationError
from sloroute.predictor import (
    HistoryPredictor,
    MoeModel,
    NoisyOracleLengths,
    OracleLengths,
    TrainConfig,
    featurize,
    gate_probabilities,
    load_checkpoint,
    mae,
    normalized_mae,
    predict,
    predict_total,
    predict_total_batch,
    save_checkpoint,
    single_mlp_predict_batch,
    train_moe,
    train_single_mlp,
)
from sloroute.predictor.features import TfidfVocab
from sloroute.predictor.mlp import Mlp, predict as mlp_predict


def tiny_config(**overrides):
    base = dict(
        epochs=8,
        learning_rate=0.1,
        batch_size=16,
        rng_seed=3,
        expert_count=4,
        hidden_width=8,
        vocab_cap=64,
        window_length=64,
    )
    base.update(overrides)
    return TrainConfig(**base)


def tiny_corpus(n=120, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        kind = int(rng.integers(2))
        vocab = ["sql", "select", "table"] if kind == 0 else ["code", "def", "loop"]
        length = int(rng.integers(5, 15))
        prompt = " ".join(rng.choice(vocab, size=length))
        y = int(rng.integers(20, 40)) if kind == 0 else int(rng.integers(200, 260))
        out.append((prompt, y))
    return out


def constant_expert(input_dim: int, value: float) -> Mlp:
    # zero weights with one bias on the output layer: f(x) = value
    return Mlp(
        weights=[np.zeros((input_dim, 4)), np.zeros((4, 1))],
        biases=[np.zeros(4), np.array([value])],
    )


def handmade_model(expert_values, mean=0.0, std=1.0, input_dim=6) -> MoeModel:
    k = len(expert_values)
    vocab = TfidfVocab(
        index={f"t{i}": i for i in range(input_dim)},
        idf=np.ones(input_dim),
        window_length=16,
    )
    gate = Mlp(
        weights=[np.zeros((input_dim, 4)), np.zeros((4, k))],
        biases=[np.zeros(4), np.zeros(k)],
    )
    experts = [constant_expert(input_dim, v) for v in expert_values]
    return MoeModel(gate=gate, experts=experts, vocab=vocab,
                    target_mean=mean, target_std=std)


class TestMoeMechanics:
    def test_zero_gate_logits_give_uniform_mixture(self):
        model = handmade_model([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0])
        probs = gate_probabilities(model, np.zeros(6))
        assert np.allclose(probs, 1.0 / 9.0)
        # uniform weights -> prediction is the plain mean of expert outputs
        assert predict_total(model, "t0") == pytest.approx(5.0)

    def test_remaining_clamps_to_one(self):
        model = handmade_model([200.0])
        assert predict(model, "t0", already_generated=250) == 1
        assert predict(model, "t0", already_generated=0) == 200

    def test_prediction_clamped_to_at_least_one_token(self):
        model = handmade_model([-50.0])
        assert predict_total(model, "t0") == 1.0

    def test_convex_combination_bounds(self, trained_moe, corpus_test):
        prompts = [p for p, _ in corpus_test[:100]]
        from sloroute.predictor import featurize_batch

        feats = featurize_batch(trained_moe.vocab, prompts)
        expert_out = np.column_stack(
            [mlp_predict(e, feats)[:, 0] for e in trained_moe.experts]
        ) * trained_moe.target_std + trained_moe.target_mean
        totals = predict_total_batch(trained_moe, prompts)
        assert np.all(totals >= expert_out.min(axis=1) - 1e-9)
        assert np.all(totals <= expert_out.max(axis=1) + 1e-9)

    def test_gate_output_is_simplex(self, trained_moe, corpus_test):
        from sloroute.predictor import featurize_batch

        prompts = [p for p, _ in corpus_test[:64]]
        probs = gate_probabilities(
            trained_moe, featurize_batch(trained_moe.vocab, prompts)
        )
        assert np.all(probs >= 0.0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)


class TestTrainMoe:
    def test_deterministic_given_seed(self):
        corpus = tiny_corpus()
        a = train_moe(corpus, tiny_config())
        b = train_moe(corpus, tiny_config())
        for net_a, net_b in zip([a.gate] + a.experts, [b.gate] + b.experts):
            for wa, wb in zip(net_a.weights + net_a.biases,
                              net_b.weights + net_b.biases):
                assert np.array_equal(wa, wb)

    def test_k1_degenerates_to_single_mlp(self):
        corpus = tiny_corpus()
        model = train_moe(corpus, tiny_config(expert_count=1))
        assert model.expert_count == 1
        probs = gate_probabilities(model, featurize(model.vocab, corpus[0][0]))
        assert probs[0, 0] == pytest.approx(1.0)
        # the combined prediction is exactly the lone expert's output
        from sloroute.predictor import featurize_batch

        feats = featurize_batch(model.vocab, [corpus[0][0]])
        expert = mlp_predict(model.experts[0], feats)[0, 0]
        expected = max(expert * model.target_std + model.target_mean, 1.0)
        assert predict_total(model, corpus[0][0]) == pytest.approx(expected)

    def test_k_must_be_perfect_square(self):
        with pytest.raises(ValidationError, match="perfect square"):
            tiny_config(expert_count=5)

    def test_needs_enough_samples(self):
        with pytest.raises(ValidationError, match="at least"):
            train_moe(tiny_corpus(6), tiny_config(expert_count=4))

    def test_learns_bimodal_lengths(self):
        corpus = tiny_corpus(200)
        model = train_moe(corpus, tiny_config(epochs=30))
        short = predict_total(model, "sql select table sql select")
        long = predict_total(model, "code def loop code def")
        assert short < 100 < long

    def test_single_mlp_baseline_matches_degenerate_ensemble(self):
        corpus = tiny_corpus()
        single = train_single_mlp(corpus, tiny_config())
        degenerate = train_moe(corpus, tiny_config(expert_count=1))
        prompts = [p for p, _ in corpus[:10]]
        assert np.allclose(
            single_mlp_predict_batch(single, prompts),
            predict_total_batch(degenerate, prompts),
        )


class TestHeldOutOrdering:
    def test_moe_beats_single_mlp_beats_history(
        self, quality_moe, quality_single_mlp, quality_corpus_train, quality_corpus_test
    ):
        history = HistoryPredictor(window=256, prior=256.0)
        for _, y in quality_corpus_train:
            history.observe_completion(y)
        prompts = [p for p, _ in quality_corpus_test]
        truths = [y for _, y in quality_corpus_test]
        moe_mae = mae(predict_total_batch(quality_moe, prompts), truths)
        single_mae = mae(single_mlp_predict_batch(quality_single_mlp, prompts), truths)
        history_mae = mae(
            [history.predict_total(0, p) for p in prompts], truths
        )
        assert moe_mae < single_mae < history_mae
        assert moe_mae <= history_mae / 1.5


class TestHistoryPredictor:
    def test_running_mean(self):
        h = HistoryPredictor(window=8, prior=256.0)
        h.observe_completion(100)
        h.observe_completion(300)
        assert h.predict_total(0, "x") == pytest.approx(200.0)

    def test_prior_before_any_completion(self):
        assert HistoryPredictor(prior=256.0).predict_total(0, "x") == 256.0

    def test_constant_stream_fixed_point(self):
        h = HistoryPredictor(window=16)
        for _ in range(100):
            h.observe_completion(150)
        assert h.predict_total(0, "x") == pytest.approx(150.0)

    def test_window_rolls(self):
        h = HistoryPredictor(window=2)
        for value in (10, 20, 30):
            h.observe_completion(value)
        assert h.predict_total(0, "x") == pytest.approx(25.0)


class TestOracles:
    def test_oracle_returns_truth(self):
        oracle = OracleLengths({1: 42, 2: 7})
        assert oracle.predict_total(1, "") == 42.0
        assert oracle.predict_total(2, "") == 7.0

    def test_noisy_oracle_deterministic_per_request(self):
        a = NoisyOracleLengths({5: 100}, sigma=0.3, seed=9)
        b = NoisyOracleLengths({5: 100}, sigma=0.3, seed=9)
        assert a.predict_total(5, "") == b.predict_total(5, "")

    def test_noisy_oracle_zero_sigma_is_exact(self):
        assert NoisyOracleLengths({5: 100}, sigma=0.0).predict_total(5, "") == 100.0

    def test_noisy_oracle_never_below_one(self):
        noisy = NoisyOracleLengths({i: 2 for i in range(200)}, sigma=3.0, seed=1)
        assert min(noisy.predict_total(i, "") for i in range(200)) >= 1.0


class TestMae:
    def test_identity_is_zero(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_single_pair(self):
        assert mae([10.0], [20.0]) == 10.0
        assert normalized_mae([10.0], [20.0]) == pytest.approx(0.5)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        preds = rng.uniform(0, 100, 50)
        truths = rng.uniform(0, 100, 50)
        assert mae(preds, truths) >= 0.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            mae([1.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            mae([], [])


class TestCheckpoint:
    def test_moe_round_trip_bit_exact(self, tmp_path, trained_moe):
        path = tmp_path / "model.npz"
        save_checkpoint(trained_moe, str(path))
        loaded = load_checkpoint(str(path))
        assert isinstance(loaded, MoeModel)
        assert loaded.vocab.index == trained_moe.vocab.index
        assert np.array_equal(loaded.vocab.idf, trained_moe.vocab.idf)
        assert loaded.target_mean == trained_moe.target_mean
        assert loaded.target_std == trained_moe.target_std
        for net_a, net_b in zip([loaded.gate] + loaded.experts,
                                [trained_moe.gate] + trained_moe.experts):
            for wa, wb in zip(net_a.weights + net_a.biases,
                              net_b.weights + net_b.biases):
                assert np.array_equal(wa, wb)

    def test_single_mlp_round_trip(self, tmp_path):
        model = train_single_mlp(tiny_corpus(), tiny_config())
        path = tmp_path / "single.npz"
        save_checkpoint(model, str(path))
        loaded = load_checkpoint(str(path))
        prompts = ["sql select", "code def loop"]
        assert np.allclose(
            single_mlp_predict_batch(loaded, prompts),
            single_mlp_predict_batch(model, prompts),
        )

    def test_predictions_survive_round_trip(self, tmp_path, trained_moe, corpus_test):
        path = tmp_path / "model.npz"
        save_checkpoint(trained_moe, str(path))
        loaded = load_checkpoint(str(path))
        prompts = [p for p, _ in corpus_test[:20]]
        assert np.array_equal(
            predict_total_batch(loaded, prompts),
            predict_total_batch(trained_moe, prompts),
        )


class TestBatchConsistency:
    def test_batch_matches_single_path(self, trained_moe, corpus_test):
        prompts = [p for p, _ in corpus_test[:10]]
        batch = predict_total_batch(trained_moe, prompts)
        singles = [predict_total(trained_moe, p) for p in prompts]
        assert np.allclose(batch, singles)
