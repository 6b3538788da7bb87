import math

import numpy as np
import pytest
import torch

from crush import (
    CrushModel,
    PredictionHead,
    PretrainedEncoderAdapter,
    ToyTokenizer,
    class_probs,
    load_checkpoint,
    mlm_loss,
    mlm_mask,
    model_from_checkpoint,
    param_diff,
    predict_class,
    save_checkpoint,
    state_digest,
)
from crush.errors import CheckpointError
from crush.rng import rng_stream
from fdcheck import check_gradients

from conftest import assert_within_sigma


def toy(d=16, vocab=128, task="classification", K=3, seed=5, layers=2):
    return CrushModel.build_toy(
        embed_dim=d,
        num_layers=layers,
        num_heads=4,
        vocab_size=vocab,
        max_seq_len=16,
        num_classes=K,
        task=task,
        seed=seed,
    )


class TestEncode:
    def test_deterministic(self):
        model = toy()
        a = model.encode("the same text twice")
        b = model.encode("the same text twice")
        assert torch.equal(a, b)

    def test_output_dimension(self):
        assert toy(d=16).encode("anything").shape == (16,)
        assert toy(d=24).encode("anything").shape == (24,)

    def test_one_token_difference_changes_embedding(self):
        model = toy()
        a = model.encode("green apples for me")
        b = model.encode("green pears for me")
        assert not torch.allclose(a, b)

    def test_empty_text_uses_null_token(self):
        model = toy()
        e = model.encode("")
        assert torch.isfinite(e).all()

    def test_truncation_to_max_seq_len(self):
        model = toy()
        long = " ".join(f"w{i}" for i in range(50))
        truncated = " ".join(f"w{i}" for i in range(16))
        assert torch.equal(model.encode(long), model.encode(truncated))

    def test_batch_matches_single(self):
        model = toy()
        texts = ["one two", "three four five", "six"]
        batch = model.encode_batch(texts)
        for i, text in enumerate(texts):
            assert torch.allclose(batch[i], model.encode(text), atol=1e-12)


class TestMlmMask:
    def test_masked_fraction_within_three_sigma(self):
        tokenizer = ToyTokenizer(128)
        rng = rng_stream(0, "mask-frequency")
        tokens = list(rng.integers(3, 128, size=10_000))
        masked = mlm_mask(tokens, 0.15, rng, tokenizer)
        assert_within_sigma(len(masked.positions), 10_000, 0.15)

    def test_corruption_split_is_80_10_10(self):
        tokenizer = ToyTokenizer(512)
        rng = rng_stream(1, "mask-split")
        tokens = list(rng.integers(3, 512, size=20_000))
        masked = mlm_mask(tokens, 0.5, rng, tokenizer)
        changed = masked.input_ids[masked.positions]
        n = len(masked.positions)
        n_mask = int((changed == tokenizer.MASK).sum())
        n_keep = int((changed == masked.targets).sum())
        assert_within_sigma(n_mask, n, 0.8)
        assert_within_sigma(n_keep, n, 0.1, sigmas=3.5)  # random draw can also hit the original

    def test_targets_recoverable(self):
        tokenizer = ToyTokenizer(64)
        rng = rng_stream(2, "mask-targets")
        tokens = list(rng.integers(3, 64, size=200))
        masked = mlm_mask(tokens, 0.3, rng, tokenizer)
        restored = masked.input_ids.copy()
        restored[masked.positions] = masked.targets
        assert np.array_equal(restored, np.asarray(tokens))

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
    def test_mask_prob_open_interval(self, bad):
        with pytest.raises(ValueError, match="mask_prob"):
            mlm_mask([3, 4, 5], bad, rng_stream(0, "x"), ToyTokenizer(64))

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            mlm_mask([], 0.15, rng_stream(0, "x"), ToyTokenizer(64))

    def test_identical_streams_identical_batches(self):
        tokenizer = ToyTokenizer(64)
        tokens = list(range(3, 40))
        a = mlm_mask(tokens, 0.2, rng_stream(9, "same"), tokenizer)
        b = mlm_mask(tokens, 0.2, rng_stream(9, "same"), tokenizer)
        assert np.array_equal(a.input_ids, b.input_ids)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.targets, b.targets)


class TestMlmLoss:
    def test_uniform_distribution_gives_log_vocab(self):
        vocab = 64
        masked = mlm_mask(list(range(3, 23)), 0.4, rng_stream(3, "u"), ToyTokenizer(vocab))
        probs = torch.full((20, vocab), 1.0 / vocab, dtype=torch.float64)
        assert float(mlm_loss(probs, masked)) == pytest.approx(math.log(vocab), abs=1e-12)

    def test_one_hot_correct_gives_zero(self):
        tokens = list(range(3, 13))
        masked = mlm_mask(tokens, 0.5, rng_stream(4, "oh"), ToyTokenizer(64))
        probs = torch.zeros((10, 64), dtype=torch.float64)
        for pos, tgt in zip(masked.positions, masked.targets):
            probs[pos, tgt] = 1.0
        assert float(mlm_loss(probs, masked)) == 0.0

    def test_three_quarters_correct(self):
        # 2-token vocab wedged into the reserved layout: use ids 3 and 4
        tokenizer = ToyTokenizer(8)
        masked = mlm_mask([3, 4] * 10, 0.5, rng_stream(5, "tq"), tokenizer)
        probs = torch.full((20, 8), 0.25 / 7, dtype=torch.float64)
        for pos, tgt in zip(masked.positions, masked.targets):
            probs[pos] = (1 - 0.75) / 7
            probs[pos, tgt] = 0.75
        assert float(mlm_loss(probs, masked)) == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_no_masked_positions_rejected(self):
        batch = mlm_mask([3], 0.001, rng_stream(1, "none"), ToyTokenizer(64))
        while len(batch.positions):
            batch = mlm_mask([3], 0.001, rng_stream(1, "none"), ToyTokenizer(64))
        with pytest.raises(ValueError, match="no masked positions"):
            mlm_loss(torch.ones((1, 64), dtype=torch.float64) / 64, batch)

    def test_gradients_through_encoder(self):
        model = toy(d=8, vocab=32)
        tokenizer = model.encoder.tokenizer
        rng = rng_stream(7, "mlm-grad")
        tokens = tokenizer.encode("a b c d e f", 16)
        masked = mlm_mask(tokens, 0.5, rng, tokenizer)
        ids = torch.as_tensor(masked.input_ids)[None, :]
        real = torch.ones_like(ids, dtype=torch.bool)

        def loss_fn():
            return mlm_loss(model.encoder.token_probs(ids, real)[0], masked)

        check_gradients(loss_fn, list(model.encoder.parameters()), rng_stream(8, "coords"))


class TestHeads:
    def test_zero_weights_zero_outputs(self):
        model = toy(d=8, K=3)
        for p in model.head.parameters():
            p.data.zero_()
        e = torch.ones(8, dtype=torch.float64)
        assert torch.equal(model.classify(e), torch.zeros(3, dtype=torch.float64))
        reg = toy(d=8, task="regression")
        for p in reg.head.parameters():
            p.data.zero_()
        assert float(reg.regress(e)) == 0.0

    def test_logits_length_matches_classes(self):
        assert toy(K=3).classify(torch.zeros(16, dtype=torch.float64)).shape == (3,)
        assert toy(K=5).classify(torch.zeros(16, dtype=torch.float64)).shape == (5,)

    def test_matches_hand_matrix_arithmetic(self):
        head = PredictionHead(8, 2, seed=0)
        rng = np.random.default_rng(12)
        w1 = rng.normal(size=(head.fc1.out_features, 8)) * 0.3
        b1 = rng.normal(size=head.fc1.out_features) * 0.1
        w2 = rng.normal(size=(2, head.fc1.out_features)) * 0.3
        b2 = rng.normal(size=2) * 0.1
        head.fc1.weight.data = torch.as_tensor(w1)
        head.fc1.bias.data = torch.as_tensor(b1)
        head.fc2.weight.data = torch.as_tensor(w2)
        head.fc2.bias.data = torch.as_tensor(b2)
        e = rng.normal(size=8)
        expected = w2 @ np.maximum(w1 @ e + b1, 0.0) + b2
        got = head(torch.as_tensor(e)).detach().numpy()
        assert np.allclose(got, expected, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            toy(d=16).classify(torch.zeros(8, dtype=torch.float64))

    def test_hidden_scales_with_embed_dim(self):
        assert PredictionHead(768, 3).fc1.out_features == 128
        assert PredictionHead(32, 3).fc1.out_features == 8


class TestClassProbs:
    def test_uniform_logits(self):
        assert np.allclose(class_probs([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-12)

    def test_constant_logits_any_value(self):
        for c in (-50.0, 0.0, 7.5):
            assert np.allclose(class_probs([c] * 4), [0.25] * 4, atol=1e-12)

    def test_hand_value(self):
        probs = class_probs([1.0, 0.0])
        e = math.e
        assert probs[0] == pytest.approx(e / (e + 1), abs=1e-9)
        assert probs[1] == pytest.approx(1 / (e + 1), abs=1e-9)

    def test_sums_to_one_for_large_logits(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = rng.uniform(-100, 100, size=rng.integers(2, 8))
            probs = class_probs(v)
            assert abs(probs.sum() - 1.0) <= 1e-9
            assert (probs >= 0).all()

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            class_probs([0.0, float("inf")])


class TestPredictClass:
    def test_argmax(self):
        assert predict_class([0.0, 1.0, 0.0]) == 1

    def test_tie_breaks_to_lowest_index(self):
        assert predict_class([2.0, 2.0]) == 0
        assert predict_class([0.0, 3.0, 3.0]) == 1

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            v = rng.normal(size=4)
            c = rng.uniform(-20, 20)
            assert predict_class(v) == predict_class(v + c)


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        model = toy(seed=3)
        path = tmp_path / "m.pt"
        save_checkpoint(model, path, extra={"note": 1})
        clone = toy(seed=99)  # different init, same architecture
        extra = load_checkpoint(path, clone)
        assert extra == {"note": 1}
        assert state_digest(clone.encoder) == state_digest(model.encoder)
        assert state_digest(clone.head) == state_digest(model.head)

    def test_wrong_dimension_rejected(self, tmp_path):
        path = tmp_path / "m.pt"
        save_checkpoint(toy(d=16), path)
        with pytest.raises(CheckpointError, match="fingerprint"):
            load_checkpoint(path, toy(d=24))

    def test_perturbed_weight_reports_exactly_one_difference(self, tmp_path):
        model = toy()
        path = tmp_path / "m.pt"
        save_checkpoint(model, path)
        saved = torch.load(path, weights_only=True)["encoder"]
        with torch.no_grad():
            model.encoder.blocks[0].qkv.weight[2, 3] += 0.5
        diffs = param_diff(saved, model.encoder.state_dict())
        assert diffs == [("blocks.0.qkv.weight", 1)]

    def test_model_from_checkpoint_restores_everything(self, tmp_path):
        model = toy(task="regression", seed=7)
        path = tmp_path / "m.pt"
        save_checkpoint(model, path)
        loaded, _ = model_from_checkpoint(path)
        assert loaded.task == "regression"
        text = "round trip please"
        assert torch.equal(loaded.encode(text), model.encode(text))


class TestAdapter:
    class FakePretrained(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.table = torch.nn.Linear(4, 12).double()

        def pooled(self, texts):
            feats = torch.stack(
                [
                    torch.tensor(
                        [len(t), t.count(" "), len(set(t)), 1.0], dtype=torch.float64
                    )
                    for t in texts
                ]
            )
            return self.table(feats)

    def test_adapter_encodes_through_external_module(self):
        fake = self.FakePretrained()
        adapter = PretrainedEncoderAdapter(fake, lambda m, texts: m.pooled(texts), 12)
        model = CrushModel(adapter, PredictionHead(12, 3, seed=0), "classification")
        logits = model.classify(model.encode("external weights"))
        assert logits.shape == (3,)
        assert torch.isfinite(logits).all()

    def test_adapter_checks_dimension(self):
        fake = self.FakePretrained()
        adapter = PretrainedEncoderAdapter(fake, lambda m, texts: m.pooled(texts), 7)
        with pytest.raises(ValueError, match="adapter produced"):
            adapter.encode_texts(["x"])

    def test_adapter_has_no_mlm_path(self):
        adapter = PretrainedEncoderAdapter(self.FakePretrained(), lambda m, t: m.pooled(t), 12)
        with pytest.raises(NotImplementedError):
            adapter.token_probs(None, None)
