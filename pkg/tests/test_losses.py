import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from crush import losses
from fdcheck import check_input_gradients

T = lambda x: torch.as_tensor(x, dtype=torch.float64)


class TestContrastiveNll:
    def test_uniform_scores_give_log_count(self):
        # all candidates at the same dot product -> ln(k+1)
        anchor = T([1.0, 0.0])
        for count in (2, 3, 7):
            cands = T([[0.5, 0.5]] * count)
            assert float(losses.contrastive_nll(anchor, cands)) == pytest.approx(
                math.log(count), abs=1e-12
            )

    def test_two_uniform_candidates_ln2(self):
        loss = losses.contrastive_nll(T([0.0, 0.0]), T([[1.0, 2.0], [3.0, -1.0]]))
        assert float(loss) == pytest.approx(math.log(2), abs=1e-12)

    def test_dominant_positive_drives_loss_to_zero(self):
        anchor = T([40.0, 0.0])
        cands = T([[1.0, 0.0], [0.0, 1.0]])
        assert float(losses.contrastive_nll(anchor, cands)) < 1e-15

    def test_hand_value(self):
        # anchor=(1,0), positive=(1,0), negative=(0,1) -> ln(1 + e^-1)
        loss = losses.contrastive_nll(T([1.0, 0.0]), T([[1.0, 0.0], [0.0, 1.0]]))
        assert float(loss) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-9)

    def test_single_candidate_is_zero(self):
        assert float(losses.contrastive_nll(T([2.0, 3.0]), T([[5.0, -1.0]]))) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            losses.contrastive_nll(T([1.0, 0.0]), T([[1.0, 0.0, 2.0]]))

    def test_permutation_of_negatives_invariant(self):
        rng = np.random.default_rng(3)
        anchor = T(rng.normal(size=4))
        cands = rng.normal(size=(5, 4))
        base = float(losses.contrastive_nll(anchor, T(cands)))
        shuffled = np.concatenate([cands[:1], cands[1:][::-1]])
        assert float(losses.contrastive_nll(anchor, T(shuffled))) == pytest.approx(
            base, abs=1e-12
        )

    def test_strictly_decreasing_in_positive_score(self):
        negatives = np.random.default_rng(0).normal(size=(3, 4))
        anchor = np.array([1.0, 0.5, -0.2, 0.3])
        values = []
        for scale in (0.0, 0.5, 1.0, 2.0):
            cands = np.vstack([anchor * scale, negatives])
            values.append(float(losses.contrastive_nll(T(anchor), T(cands))))
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_temperature_divides_scores(self):
        anchor, cands = T([1.0, 0.0]), T([[2.0, 0.0], [0.0, 2.0]])
        hot = losses.contrastive_nll(anchor, cands, temperature=2.0)
        manual = losses.contrastive_nll(anchor / 2.0, cands)
        assert float(hot) == pytest.approx(float(manual), abs=1e-12)

    def test_input_gradients(self):
        rng = np.random.default_rng(11)
        anchor = T(rng.normal(size=6)).requires_grad_()
        cands = T(rng.normal(size=(4, 6))).requires_grad_()
        check_input_gradients(lambda: losses.contrastive_nll(anchor, cands), [anchor, cands])


class TestRobustUaLoss:
    def test_equal_inputs_any_weight(self):
        value = losses.robust_ua_loss(math.log(2), math.log(2), 0.5)
        assert float(value) == pytest.approx(math.log(2), abs=1e-12)

    def test_zero_aux(self):
        assert float(losses.robust_ua_loss(0.8, 0.0, 0.3)) == pytest.approx(0.24, abs=1e-12)

    def test_hand_value(self):
        # ua = ln(1+e^-1), aux = ln 5 (uniform over 5 aux candidates)
        ua = math.log(1 + math.exp(-1))
        aux = math.log(5)
        expected = 0.7 * ua + 0.3 * aux
        assert float(losses.robust_ua_loss(ua, aux, 0.7)) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.7021, abs=5e-5)

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_boundary_weights(self, lam):
        with pytest.raises(ValueError, match="mix weight"):
            losses.robust_ua_loss(1.0, 1.0, lam)


class TestCrossEntropy:
    def test_uniform_logits(self):
        assert float(losses.cross_entropy(T([0.0, 0.0, 0.0]), 1)) == pytest.approx(
            math.log(3), abs=1e-12
        )

    def test_huge_margin_goes_to_zero(self):
        assert float(losses.cross_entropy(T([60.0, 0.0, 0.0]), 0)) < 1e-15

    def test_hand_value(self):
        assert float(losses.cross_entropy(T([1.0, 0.0]), 0)) == pytest.approx(
            math.log(1 + math.exp(-1)), abs=1e-9
        )

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            losses.cross_entropy(T([0.0, 1.0]), 2)

    def test_input_gradients(self):
        logits = T([0.3, -1.2, 0.7]).requires_grad_()
        check_input_gradients(lambda: losses.cross_entropy(logits, 2), [logits])


class TestContextualCe:
    def test_single_uniform_context(self):
        value = losses.contextual_ce(T([[0.0, 0.0, 0.0]]), 2)
        assert float(value) == pytest.approx(math.log(3), abs=1e-12)

    def test_correct_contexts_vanish(self):
        value = losses.contextual_ce(T([[50.0, 0.0], [50.0, 0.0]]), 0)
        assert float(value) < 1e-15

    def test_hand_value(self):
        # CE((1,0),0) + CE((0,1),0) averaged = (ln(1+e^-1) + ln(1+e)) / 2
        value = losses.contextual_ce(T([[1.0, 0.0], [0.0, 1.0]]), 0)
        expected = (math.log(1 + math.exp(-1)) + math.log(1 + math.e)) / 2
        assert float(value) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.8133, abs=5e-5)

    def test_empty_context_contributes_zero(self):
        value = losses.contextual_ce(torch.zeros((0, 3), dtype=torch.float64), 1)
        assert float(value) == 0.0

    def test_input_gradients(self):
        ctx = T([[0.2, -0.4, 0.9], [1.1, 0.0, -0.3]]).requires_grad_()
        check_input_gradients(lambda: losses.contextual_ce(ctx, 1), [ctx])


class TestContextualClassificationLoss:
    def test_equal_terms(self):
        v = losses.contextual_classification_loss(math.log(3), math.log(3), 0.5)
        assert float(v) == pytest.approx(math.log(3), abs=1e-12)

    def test_zero_context_reduces_to_scaled_ce(self):
        v = losses.contextual_classification_loss(1.25, 0.0, 0.6)
        assert float(v) == pytest.approx(0.75, abs=1e-12)

    def test_hand_value(self):
        ce = math.log(3)
        cce = (math.log(1 + math.exp(-1)) + math.log(1 + math.e)) / 2
        v = losses.contextual_classification_loss(ce, cce, 0.6)
        assert float(v) == pytest.approx(0.6 * ce + 0.4 * cce, abs=1e-9)
        assert float(v) == pytest.approx(0.9845, abs=5e-5)

    def test_rejects_bad_weight(self):
        with pytest.raises(ValueError, match="mix weight"):
            losses.contextual_classification_loss(1.0, 1.0, 1.0)


class TestMse:
    def test_exact_match(self):
        assert float(losses.mse(0.4, 0.4)) == 0.0

    def test_opposite_ends(self):
        assert float(losses.mse(1.0, -1.0)) == 4.0

    def test_batch_mean(self):
        v = losses.mse(T([0.5, -0.3]), T([0.2, 0.1]))
        assert float(v) == pytest.approx(0.125, abs=1e-12)

    def test_input_gradients(self):
        pred = T([0.3]).requires_grad_()
        check_input_gradients(lambda: losses.mse(0.9, pred[0]), [pred])


class TestContextualMse:
    def test_exact_contexts(self):
        assert float(losses.contextual_mse(T([0.7, 0.7]), 0.7)) == 0.0

    def test_single_unit_error(self):
        assert float(losses.contextual_mse(T([0.0]), 1.0)) == 1.0

    def test_hand_value(self):
        v = losses.contextual_mse(T([0.2, 0.9]), 0.5)
        assert float(v) == pytest.approx(0.125, abs=1e-12)

    def test_empty_context_contributes_zero(self):
        assert float(losses.contextual_mse(torch.zeros(0, dtype=torch.float64), 0.3)) == 0.0

    def test_input_gradients(self):
        preds = T([0.1, -0.4, 0.8]).requires_grad_()
        check_input_gradients(lambda: losses.contextual_mse(preds, 0.25), [preds])


class TestContextualRegressionLoss:
    def test_equal_terms(self):
        assert float(losses.contextual_regression_loss(0.125, 0.125, 0.3)) == pytest.approx(
            0.125, abs=1e-12
        )

    def test_zero_context(self):
        assert float(losses.contextual_regression_loss(0.4, 0.0, 0.5)) == pytest.approx(
            0.2, abs=1e-12
        )

    def test_rejects_bad_weight(self):
        with pytest.raises(ValueError, match="mix weight"):
            losses.contextual_regression_loss(0.1, 0.1, 0.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-30, 30), min_size=3, max_size=3),
        min_size=2,
        max_size=6,
    ),
    st.lists(st.floats(-30, 30), min_size=3, max_size=3),
)
def test_contrastive_nonnegative_and_finite(cands, anchor):
    value = float(losses.contrastive_nll(T(anchor), T(cands)))
    assert value >= -1e-12
    assert math.isfinite(value)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=2, max_size=6),
    st.integers(min_value=0, max_value=1),
)
def test_cross_entropy_nonnegative_and_finite(logits, y):
    value = float(losses.cross_entropy(T(logits), y))
    assert value >= -1e-12
    assert math.isfinite(value)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0, 20),
    st.floats(0, 20),
    st.floats(0.01, 0.99),
)
def test_combiners_stay_between_inputs(a, b, lam):
    for combine in (
        losses.robust_ua_loss,
        losses.contextual_classification_loss,
        losses.contextual_regression_loss,
    ):
        value = float(combine(a, b, lam))
        assert min(a, b) - 1e-12 <= value <= max(a, b) + 1e-12
