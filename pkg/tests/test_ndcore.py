import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hsipatch.exceptions import ConfigurationError, InputError
from hsipatch.ndcore import (
    Adam,
    AdamState,
    DenseLayer,
    StepLrSchedule,
    adam_step,
    bce_with_logits,
    compare_gradient,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    glorot_uniform,
    grad_check,
    l2_penalty,
    mse_loss,
    relative_error,
    relu,
    relu_backward,
    rng_stream,
    sigmoid,
    softplus,
    step_lr,
)


def layer(w, b):
    return DenseLayer(np.array(w, dtype=float), np.array(b, dtype=float))


class TestDense:
    def test_identity(self):
        out = dense_forward(np.array([[1.0, 2.0]]), layer(np.eye(2), [0, 0]))
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_affine(self):
        out = dense_forward(np.array([[1.0, 1.0]]), layer([[2], [3]], [1]))
        np.testing.assert_array_equal(out, [[6.0]])

    def test_zero_input_passes_bias(self, rng):
        out = dense_forward(np.zeros((1, 3)), layer(rng.normal(size=(3, 1)), [5]))
        np.testing.assert_array_equal(out, [[5.0]])

    def test_dimension_mismatch_reports_shapes(self):
        with pytest.raises(ConfigurationError, match=r"\(1, 3\).*\(2, 2\)"):
            dense_forward(np.zeros((1, 3)), layer(np.eye(2), [0, 0]))

    def test_bias_length_checked(self):
        with pytest.raises(ConfigurationError):
            layer(np.eye(2), [0, 0, 0])

    def test_backward_zero(self, rng):
        lay = glorot_uniform(3, 4, rng)
        gi, gw, gb = dense_backward(np.zeros((2, 4)), rng.normal(size=(2, 3)), lay)
        assert not gi.any() and not gw.any() and not gb.any()

    def test_backward_scalar(self):
        gi, gw, gb = dense_backward(np.array([[1.0]]), np.array([[2.0]]), layer([[3]], [0]))
        assert gw.tolist() == [[2.0]] and gi.tolist() == [[3.0]] and gb.tolist() == [1.0]

    def test_backward_shape_mismatch(self, rng):
        lay = glorot_uniform(3, 4, rng)
        with pytest.raises(ConfigurationError):
            dense_backward(np.zeros((2, 5)), np.zeros((2, 3)), lay)

    def test_backward_matches_finite_differences(self, rng):
        lay = glorot_uniform(4, 5, rng)
        lay.bias[:] = rng.normal(size=5)
        x = rng.normal(size=(3, 4))
        proj = rng.normal(size=(3, 5))

        def loss():
            return float(np.sum(proj * dense_forward(x, lay)))

        gi, gw, gb = dense_backward(proj, x, lay)
        assert compare_gradient(gw, lambda _: loss(), lay.weights) <= 1e-6
        assert compare_gradient(gb, lambda _: loss(), lay.bias) <= 1e-6
        assert compare_gradient(gi, lambda _: loss(), x) <= 1e-6

    def test_glorot_limits_and_zero_bias(self, rng):
        lay = glorot_uniform(30, 20, rng)
        limit = math.sqrt(6.0 / 50)
        assert np.all(np.abs(lay.weights) <= limit)
        assert not lay.bias.any()
        assert lay.n_params == 30 * 20 + 20


class TestRelu:
    def test_values(self):
        assert relu(np.array(-1.0)) == 0.0
        assert relu(np.array(3.5)) == 3.5

    def test_backward(self):
        np.testing.assert_array_equal(relu_backward(np.ones(2), np.array([2.0, -2.0])), [1, 0])


class TestSigmoid:
    def test_far_negative_is_finite(self):
        value = sigmoid(-745.0)
        assert math.isfinite(value) and value >= 0.0
        # closed form in the tail: sigmoid(x) ~ exp(x)
        assert value == pytest.approx(math.exp(-745.0), rel=1e-12, abs=0)

    def test_far_positive(self):
        assert sigmoid(1000.0) == 1.0
        assert sigmoid(0.0) == 0.5

    @given(st.floats(-30, 30))
    def test_matches_reference(self, x):
        reference = 1.0 / (1.0 + math.exp(-x))
        assert sigmoid(x) == pytest.approx(reference, rel=1e-12)

    def test_array_no_warnings(self):
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


class TestDropout:
    def test_rate_zero_is_identity(self, rng):
        x = rng.normal(size=(4, 5))
        out, mask = dropout(x, 0.0, True, rng)
        np.testing.assert_array_equal(out, x)
        assert np.all(mask == 1)

    def test_eval_mode_is_identity(self, rng):
        x = rng.normal(size=(4, 5))
        out, _ = dropout(x, 0.6, False, rng)
        np.testing.assert_array_equal(out, x)

    def test_expectation(self):
        out, mask = dropout(np.ones((100_000, 1)), 0.5, True, rng_stream(1, "t"))
        assert abs(out.mean() - 1.0) < 0.01
        assert set(np.unique(mask)) <= {0.0, 1.0}

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_rate_out_of_range(self, rng, rate):
        with pytest.raises(ConfigurationError):
            dropout(np.ones((2, 2)), rate, True, rng)

    def test_backward_uses_mask(self, rng):
        x = rng.normal(size=(3, 4))
        out, mask = dropout(x, 0.25, True, rng)
        grad = dropout_backward(np.ones_like(x), mask, 0.25)
        np.testing.assert_array_equal(grad, mask / 0.75)
        np.testing.assert_allclose(out, x * grad)


class TestLosses:
    def test_mse_zero(self, rng):
        p = rng.normal(size=(3, 2))
        assert mse_loss(p, p.copy())[0] == 0.0

    def test_mse_value(self):
        loss, grad = mse_loss(np.array([[1.0, 3.0]]), np.array([[1.0, 1.0]]))
        assert loss == 2.0
        np.testing.assert_array_equal(grad, [[0.0, 2.0]])

    def test_mse_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_mse_gradcheck(self, rng):
        target = rng.normal(size=(3, 7))
        pred = rng.normal(size=(3, 7))
        assert grad_check(lambda p: mse_loss(p, target), pred) <= 1e-6

    @pytest.mark.parametrize("y,pw,expected", [(1, 1.0, 0.693147), (0, 1.0, 0.693147),
                                               (1, 2.0, 1.386294)])
    def test_bce_values(self, y, pw, expected):
        loss, _ = bce_with_logits(np.array([[0.0]]), np.array([[float(y)]]), [pw])
        assert loss == pytest.approx(expected, abs=1e-6)

    def test_bce_matches_log_sigmoid(self, rng):
        x = rng.uniform(-20, 20, size=(50, 4))
        y = rng.integers(0, 2, size=(50, 4)).astype(float)
        # log of sigmoid evaluated directly; 1 - sigmoid(x) is written as sigmoid(-x)
        log_s = np.log(1.0 / (1.0 + np.exp(-x)))
        log_not_s = np.log(1.0 / (1.0 + np.exp(x)))
        reference = np.mean(-(y * log_s + (1 - y) * log_not_s))
        assert bce_with_logits(x, y)[0] == pytest.approx(reference, rel=1e-12, abs=1e-12)

    def test_bce_huge_logits_are_finite(self):
        x = np.array([[1000.0, -1000.0]])
        loss, grad = bce_with_logits(x, np.array([[0.0, 1.0]]))
        assert loss == pytest.approx(1000.0)
        assert np.all(np.isfinite(grad))

    def test_bce_rejects_non_binary_targets(self):
        with pytest.raises(InputError):
            bce_with_logits(np.zeros((1, 2)), np.array([[0.5, 1.0]]))

    def test_bce_sample_weight(self):
        x = np.zeros((2, 1))
        y = np.ones((2, 1))
        loss, _ = bce_with_logits(x, y, sample_weight=np.array([[1.0], [0.0]]))
        assert loss == pytest.approx(math.log(2) / 2)

    def test_bce_gradcheck_with_pos_weight(self, rng):
        y = rng.integers(0, 2, size=(4, 3)).astype(float)
        x = rng.normal(size=(4, 3))
        pw = np.array([1.0, 2.5, 0.5])
        assert grad_check(lambda p: bce_with_logits(p, y, pw), x) <= 1e-6

    def test_ce_uniform(self):
        assert cross_entropy(np.zeros((3, 4)), np.array([0, 1, 3]))[0] == pytest.approx(
            1.386294, abs=1e-6)
        assert cross_entropy(np.ones((2, 7)), np.array([0, 6]))[0] == pytest.approx(math.log(7))

    def test_ce_confident(self):
        logits = np.array([[50.0, 0.0, 0.0]])
        assert cross_entropy(logits, np.array([0]))[0] < 1e-20

    def test_ce_out_of_range(self):
        with pytest.raises(InputError):
            cross_entropy(np.zeros((1, 3)), np.array([3]))

    def test_ce_gradcheck(self, rng):
        idx = np.array([2, 0, 1, 2])
        assert grad_check(lambda p: cross_entropy(p, idx), rng.normal(size=(4, 3))) <= 1e-6

    def test_l2(self, rng):
        assert l2_penalty([layer([[3, 4]], [7, 7])], 0.1)[0] == pytest.approx(2.5)
        assert l2_penalty([layer(np.zeros((2, 2)), [1, 1])], 0.5)[0] == 0.0
        assert l2_penalty([glorot_uniform(3, 3, rng)], 0.0)[0] == 0.0
        with pytest.raises(ConfigurationError):
            l2_penalty([], -1.0)

    def test_l2_gradient(self, rng):
        lay = glorot_uniform(3, 4, rng)
        _, grads = l2_penalty([lay], 0.3)
        err = compare_gradient(grads[0], lambda _: l2_penalty([lay], 0.3)[0], lay.weights)
        assert err <= 1e-9

    def test_softplus_stable(self):
        np.testing.assert_allclose(softplus(np.array([-800.0, 0.0, 800.0])),
                                   [0.0, math.log(2), 800.0])


class TestAdam:
    def test_zero_grad_leaves_parameters(self, rng):
        lay = glorot_uniform(3, 2, rng)
        before = lay.weights.copy()
        adam_step(lay, np.zeros((3, 2)), np.zeros(2), AdamState.zeros_like(lay), 1e-2)
        np.testing.assert_array_equal(lay.weights, before)

    def test_first_step_magnitude(self, rng):
        lay = glorot_uniform(3, 2, rng)
        before = lay.weights.copy()
        g = rng.normal(size=(3, 2))
        adam_step(lay, g, np.ones(2), AdamState.zeros_like(lay), 0.01)
        np.testing.assert_allclose(lay.weights - before, -0.01 * np.sign(g), rtol=1e-5)

    def test_two_steps_monotone(self, rng):
        lay = glorot_uniform(2, 2, rng)
        g = rng.normal(size=(2, 2))
        state = AdamState.zeros_like(lay)
        w0 = lay.weights.copy()
        adam_step(lay, g, np.zeros(2), state, 0.01)
        w1 = lay.weights.copy()
        adam_step(lay, g, np.zeros(2), state, 0.01)
        assert np.all(np.sign(w1 - w0) == -np.sign(g))
        assert np.all(np.sign(lay.weights - w1) == -np.sign(g))
        assert state.step_count == 2

    def test_matches_reference_formula(self, rng):
        lay = glorot_uniform(2, 3, rng)
        w = lay.weights.copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        state = AdamState.zeros_like(lay)
        for t in range(1, 6):
            g = rng.normal(size=w.shape)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            adam_step(lay, g, np.zeros(3), state, 0.05)
        np.testing.assert_allclose(lay.weights, w, rtol=1e-12, atol=1e-15)

    def test_shape_mismatch(self, rng):
        lay = glorot_uniform(3, 2, rng)
        with pytest.raises(ConfigurationError):
            adam_step(lay, np.zeros((2, 3)), np.zeros(2), AdamState.zeros_like(lay), 0.1)

    def test_frozen_layers_skipped(self, rng):
        a, b = glorot_uniform(2, 2, rng), glorot_uniform(2, 2, rng)
        b.trainable = False
        frozen = b.weights.copy()
        Adam([a, b]).step([(np.ones((2, 2)), np.ones(2))] * 2, 0.1)
        np.testing.assert_array_equal(b.weights, frozen)
        with pytest.raises(ConfigurationError):
            adam_step(b, np.ones((2, 2)), np.ones(2), AdamState.zeros_like(b), 0.1)


class TestStepLr:
    @pytest.mark.parametrize("epoch,expected", [(0, 1e-2), (14, 1e-2), (15, 9e-3), (30, 8.1e-3)])
    def test_values(self, epoch, expected):
        assert step_lr(StepLrSchedule(1e-2, 15, 0.9), epoch) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("args", [(1e-2, 0, 0.9), (1e-2, 5, 0.0), (1e-2, 5, 1.5), (0, 5, 0.9)])
    def test_invalid(self, args):
        with pytest.raises(ConfigurationError):
            StepLrSchedule(*args)

    def test_negative_epoch(self):
        with pytest.raises(ConfigurationError):
            step_lr(StepLrSchedule(1e-2, 15), -1)


class TestGradCheck:
    def test_linear_exact(self, rng):
        a = rng.normal(size=(3, 4))
        assert grad_check(lambda p: (float(np.sum(a * p)), a), rng.normal(size=(3, 4))) <= 1e-9

    def test_detects_corrupted_gradient(self, rng):
        target = rng.normal(size=(2, 5))

        def corrupted(p):
            loss, grad = mse_loss(p, target)
            grad = grad.copy()
            grad.flat[3] *= 1.01
            return loss, grad

        assert grad_check(corrupted, rng.normal(size=(2, 5))) > 1e-6

    def test_relative_error_definition(self):
        assert relative_error(1.0, 1.0) == 0.0
        assert relative_error(2.0, 1.0) == pytest.approx(0.5)
        assert relative_error(0.0, 0.0) == 0.0
        # entries tiny next to the array's scale are judged in absolute units of that scale
        assert relative_error(1e-6, 2e-6, scale=1.0) == pytest.approx(1e-3)

    def test_kink_aware_region(self):
        # |x| has a kink at 0; region tracking keeps both stencils on one side
        point = np.array([1e-4, -2e-4])

        def fn(p):
            return float(np.sum(np.abs(p))), np.sign(p)

        region = lambda p: tuple(p > 0)  # noqa: E731
        assert grad_check(fn, point, epsilon=1e-2, region_fn=region) <= 1e-9
        assert grad_check(fn, point, epsilon=1e-2) > 1e-2

    def test_indices_subset(self, rng):
        calls = []

        def fn(p):
            calls.append(1)
            return float(np.sum(p**2)), 2 * p

        grad_check(fn, rng.normal(size=10), indices=[0, 5])
        assert len(calls) < 10

    def test_requires_in_place_array(self):
        with pytest.raises(ValueError):
            compare_gradient(np.zeros(8), lambda p: 0.0, np.zeros((4, 4))[:, :2])

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_smooth_function_property(self, seed):
        r = np.random.default_rng(seed)
        a = r.normal(size=(3, 3))
        x = r.normal(size=(2, 3))

        def fn(p):
            z = p @ a
            return float(np.sum(np.tanh(z))), (1 - np.tanh(z) ** 2) @ a.T

        assert grad_check(fn, x) <= 1e-6


class TestRng:
    def test_streams_independent_and_reproducible(self):
        a1 = rng_stream(7, "a").random(5)
        a2 = rng_stream(7, "a").random(5)
        b = rng_stream(7, "b").random(5)
        np.testing.assert_array_equal(a1, a2)
        assert not np.array_equal(a1, b)

    def test_seed_range(self):
        rng_stream(2**64 - 1, "x")
        with pytest.raises(ValueError):
            rng_stream(2**64, "x")
        with pytest.raises(ValueError):
            rng_stream(-1, "x")
