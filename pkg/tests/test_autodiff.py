import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvcnn.autodiff import (
    OP_RULES,
    Parameter,
    adagrad_step,
    affine,
    dropout_mask,
    finite_difference_check,
    l2_regularize,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
    tanh_map,
)
from mvcnn.errors import NonDeterministicError, NonFiniteError, ShapeError


class TestTanh:
    def test_zero(self):
        np.testing.assert_array_equal(tanh_map([0.0, 0.0]), [0.0, 0.0])

    def test_saturation(self):
        assert abs(tanh_map([1e9])[0] - 1.0) < 1e-12

    def test_reference_value(self):
        assert tanh_map([1.0])[0] == pytest.approx(math.tanh(1.0), abs=1e-15)
        assert tanh_map([1.0])[0] == pytest.approx(0.761594, abs=1e-6)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_input(self, bad):
        with pytest.raises(NonFiniteError):
            tanh_map([0.0, bad])


class TestAffine:
    def test_identity(self):
        np.testing.assert_array_equal(affine(np.eye(2), [3, 4], [0, 0]), [3, 4])

    def test_hand_arithmetic(self):
        np.testing.assert_array_equal(affine([[1, 1]], [2, 3], [1]), [6])

    def test_zero_map(self):
        np.testing.assert_array_equal(affine(np.zeros((1, 3)), [7, 8, 9], [5]), [5])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            affine(np.eye(2), [1, 2, 3], [0, 0])


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, probs = softmax_cross_entropy(np.full(5, 0.3), 2)
        assert loss == pytest.approx(math.log(5), abs=1e-12)
        np.testing.assert_allclose(probs, 0.2)

    def test_saturated_correct(self):
        loss, _ = softmax_cross_entropy(np.array([30.0, -30.0]), 0)
        assert abs(loss) < 1e-12

    def test_hand_value(self):
        loss, _ = softmax_cross_entropy(np.array([1.0, 0.0]), 1)
        assert loss == pytest.approx(math.log(1 + math.e), abs=1e-12)
        assert loss == pytest.approx(1.31326, abs=1e-5)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros(3), 3)

    def test_backward_is_probs_minus_onehot(self):
        _, p = softmax_cross_entropy(np.array([0.5, -1.0, 2.0]), 2)
        np.testing.assert_allclose(softmax_cross_entropy_backward(p, 2), p - [0, 0, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
    def test_probs_normalized(self, logits):
        _, p = softmax_cross_entropy(np.array(logits), 0)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all((p >= 0) & (p <= 1))

    def test_gradient_check(self, rng):
        z = Parameter(rng.normal(size=6))

        def loss_fn():
            loss, p = softmax_cross_entropy(z.value, 4)
            z.grad += softmax_cross_entropy_backward(p, 4)
            return loss

        assert finite_difference_check(loss_fn, [z], max_coords=6) < 1e-6


class TestDropout:
    def test_keep_all(self, rng):
        np.testing.assert_array_equal(dropout_mask((4, 5), 1.0, rng), np.ones((4, 5)))

    def test_law_of_large_numbers(self, rng):
        m = dropout_mask(10 ** 6, 0.8, rng)
        assert set(np.unique(m)) <= {0.0, 1.25}
        assert abs(m.mean() - 1.0) < 0.01

    def test_eval_mode(self, rng):
        np.testing.assert_array_equal(dropout_mask(7, 0.3, rng, train=False), np.ones(7))

    @pytest.mark.parametrize("kp", [0.0, -0.1, 1.5])
    def test_bad_keep_prob(self, rng, kp):
        with pytest.raises(ValueError):
            dropout_mask(3, kp, rng)


class TestAdagrad:
    def test_hand_arithmetic(self):
        p = Parameter(np.array([1.0]))
        p.grad[:] = 0.5
        adagrad_step(p, lr=0.01, eps=0.0)
        assert p.accum[0] == pytest.approx(0.25)
        assert p.value[0] == pytest.approx(0.99)
        assert p.grad[0] == 0.0

    def test_zero_gradient(self):
        p = Parameter(np.array([1.0, -2.0]), accum=np.array([0.3, 0.0]))
        adagrad_step(p, lr=0.01)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        np.testing.assert_array_equal(p.accum, [0.3, 0.0])

    def test_two_steps(self):
        p = Parameter(np.array([0.0]))
        p.grad[:] = 1.0
        adagrad_step(p, 0.01, eps=0.0)
        assert p.value[0] == pytest.approx(-0.01)
        p.grad[:] = 1.0
        adagrad_step(p, 0.01, eps=0.0)
        assert p.value[0] == pytest.approx(-0.01 - 0.01 / math.sqrt(2))

    def test_non_finite_gradient(self):
        p = Parameter(np.zeros(2))
        p.grad[0] = np.nan
        with pytest.raises(NonFiniteError):
            adagrad_step(p, 0.01)

    def test_row_sparse_matches_dense(self, rng):
        a = Parameter(rng.normal(size=(6, 3)))
        b = Parameter(a.value.copy())
        for _ in range(3):
            g = np.zeros((6, 3))
            g[[1, 4]] = rng.normal(size=(2, 3))
            a.grad[:] = g
            b.grad[:] = g
            adagrad_step(a, 0.1)
            adagrad_step(b, 0.1, rows=[4, 1, 1])
        np.testing.assert_array_equal(a.value, b.value)
        np.testing.assert_array_equal(a.accum, b.accum)

    def test_accumulator_monotone(self, rng):
        p = Parameter(rng.normal(size=10))
        prev = p.accum.copy()
        for _ in range(20):
            p.grad[:] = rng.normal(size=10)
            adagrad_step(p, 0.05)
            assert np.all(p.accum >= prev)
            prev = p.accum.copy()


class TestL2:
    def test_zero_lambda(self):
        p = Parameter(np.array([3.0]))
        assert l2_regularize([p], 0.0) == 0.0
        assert p.grad[0] == 0.0

    def test_hand_value(self):
        p = Parameter(np.array([2.0]))
        assert l2_regularize([p], 0.5) == pytest.approx(1.0)
        assert p.grad[0] == pytest.approx(1.0)

    def test_zero_params(self):
        assert l2_regularize([Parameter(np.zeros((3, 2)))], 5e-3) == 0.0

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            l2_regularize([], -1.0)


class TestFiniteDifferenceCheck:
    def test_quadratic(self):
        x = Parameter(np.array([3.0]))

        def loss_fn():
            x.grad += x.value
            return 0.5 * float(x.value[0] ** 2)

        assert finite_difference_check(loss_fn, [x]) < 1e-9

    def test_sign_flip_detected(self):
        x = Parameter(np.array([3.0]))

        def loss_fn():
            x.grad -= x.value
            return 0.5 * float(x.value[0] ** 2)

        assert finite_difference_check(loss_fn, [x]) == pytest.approx(2.0, abs=1e-6)

    def test_nondeterminism_detected(self):
        x = Parameter(np.array([1.0]))
        calls = iter(range(100))

        def loss_fn():
            return float(next(calls))

        with pytest.raises(NonDeterministicError):
            finite_difference_check(loss_fn, [x])


def _check_rule(name, inputs, rng):
    rule = OP_RULES[name]
    params = [Parameter(np.array(x, dtype=float)) for x in inputs]
    w = rng.normal(size=np.shape(rule.forward(*inputs)))

    def loss_fn():
        vals = [p.value for p in params]
        y = rule.forward(*vals)
        grads = rule.backward(vals, y, w)
        for p, g in zip(params, grads):
            p.grad += g
        return float(np.sum(w * y))

    # the dropout mask is a constant input, not a differentiable one
    check = params[:1] if name == "dropout_apply" else params
    return finite_difference_check(loss_fn, check, rng=rng)


@pytest.mark.parametrize("seed", range(20))
def test_op_rules_pass_gradient_check(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 6, size=2)
    cases = {
        "tanh": [rng.normal(size=(m, n))],
        "affine": [rng.normal(size=(m, n)), rng.normal(size=n), rng.normal(size=m)],
        "dropout_apply": [rng.normal(size=n), dropout_mask(n, 0.7, rng)],
    }
    for name, inputs in cases.items():
        assert _check_rule(name, inputs, rng) < 1e-4, name


class TestFivePointStencil:
    def test_cubic_is_exact(self):
        from mvcnn.autodiff import Parameter, finite_difference_check

        p = Parameter(np.array([1.5, -0.7]))

        def loss():
            p.grad += 3 * p.value ** 2
            return float(np.sum(p.value ** 3))

        assert finite_difference_check(loss, [p], eps=1e-2, order=4) < 1e-10

    def test_rejects_other_orders(self):
        from mvcnn.autodiff import Parameter, finite_difference_check

        with pytest.raises(ValueError):
            finite_difference_check(lambda: 0.0, [Parameter(np.zeros(1))], order=3)


class TestSmoothRetries:
    def _step_loss(self, p, jump_at):
        def loss():
            p.grad += 1.0
            x = float(p.value[0])
            return x + (10.0 if x > jump_at else 0.0)
        return loss

    def test_jump_inside_stencil_is_retried(self):
        from mvcnn.autodiff import Parameter, finite_difference_report

        p = Parameter(np.array([0.0]))
        loss = self._step_loss(p, 1.5e-4)
        plain = finite_difference_report(loss, [p], eps=1e-4, order=4)
        assert plain.max_rel_error > 0.5
        fixed = finite_difference_report(loss, [p], eps=1e-4, order=4, smooth_retries=3)
        assert fixed.max_rel_error < 1e-9 and fixed.skipped == 0

    def test_jump_at_point_is_skipped(self):
        from mvcnn.autodiff import Parameter, finite_difference_report

        p = Parameter(np.array([0.0]))
        rep = finite_difference_report(self._step_loss(p, 0.0), [p], eps=1e-4, order=4,
                                       smooth_retries=2)
        assert rep.skipped == 1 and rep.probed == 0

    def test_needs_order_four(self):
        from mvcnn.autodiff import Parameter, finite_difference_report

        with pytest.raises(ValueError):
            finite_difference_report(lambda: 0.0, [Parameter(np.zeros(1))], smooth_retries=1)

    def test_value_fn_must_agree(self):
        from mvcnn.autodiff import Parameter, finite_difference_check

        p = Parameter(np.array([1.0]))

        def loss():
            p.grad += 2 * p.value
            return float(p.value[0] ** 2)

        with pytest.raises(ValueError):
            finite_difference_check(loss, [p], value_fn=lambda: 5.0)
