"""Unit tests for the hand-written layer forward/backward passes, Adam,
and the finite-difference gradient checker."""

import numpy as np
import pytest

from vgsr.errors import DimensionError, NumericalError, UsageError
from vgsr import nncore
from vgsr.nncore import (
    AdamConfig,
    Conv1D,
    Dense,
    GlobalMaxPool,
    MaxPool1D,
    Parameter,
    ReLU,
    ScalarProbe,
    Sigmoid,
    adam_step,
    conv1d_backward,
    conv1d_forward,
    dense,
    global_maxpool_time,
    grad_check,
    maxpool1d,
    relu,
    sigmoid,
)


def conv_oracle(x, kernels, bias, stride=1):
    """Direct triple-loop convolution used as an independent reference."""
    t, cin = x.shape
    k, _, f = kernels.shape
    t_out = (t - k) // stride + 1
    out = np.zeros((t_out, f))
    for ti in range(t_out):
        for fi in range(f):
            acc = bias[fi]
            for ki in range(k):
                for ci in range(cin):
                    acc += x[ti * stride + ki, ci] * kernels[ki, ci, fi]
            out[ti, fi] = acc
    return out


class TestConv1dForward:
    def test_identity_kernel_copies_channel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 3))
        kernels = np.zeros((1, 3, 1))
        kernels[0, 0, 0] = 1.0
        out = conv1d_forward(x, kernels, np.zeros(1))
        np.testing.assert_array_equal(out[:, 0], x[:, 0])

    def test_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(5, 2))
        kernels = rng.normal(size=(2, 2, 1))
        bias = rng.normal(size=1)
        out = conv1d_forward(x, kernels, bias)
        np.testing.assert_allclose(out, conv_oracle(x, kernels, bias), atol=1e-12)

    def test_zero_input_gives_bias(self):
        kernels = np.random.default_rng(2).normal(size=(3, 2, 4))
        bias = np.array([0.5, -1.0, 2.0, 0.0])
        out = conv1d_forward(np.zeros((7, 2)), kernels, bias)
        for row in out:
            np.testing.assert_array_equal(row, bias)

    @pytest.mark.parametrize("stride", [1, 2, 3])
    def test_stride_matches_oracle(self, stride):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(11, 3))
        kernels = rng.normal(size=(4, 3, 2))
        bias = rng.normal(size=2)
        out = conv1d_forward(x, kernels, bias, stride=stride)
        ref = conv_oracle(x, kernels, bias, stride=stride)
        assert out.shape[0] == (11 - 4) // stride + 1
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_shape_errors_name_axis(self):
        with pytest.raises(DimensionError, match="channel"):
            conv1d_forward(np.zeros((5, 3)), np.zeros((2, 2, 1)), np.zeros(1))
        with pytest.raises(DimensionError, match="time"):
            conv1d_forward(np.zeros((2, 2)), np.zeros((3, 2, 1)), np.zeros(1))
        with pytest.raises(DimensionError, match="bias"):
            conv1d_forward(np.zeros((5, 2)), np.zeros((2, 2, 3)), np.zeros(2))

    def test_linear_in_input_with_zero_bias(self):
        rng = np.random.default_rng(4)
        kernels = rng.normal(size=(3, 2, 4))
        bias = np.zeros(4)
        x, y = rng.normal(size=(8, 2)), rng.normal(size=(8, 2))
        a, b = 1.7, -0.3
        lhs = conv1d_forward(a * x + b * y, kernels, bias)
        rhs = a * conv1d_forward(x, kernels, bias) + b * conv1d_forward(y, kernels, bias)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestConv1dBackward:
    def test_bias_grad_is_upstream_sum(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 2))
        kernels = rng.normal(size=(2, 2, 3))
        up = rng.normal(size=(5, 3))
        _, _, db = conv1d_backward(up, x, kernels)
        np.testing.assert_allclose(db, up.sum(axis=0), atol=1e-12)

    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(6, 2))
        kernels = rng.normal(size=(2, 2, 3))
        dx, dk, db = conv1d_backward(np.zeros((5, 3)), x, kernels)
        assert not dx.any() and not dk.any() and not db.any()

    def test_missing_cache_is_usage_error(self):
        with pytest.raises(UsageError):
            conv1d_backward(np.zeros((5, 3)), None, np.zeros((2, 2, 3)))

    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_finite_differences(self, stride):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(9, 2))
        layer = Conv1D(3, 2, 4, stride=stride, rng=rng)
        probe = ScalarProbe([layer])
        report = grad_check(probe, x, h=1e-5)
        assert report.max_relative_error < 1e-6

    def test_input_grad_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(7, 3))
        kernels = rng.normal(size=(2, 3, 2))
        bias = rng.normal(size=2)
        up = np.ones((6, 2))
        dx, _, _ = conv1d_backward(up, x, kernels)
        h = 1e-5
        for i in [0, 5, 11, 20]:
            xp, xm = x.copy(), x.copy()
            xp.flat[i] += h
            xm.flat[i] -= h
            fd = (
                conv1d_forward(xp, kernels, bias).sum()
                - conv1d_forward(xm, kernels, bias).sum()
            ) / (2 * h)
            np.testing.assert_allclose(dx.flat[i], fd, rtol=1e-6, atol=1e-8)


class TestMaxPool:
    def test_constant_input(self):
        out, _ = maxpool1d(np.full((6, 2), 3.5), 3)
        np.testing.assert_array_equal(out, np.full((2, 2), 3.5))

    def test_hand_enumeration(self):
        x = np.array([[1.0], [3.0], [2.0], [5.0], [4.0], [0.0]])
        out, argmax = maxpool1d(x, 3)
        np.testing.assert_array_equal(out[:, 0], [3.0, 5.0])
        np.testing.assert_array_equal(argmax[:, 0], [1, 3])

    def test_width_one_is_identity(self):
        x = np.random.default_rng(9).normal(size=(5, 3))
        out, _ = maxpool1d(x, 1)
        np.testing.assert_array_equal(out, x)

    def test_remainder_dropped(self):
        x = np.arange(14.0).reshape(7, 2)
        out, _ = maxpool1d(x, 3)
        assert out.shape == (2, 2)

    def test_too_short_raises(self):
        with pytest.raises(DimensionError):
            maxpool1d(np.zeros((2, 1)), 3)

    def test_ties_break_earliest(self):
        x = np.array([[1.0], [1.0], [1.0]])
        _, argmax = maxpool1d(x, 3)
        assert argmax[0, 0] == 0

    def test_within_window_permutation_invariance(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(9, 4))
        out, _ = maxpool1d(x, 3)
        shuffled = x.copy()
        for w in range(3):
            block = shuffled[w * 3 : (w + 1) * 3]
            shuffled[w * 3 : (w + 1) * 3] = block[rng.permutation(3)]
        out2, _ = maxpool1d(shuffled, 3)
        np.testing.assert_array_equal(out, out2)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(9, 3))
        probe = ScalarProbe([Conv1D(2, 3, 2, rng=rng), MaxPool1D(2)])
        assert grad_check(probe, x).max_relative_error < 1e-6


class TestGlobalMaxPool:
    def test_single_frame(self):
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(global_maxpool_time(x), x)

    def test_appending_dominated_frames_is_noop(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(6, 3))
        extra = x.min(axis=0, keepdims=True) - 1.0
        ext = np.vstack([x, extra, extra])
        np.testing.assert_array_equal(global_maxpool_time(x), global_maxpool_time(ext))

    def test_matches_column_max_oracle(self):
        x = np.random.default_rng(13).normal(size=(20, 5))
        expected = np.array([[max(x[:, c]) for c in range(5)]])
        np.testing.assert_array_equal(global_maxpool_time(x), expected)

    def test_full_time_permutation_invariance(self):
        rng = np.random.default_rng(14)
        x = rng.normal(size=(10, 4))
        perm = rng.permutation(10)
        np.testing.assert_array_equal(global_maxpool_time(x), global_maxpool_time(x[perm]))

    def test_empty_time_axis_raises(self):
        with pytest.raises(DimensionError):
            global_maxpool_time(np.zeros((0, 3)))

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(15)
        x = rng.normal(size=(8, 2))
        probe = ScalarProbe([Conv1D(3, 2, 3, rng=rng), GlobalMaxPool()])
        assert grad_check(probe, x).max_relative_error < 1e-6


class TestDense:
    def test_identity_weights_copy_input(self):
        x = np.array([[1.0, 2.0, 3.0]])
        out = dense(x, np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(out, x)

    def test_hand_multiplication(self):
        x = np.array([[1.0, 2.0, 3.0]])
        w = np.array([[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]])
        b = np.array([0.5, -1.0])
        np.testing.assert_allclose(dense(x, w, b), [[14.5, 31.0]], atol=1e-12)

    def test_zero_input_gives_bias(self):
        w = np.random.default_rng(16).normal(size=(4, 2))
        b = np.array([7.0, -3.0])
        np.testing.assert_array_equal(dense(np.zeros((1, 4)), w, b), [b[0], b[1]] * np.ones((1, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            dense(np.zeros((1, 3)), np.zeros((4, 2)), np.zeros(2))

    def test_linear_in_input_with_zero_bias(self):
        rng = np.random.default_rng(17)
        w = rng.normal(size=(5, 3))
        x, y = rng.normal(size=(1, 5)), rng.normal(size=(1, 5))
        lhs = dense(2.0 * x - 0.5 * y, w, np.zeros(3))
        rhs = 2.0 * dense(x, w, np.zeros(3)) - 0.5 * dense(y, w, np.zeros(3))
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(1, 6))
        probe = ScalarProbe([Dense(6, 4, rng=rng), ReLU()])
        assert grad_check(probe, x).max_relative_error < 1e-6


class TestActivations:
    def test_relu_values(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_sigmoid_at_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_sigmoid_symmetry(self):
        x = np.random.default_rng(19).normal(scale=5.0, size=200)
        np.testing.assert_allclose(sigmoid(-x), 1.0 - sigmoid(x), atol=1e-12)

    def test_sigmoid_strictly_inside_unit_interval(self):
        x = np.array([-1e6, -50.0, 0.0, 50.0, 1e6])
        out = sigmoid(x)
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_sigmoid_backward_matches_finite_differences(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(1, 5))
        probe = ScalarProbe([Dense(5, 3, rng=rng), Sigmoid()])
        assert grad_check(probe, x).max_relative_error < 1e-6


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Parameter(np.array([1.0, -2.0]))
        adam_step([p], AdamConfig())
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        assert not p.adam_m.any() and not p.adam_v.any()
        assert p.step_count == 1

    def test_first_step_hand_oracle(self):
        p = Parameter(np.array([0.3]))
        p.grad[:] = 1.0
        adam_step([p], AdamConfig(learning_rate=0.001))
        # m_hat = v_hat = 1 after bias correction, so the update is
        # -lr / (1 + eps).
        expected = 0.3 - 0.001 / (1.0 + 1e-8)
        np.testing.assert_allclose(p.value, [expected], rtol=0, atol=1e-15)
        np.testing.assert_array_equal(p.grad, [1.0])

    def test_scalar_descent_on_quadratic(self):
        p = Parameter(np.array([1.0]))
        cfg = AdamConfig(learning_rate=0.05)
        for _ in range(200):
            p.grad[:] = 2.0 * p.value
            adam_step([p], cfg)
            p.zero_grad()
        assert abs(p.value[0]) < 0.1

    def test_nan_gradient_aborts_without_mutation(self):
        p = Parameter(np.array([1.0]))
        p.grad[:] = np.nan
        with pytest.raises(NumericalError):
            adam_step([p], AdamConfig())
        np.testing.assert_array_equal(p.value, [1.0])
        assert p.step_count == 0

    def test_inconsistent_step_count_rejected(self):
        a, b = Parameter(np.zeros(2)), Parameter(np.zeros(2))
        b.step_count = 3
        with pytest.raises(UsageError):
            adam_step([a, b], AdamConfig())

    def test_config_validation(self):
        with pytest.raises(UsageError):
            AdamConfig(learning_rate=-1.0)
        with pytest.raises(UsageError):
            AdamConfig(beta1=1.0)


class TestGradCheck:
    def test_empty_fragment_gives_empty_report(self):
        probe = ScalarProbe([ReLU()])
        report = grad_check(probe, np.ones((3, 2)))
        assert report.per_param == {}
        assert report.max_relative_error == 0.0

    def test_layer_stack(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(12, 3))
        probe = ScalarProbe(
            [Conv1D(3, 3, 4, rng=rng), ReLU(), MaxPool1D(2), Conv1D(2, 4, 2, rng=rng), GlobalMaxPool()]
        )
        assert grad_check(probe, x).max_relative_error < 1e-6

    def test_subsampled_entries(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(10, 2))
        probe = ScalarProbe([Conv1D(3, 2, 8, rng=rng)])
        report = grad_check(probe, x, entries_per_param=5)
        assert report.entries_checked == 10  # 5 kernel + 5 bias entries capped at size
        assert report.max_relative_error < 1e-6


class TestDeterminism:
    def test_forward_ops_bit_identical(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=(15, 3))
        kernels = rng.normal(size=(4, 3, 5))
        bias = rng.normal(size=5)
        a = conv1d_forward(x, kernels, bias)
        b = conv1d_forward(x.copy(), kernels.copy(), bias.copy())
        assert np.array_equal(a, b)
        assert np.array_equal(sigmoid(x), sigmoid(x.copy()))
        assert np.array_equal(maxpool1d(x, 3)[0], maxpool1d(x.copy(), 3)[0])

    def test_outputs_finite_on_finite_inputs(self):
        rng = np.random.default_rng(24)
        x = rng.normal(scale=100.0, size=(20, 4))
        layers = [Conv1D(5, 4, 6, rng=rng), ReLU(), MaxPool1D(2), GlobalMaxPool(), Sigmoid()]
        h = x
        for layer in layers:
            h = layer.forward(h)
            assert np.all(np.isfinite(h))
