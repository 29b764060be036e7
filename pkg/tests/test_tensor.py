"""Dense-tensor engine: forward semantics, tape gradients, SGD, grad_check."""

import numpy as np
import pytest

from gazesnn import tensor as tn
from gazesnn.errors import ContractError, DimensionError, TrainingAbort
from gazesnn.tensor import Tensor, sgd_step


def rng_for(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def depthwise_oracle(x, kernel, stride=1, padding=0):
    c, h, w = x.shape
    kc, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((c, h_out, w_out))
    for ch in range(c):
        for i in range(h_out):
            for j in range(w_out):
                for u in range(kh):
                    for v in range(kw):
                        out[ch, i, j] += xp[ch, i * stride + u, j * stride + v] * kernel[ch, u, v]
    return out


def pointwise_oracle(x, kernel):
    c, h, w = x.shape
    c_out = kernel.shape[0]
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    out[o, i, j] += kernel[o, ch] * x[ch, i, j]
    return out


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


class TestMatmul:
    def test_identity(self):
        a = tn.constant(np.eye(2))
        b = tn.constant([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(tn.matmul(a, b).data, [[3.0, 4.0], [5.0, 6.0]])

    def test_hand_arithmetic(self):
        out = tn.matmul(tn.constant([[1.0, 2.0]]), tn.constant([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_against_triple_loop_oracle(self):
        rng = rng_for(7)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        got = tn.matmul(tn.constant(a), tn.constant(b)).data
        assert np.max(np.abs(got - matmul_oracle(a, b))) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            tn.matmul(tn.constant(np.ones((2, 3))), tn.constant(np.ones((2, 3))))


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------


class TestConv2d:
    def test_depthwise_delta_kernel_is_identity(self):
        rng = rng_for(0)
        x = rng.normal(size=(3, 5, 5))
        delta = np.zeros((3, 3, 3))
        delta[:, 1, 1] = 1.0
        out = tn.conv2d(tn.constant(x), tn.constant(delta), "depthwise", padding=1)
        np.testing.assert_allclose(out.data, x, atol=0)

    def test_pointwise_sums_channels(self):
        x = np.stack([np.full((4, 4), 2.0), np.full((4, 4), 3.0)])
        k = np.array([[1.0, 1.0]])
        out = tn.conv2d(tn.constant(x), tn.constant(k), "pointwise")
        np.testing.assert_array_equal(out.data, np.full((1, 4, 4), 5.0))

    def test_depthwise_against_naive_loop_oracle(self):
        rng = rng_for(3)
        x = rng.normal(size=(2, 6, 6))
        k = rng.normal(size=(2, 3, 3))
        got = tn.conv2d(tn.constant(x), tn.constant(k), "depthwise", padding=1).data
        assert np.max(np.abs(got - depthwise_oracle(x, k, padding=1))) < 1e-12

    def test_depthwise_stride_against_oracle(self):
        rng = rng_for(4)
        x = rng.normal(size=(2, 7, 7))
        k = rng.normal(size=(2, 3, 3))
        got = tn.conv2d(tn.constant(x), tn.constant(k), "depthwise", stride=2).data
        assert np.max(np.abs(got - depthwise_oracle(x, k, stride=2))) < 1e-12

    def test_pointwise_against_oracle(self):
        rng = rng_for(5)
        x = rng.normal(size=(3, 4, 4))
        k = rng.normal(size=(5, 3))
        got = tn.conv2d(tn.constant(x), tn.constant(k), "pointwise").data
        assert np.max(np.abs(got - pointwise_oracle(x, k))) < 1e-12

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(DimensionError, match="larger than padded input"):
            tn.conv2d(tn.constant(np.ones((1, 2, 2))), tn.constant(np.ones((1, 5, 5))),
                      "depthwise", padding=1)

    def test_unknown_mode(self):
        with pytest.raises(ContractError, match="unknown mode"):
            tn.conv2d(tn.constant(np.ones((1, 4, 4))), tn.constant(np.ones((1, 3, 3))), "full")


# ---------------------------------------------------------------------------
# batch norm
# ---------------------------------------------------------------------------


class TestBatchNorm:
    def test_constant_channel_zeroed(self):
        x = tn.constant(np.full((2, 4, 4), 3.5))
        out = tn.batch_norm(x, tn.bn_init(2), training=True)
        np.testing.assert_array_equal(out.data, np.zeros((2, 4, 4)))

    def test_degenerate_affine(self):
        rng = rng_for(1)
        bn = tn.bn_init(3)
        bn.gamma.data = np.zeros(3)
        bn.beta.data = np.full(3, 7.0)
        out = tn.batch_norm(tn.constant(rng.normal(size=(3, 5, 5))), bn, training=True)
        np.testing.assert_array_equal(out.data, np.full((3, 5, 5), 7.0))

    def test_training_moments(self):
        # wide input keeps epsilon's bias on the normalized variance < 1e-6
        rng = rng_for(2)
        x = tn.constant(rng.uniform(-10.0, 10.0, size=(4, 16, 16)))
        out = tn.batch_norm(x, tn.bn_init(4), training=True)
        assert np.max(np.abs(out.data.mean(axis=(1, 2)))) < 1e-10
        assert np.max(np.abs(out.data.var(axis=(1, 2)) - 1.0)) < 1e-6

    def test_running_stats_update_and_inference(self):
        rng = rng_for(3)
        bn = tn.bn_init(2)
        x = rng.normal(2.0, 3.0, size=(2, 8, 8))
        tn.batch_norm(tn.constant(x), bn, training=True)
        mean = x.mean(axis=(1, 2))
        var = x.var(axis=(1, 2))
        np.testing.assert_allclose(bn.running_mean, 0.1 * mean, rtol=1e-12)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * var, rtol=1e-12)
        out = tn.batch_norm(tn.constant(x), bn, training=False)
        expect = (x - bn.running_mean[:, None, None]) / np.sqrt(
            bn.running_var[:, None, None] + bn.eps
        )
        np.testing.assert_allclose(out.data, expect, rtol=1e-12)

    def test_gamma_length_mismatch(self):
        with pytest.raises(DimensionError):
            tn.batch_norm(tn.constant(np.ones((3, 2, 2))), tn.bn_init(4), training=True)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


class TestBackward:
    def test_linear_case(self):
        rng = rng_for(0)
        x = rng.normal(size=(4, 4))
        w = tn.parameter(rng.normal(size=(4, 4)))
        tn.backward(tn.sum_all(tn.mul(w, tn.constant(x))))
        np.testing.assert_array_equal(w.grad, x)

    def test_matmul_chain_matches_finite_differences(self):
        rng = rng_for(1)
        a = tn.parameter(rng.normal(size=(3, 4)))
        b = tn.parameter(rng.normal(size=(4, 2)))
        c = tn.parameter(rng.normal(size=(2, 3)))

        def closure():
            return tn.sum_all(tn.matmul(tn.matmul(a, b), c))

        report = tn.grad_check(closure, {"a": a, "b": b, "c": c}, tolerance=1e-4)
        assert report.passed, report.per_param

    def test_backward_twice_without_forward(self):
        w = tn.parameter([1.0, 2.0])
        loss = tn.sum_all(tn.mul(w, w))
        tn.backward(loss)
        with pytest.raises(ContractError, match="tape is empty"):
            tn.backward(loss)

    def test_backward_on_non_scalar(self):
        w = tn.parameter([1.0, 2.0])
        y = tn.mul(w, w)
        with pytest.raises(ContractError, match="scalar"):
            tn.backward(y)


# ---------------------------------------------------------------------------
# sgd
# ---------------------------------------------------------------------------


class TestSgd:
    def test_zero_learning_rate(self):
        p, v = sgd_step([np.array([1.0, 2.0])], [np.array([3.0, 4.0])], 0.0, 0.9)
        np.testing.assert_array_equal(p[0], [1.0, 2.0])

    def test_hand_arithmetic(self):
        p, _ = sgd_step([np.array([1.0])], [np.array([2.0])], 0.1, 0.0)
        np.testing.assert_allclose(p[0], [0.8], rtol=1e-15)

    def test_momentum_matches_scalar_recurrence(self):
        # oracle: v <- m*v + g, p <- p - lr*v, iterated twice by hand
        lr, m, g = 0.1, 0.9, 2.0
        v1 = m * 0.0 + g
        p1 = 1.0 - lr * v1
        v2 = m * v1 + g
        p2 = p1 - lr * v2
        p, v = sgd_step([np.array([1.0])], [np.array([g])], lr, m)
        p, v = sgd_step(p, [np.array([g])], lr, m, v)
        np.testing.assert_allclose(p[0], [p2], rtol=1e-15)
        np.testing.assert_allclose(v[0], [v2], rtol=1e-15)

    def test_nan_gradient_aborts(self):
        with pytest.raises(TrainingAbort, match="non-finite"):
            sgd_step([np.array([1.0])], [np.array([np.nan])], 0.1, 0.9)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            sgd_step([np.zeros(2)], [np.zeros(3)], 0.1, 0.0)


# ---------------------------------------------------------------------------
# grad_check
# ---------------------------------------------------------------------------


class TestGradCheck:
    def test_quadratic(self):
        w = tn.parameter(np.array([1.0, -2.0, 3.0]))
        report = tn.grad_check(lambda: tn.sum_all(tn.mul(w, w)), {"w": w}, tolerance=1e-6)
        assert report.passed
        assert report.max_rel_error < 1e-6

    def test_corrupted_gradient_rule_is_flagged(self):
        # negative control: an op that records 2.1*w instead of 2*w
        w = tn.parameter(np.array([0.5, 1.5]))

        def buggy_square():
            out = Tensor(w.data * w.data)

            def bwd():
                if out.grad is not None:
                    tn.accumulate_grad(w, 2.1 * w.data * out.grad)

            out.requires_grad = tn.record((w,), bwd)
            return tn.sum_all(out)

        report = tn.grad_check(buggy_square, {"w": w}, tolerance=1e-4)
        assert not report.passed
        assert report.failing() == ["w"]

    def test_conv_snn_block_loss(self):
        # composite check through spikes: needs the surrogate-smoothed path
        from gazesnn.blocks import ConvSnnBlock, conv_snn_block_forward
        from gazesnn.lif import LifParams, LifState, surrogate_relaxation

        rng = rng_for(11)
        block = ConvSnnBlock(
            depthwise=tn.parameter(rng.normal(0, 0.4, (2, 3, 3))),
            pointwise=tn.parameter(rng.normal(0, 0.4, (2, 2))),
            bn=tn.bn_init(2),
            lif=LifParams(),
        )
        x = tn.constant(rng.normal(0.6, 0.5, (2, 6, 6)))
        params = {"dw": block.depthwise, "pw": block.pointwise,
                  "gamma": block.bn.gamma, "beta": block.bn.beta}

        def closure():
            out, _, _ = conv_snn_block_forward(block, x, LifState.zeros(x.shape), training=True)
            return tn.sum_all(tn.mul(out, out))

        with surrogate_relaxation():
            report = tn.grad_check(closure, params, tolerance=1e-3)
        assert report.passed, report.per_param


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------


def build_op_closure(name, rng):
    """Random small inputs plus a scalar closure exercising one op."""

    def p(*shape):
        return tn.parameter(rng.normal(size=shape))

    if name == "add":
        a, b = p(3, 2), p(3, 2)
        return {"a": a, "b": b}, lambda: tn.sum_all(tn.mul(tn.add(a, b), tn.add(a, b)))
    if name == "sub":
        a, b = p(3, 2), p(3, 2)
        return {"a": a, "b": b}, lambda: tn.sum_all(tn.mul(tn.sub(a, b), tn.sub(a, b)))
    if name == "mul":
        a, b = p(2, 3), p(2, 3)
        return {"a": a, "b": b}, lambda: tn.sum_all(tn.mul(tn.mul(a, b), b))
    if name == "scale":
        a = p(4)
        return {"a": a}, lambda: tn.sum_all(tn.mul(tn.scale(a, 1.7), tn.scale(a, 1.7)))
    if name == "add_scalar":
        a = p(4)
        return {"a": a}, lambda: tn.sum_all(tn.mul(tn.add_scalar(a, 0.3), a))
    if name == "add_bias":
        a, b = p(3, 2), p(1, 2)
        return {"a": a, "b": b}, lambda: tn.sum_all(tn.mul(tn.add_bias(a, b), tn.add_bias(a, b)))
    if name == "rowdiv":
        a = p(3, 4)
        d = tn.parameter(rng.uniform(1.0, 2.0, (3, 1)))
        return {"a": a, "d": d}, lambda: tn.sum_all(tn.mul(tn.rowdiv(a, d), a))
    if name == "axis_sum":
        a = p(3, 4)
        return {"a": a}, lambda: tn.sum_all(tn.mul(tn.axis_sum(a, 1), tn.axis_sum(a, 1)))
    if name == "reshape":
        a = p(2, 6)
        return {"a": a}, lambda: tn.sum_all(tn.mul(tn.reshape(a, (3, 4)), tn.reshape(a, (3, 4))))
    if name == "transpose":
        a = p(2, 3)
        return {"a": a}, lambda: tn.sum_all(tn.mul(tn.transpose(a), tn.transpose(a)))
    if name == "stack_index":
        a, b = p(2, 2), p(2, 2)
        return {"a": a, "b": b}, lambda: tn.sum_all(
            tn.mul(tn.index0(tn.stack0([a, b]), 1), tn.index0(tn.stack0([a, b]), 0)))
    if name == "matmul":
        a, b = p(2, 3), p(3, 2)
        return {"a": a, "b": b}, lambda: tn.sum_all(tn.mul(tn.matmul(a, b), tn.matmul(a, b)))
    if name == "conv_depthwise":
        k, x = p(2, 3, 3), p(2, 5, 5)
        return {"k": k, "x": x}, lambda: tn.sum_all(
            tn.mul(tn.conv2d(x, k, "depthwise", padding=1),
                   tn.conv2d(x, k, "depthwise", padding=1)))
    if name == "conv_pointwise":
        k, x = p(3, 2), p(2, 4, 4)
        return {"k": k, "x": x}, lambda: tn.sum_all(
            tn.mul(tn.conv2d(x, k, "pointwise"), tn.conv2d(x, k, "pointwise")))
    if name == "batch_norm":
        x = p(2, 4, 4)
        bn = tn.bn_init(2)
        return {"x": x, "gamma": bn.gamma, "beta": bn.beta}, lambda: tn.sum_all(
            tn.mul(tn.batch_norm(x, bn, True), tn.batch_norm(x, bn, True)))
    if name == "softmax_xent":
        z = p(4)
        return {"z": z}, lambda: tn.softmax_cross_entropy(z, 2)
    raise AssertionError(name)


OP_NAMES = ["add", "sub", "mul", "scale", "add_scalar", "add_bias", "rowdiv",
            "axis_sum", "reshape", "transpose", "stack_index", "matmul",
            "conv_depthwise", "conv_pointwise", "batch_norm", "softmax_xent"]


@pytest.mark.parametrize("name", OP_NAMES)
def test_gradients_match_finite_differences_100_trials(name):
    for trial in range(100):
        params, closure = build_op_closure(name, rng_for(1000 * OP_NAMES.index(name) + trial))
        report = tn.grad_check(closure, params, tolerance=1e-4)
        assert report.passed, f"{name} trial {trial}: {report.per_param}"


def test_operations_deterministic():
    def compute():
        rng = rng_for(99)
        a = tn.constant(rng.normal(size=(6, 6)))
        b = tn.constant(rng.normal(size=(6, 6)))
        x = tn.constant(rng.normal(size=(2, 8, 8)))
        k = tn.constant(rng.normal(size=(2, 3, 3)))
        bn = tn.bn_init(2)
        return (tn.matmul(a, b).data.tobytes()
                + tn.conv2d(x, k, "depthwise", padding=1).data.tobytes()
                + tn.batch_norm(x, bn, True).data.tobytes())

    assert compute() == compute()
