"""Integrate-and-fire dynamics, spike binarity, and the surrogate gradient."""

import numpy as np
import pytest

from gazesnn import tensor as tn
from gazesnn.errors import ContractError, DimensionError
from gazesnn.lif import (LifParams, LifState, SpikeTrain, lif_sequence, lif_step,
                         spike, surrogate_grad, surrogate_relaxation)


def params(**kw):
    return LifParams(**kw)


def lif_reference(inputs, p):
    """Scalar transcription of the neuron update rule, one element at a time.

    Integrate, threshold, then hard-reset or leak-decay; written with plain
    floats to stay independent of the vectorized implementation.
    """
    t_steps = inputs.shape[0]
    flat = inputs.reshape(t_steps, -1)
    spikes = np.zeros_like(flat)
    membranes = np.zeros_like(flat)
    for j in range(flat.shape[1]):
        v_prev = 0.0
        for t in range(t_steps):
            v_s = v_prev + flat[t, j]
            s = 1.0 if v_s >= p.v_threshold else 0.0
            v_prev = s * p.v_reset + (1.0 - s) * (1.0 - p.leak) * v_s
            spikes[t, j] = s
            membranes[t, j] = v_prev
    return spikes.reshape(inputs.shape), membranes.reshape(inputs.shape)


class TestLifParams:
    def test_invalid_leak(self):
        with pytest.raises(ContractError):
            params(leak=1.5)

    def test_threshold_must_exceed_reset(self):
        with pytest.raises(ContractError):
            params(v_threshold=0.0, v_reset=0.0)

    def test_invalid_surrogate_width(self):
        with pytest.raises(ContractError):
            params(surrogate_width=0.0)


class TestLifStep:
    def test_quiescent_neuron(self):
        p = params()
        s, state = lif_step(LifState.zeros((3,)), tn.constant(np.zeros(3)), p)
        np.testing.assert_array_equal(s.data, np.zeros(3))
        np.testing.assert_array_equal(state.membrane.data, np.zeros(3))

    def test_fire_and_reset(self):
        # v = 0.5 + 1.0 = 1.5 >= 1 -> spike, membrane back to reset
        p = params(v_threshold=1.0, v_reset=0.0, leak=0.5)
        state = LifState(membrane=tn.constant(np.array([0.5])))
        s, state = lif_step(state, tn.constant(np.array([1.0])), p)
        np.testing.assert_array_equal(s.data, [1.0])
        np.testing.assert_array_equal(state.membrane.data, [0.0])

    def test_subthreshold_leak(self):
        # v = 0.5 + 0.2 = 0.7 < 1 -> no spike, membrane (1-0.5)*0.7 = 0.35
        p = params(v_threshold=1.0, leak=0.5)
        state = LifState(membrane=tn.constant(np.array([0.5])))
        s, state = lif_step(state, tn.constant(np.array([0.2])), p)
        np.testing.assert_array_equal(s.data, [0.0])
        np.testing.assert_allclose(state.membrane.data, [0.35], rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            lif_step(LifState.zeros((3,)), tn.constant(np.zeros(4)), params())


class TestLifSequence:
    def test_integration_spike_pattern(self):
        # constant drive 0.4 with no leak: fire on the third step, then rebuild
        p = params(v_threshold=1.0, v_reset=0.0, leak=0.0)
        train = lif_sequence(tn.constant(np.full((5, 1), 0.4)), p)
        np.testing.assert_array_equal(train.spikes.data.ravel(), [0, 0, 1, 0, 0])

    def test_all_zero_input(self):
        train = lif_sequence(tn.constant(np.zeros((4, 2, 2))), params())
        np.testing.assert_array_equal(train.spikes.data, np.zeros((4, 2, 2)))

    def test_single_step_equals_lif_step(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 3, 3))
        p = params()
        train = lif_sequence(tn.constant(x), p)
        s, _ = lif_step(LifState.zeros((3, 3)), tn.constant(x[0]), p)
        np.testing.assert_array_equal(train.spikes.data[0], s.data)

    def test_zero_timesteps_rejected(self):
        with pytest.raises(ContractError):
            lif_sequence(tn.constant(np.zeros((0, 2))), params())

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            p = params(
                v_threshold=rng.uniform(0.3, 1.5),
                v_reset=rng.uniform(-0.3, 0.2),
                leak=rng.uniform(0.0, 1.0),
                surrogate_width=rng.uniform(0.5, 2.0),
            )
            x = rng.normal(0.3, 0.6, size=(int(rng.integers(1, 7)), 2, 3))
            train = lif_sequence(tn.constant(x), p)
            want, _ = lif_reference(x, p)
            np.testing.assert_array_equal(train.spikes.data, want)


class TestSurrogate:
    def test_peak_at_threshold(self):
        p = params(surrogate_width=0.5)
        g = surrogate_grad(tn.constant(np.array([p.v_threshold])), p)
        np.testing.assert_allclose(g.data, [2.0])  # 1/width

    def test_zero_outside_support(self):
        p = params(surrogate_width=0.5)
        v = np.array([p.v_threshold - 0.5, p.v_threshold + 0.7, -3.0])
        g = surrogate_grad(tn.constant(v), p)
        np.testing.assert_array_equal(g.data, [0.0, 0.0, 0.0])

    def test_integral_is_one_by_trapezoid(self):
        p = params(surrogate_width=0.8)
        v = np.linspace(p.v_threshold - 2.0, p.v_threshold + 2.0, 4001)
        g = surrogate_grad(tn.constant(v), p).data
        assert abs(np.trapz(g, v) - 1.0) < 1e-3

    def test_relaxed_forward_antiderivative(self):
        # the relaxation's finite difference reproduces the surrogate
        p = params(surrogate_width=1.3)
        v = tn.parameter(np.linspace(-1.5, 3.5, 41))
        with surrogate_relaxation():
            out = spike(v, p)
            tn.backward(tn.sum_all(out))
        np.testing.assert_allclose(v.grad, surrogate_grad(v, p).data, atol=1e-12)
        with surrogate_relaxation():
            ramp = spike(v, p).data
        assert ramp.min() >= 0.0 and ramp.max() <= 1.0
        assert np.all(np.diff(ramp) >= 0.0)

    def test_spike_gradient_checks_under_relaxation(self):
        rng = np.random.default_rng(3)
        v = tn.parameter(rng.normal(1.0, 0.8, size=8))
        p = params()
        with surrogate_relaxation():
            report = tn.grad_check(lambda: tn.sum_all(tn.mul(spike(v, p), spike(v, p))),
                                   {"v": v}, tolerance=1e-4)
        assert report.passed, report.per_param


class TestInvariants:
    def test_spikes_exactly_binary(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            x = rng.normal(0.5, 2.0, size=(5, 4))
            train = lif_sequence(tn.constant(x), params())
            assert set(np.unique(train.spikes.data)) <= {0.0, 1.0}

    def test_reset_and_leak_exactness(self):
        rng = np.random.default_rng(29)
        p = params(v_threshold=0.8, v_reset=0.1, leak=0.3)
        state = LifState.zeros((6,))
        for _ in range(10):
            x = rng.normal(0.4, 0.8, size=6)
            v_s = state.membrane.data + x
            s, state = lif_step(state, tn.constant(x), p)
            fired = s.data == 1.0
            assert np.all(state.membrane.data[fired] == p.v_reset)
            np.testing.assert_array_equal(
                state.membrane.data[~fired], (1.0 - p.leak) * v_s[~fired]
            )

    def test_first_spike_time_is_threshold_over_drive(self):
        # exact-threshold drives must accumulate without roundoff (dyadic c);
        # the non-dyadic drives here cross strictly, so they are safe too
        p = params(v_threshold=1.0, v_reset=0.0, leak=0.0)
        for c in (0.125, 0.25, 0.26, 0.4, 0.49, 1.0, 2.5):
            train = lif_sequence(tn.constant(np.full((30, 1), c)), p)
            first = int(np.argmax(train.spikes.data.ravel())) + 1
            assert first == int(np.ceil(p.v_threshold / c))

    def test_causality(self):
        rng = np.random.default_rng(31)
        x = rng.normal(0.4, 0.5, size=(6, 3))
        p = params()
        base = lif_sequence(tn.constant(x), p).spikes.data
        for t in range(6):
            bumped = x.copy()
            bumped[t] += rng.normal(0, 2.0, size=3)
            got = lif_sequence(tn.constant(bumped), p).spikes.data
            np.testing.assert_array_equal(got[:t], base[:t])

    def test_spike_train_timesteps(self):
        train = SpikeTrain(spikes=tn.constant(np.zeros((7, 2))))
        assert train.timesteps == 7
