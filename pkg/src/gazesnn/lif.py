"""Leaky integrate-and-fire neurons with a triangular surrogate gradient.

A neuron integrates its weighted input into a membrane potential, emits a
binary spike when the potential reaches threshold, then hard-resets; silent
neurons keep a leak-decayed potential. The threshold step is differentiated
in the backward pass by a triangular surrogate so spiking layers can train,
while forward spikes stay exactly 0/1.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class LifParams:
    """Neuron constants: firing threshold, reset potential, leak in [0, 1],
    and the half-width of the surrogate gradient's support."""

    v_threshold: float = 1.0
    v_reset: float = 0.0
    leak: float = 0.5
    surrogate_width: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.leak <= 1.0:
            raise ContractError(f"leak must be in [0, 1], got {self.leak}")
        if not self.v_threshold > self.v_reset:
            raise ContractError(
                f"v_threshold ({self.v_threshold}) must exceed v_reset ({self.v_reset})"
            )
        if not self.surrogate_width > 0:
            raise ContractError(f"surrogate_width must be > 0, got {self.surrogate_width}")

    def to_dict(self) -> dict:
        return {
            "v_threshold": self.v_threshold,
            "v_reset": self.v_reset,
            "leak": self.leak,
            "surrogate_width": self.surrogate_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LifParams":
        return cls(**d)


@dataclass
class LifState:
    """Per-neuron membrane potential carried between timesteps."""

    membrane: Tensor

    @classmethod
    def zeros(cls, shape) -> "LifState":
        return cls(membrane=tn.constant(np.zeros(shape)))


@dataclass
class SpikeTrain:
    """Binary spikes with a leading timestep axis."""

    spikes: Tensor

    @property
    def timesteps(self) -> int:
        return self.spikes.shape[0]


# Relaxation flag: when set, the spike forward computes the smooth ramp whose
# derivative is the surrogate, making finite-difference checks meaningful.
_RELAXED = False


@contextmanager
def surrogate_relaxation():
    """Replace hard thresholding with its surrogate-smoothed relaxation."""
    global _RELAXED
    prev = _RELAXED
    _RELAXED = True
    try:
        yield
    finally:
        _RELAXED = prev


def _surrogate_values(v: np.ndarray, params: LifParams) -> np.ndarray:
    w = params.surrogate_width
    return np.maximum(0.0, 1.0 - np.abs(v - params.v_threshold) / w) / w


def _relaxed_spike_values(v: np.ndarray, params: LifParams) -> np.ndarray:
    # Antiderivative of the triangle: quadratic ramp from 0 to 1 across the
    # surrogate support, exactly 0/1 outside it.
    u = (v - params.v_threshold) / params.surrogate_width
    lower = 0.5 * np.square(np.clip(u, -1.0, 0.0) + 1.0)
    upper = 1.0 - 0.5 * np.square(1.0 - np.clip(u, 0.0, 1.0))
    return np.where(u <= 0.0, lower, upper)


def surrogate_grad(v_s, params: LifParams) -> Tensor:
    """Derivative of the spike output w.r.t. membrane potential under the
    triangular surrogate: peak 1/width at threshold, zero outside the support."""
    v = v_s.data if isinstance(v_s, Tensor) else np.asarray(v_s, dtype=np.float64)
    return tn.constant(_surrogate_values(v, params))


def spike(v_s: Tensor, params: LifParams) -> Tensor:
    """Threshold the membrane potential into binary spikes.

    Backward always uses the triangular surrogate. Inside
    :func:`surrogate_relaxation` the forward emits the smooth ramp instead of
    the hard step (finite-difference probing only).
    """
    if _RELAXED:
        out = Tensor(_relaxed_spike_values(v_s.data, params))
    else:
        out = Tensor((v_s.data >= params.v_threshold).astype(np.float64))
    surr = _surrogate_values(v_s.data, params)

    def bwd():
        if out.grad is None:
            return
        tn.accumulate_grad(v_s, out.grad * surr, own=True)

    out.requires_grad = tn.record((v_s,), bwd)
    return out


def lif_step(state: LifState, input_current: Tensor, params: LifParams):
    """Advance the neurons one timestep.

    ``input_current`` is the already-weighted signal from the preceding
    layer. Integration adds it to the previous potential; neurons at or above
    threshold emit a spike and reset, the rest keep (1 - leak) of the
    integrated potential. Returns ``(spikes, new_state)``.

    Recorded as one fused tape op whose backward routes both the spike and
    membrane adjoints through the surrogate.
    """
    if input_current.shape != state.membrane.shape:
        raise DimensionError(
            f"lif_step: input shape {tuple(input_current.shape)} does not match "
            f"state shape {tuple(state.membrane.shape)}"
        )
    prev = state.membrane
    v_s = prev.data + input_current.data
    if _RELAXED:
        s_val = _relaxed_spike_values(v_s, params)
    else:
        s_val = (v_s >= params.v_threshold).astype(np.float64)
    keep = 1.0 - params.leak
    s = Tensor(s_val)
    membrane = Tensor(params.v_reset * s_val + (1.0 - s_val) * keep * v_s)
    surr = _surrogate_values(v_s, params)

    def bwd():
        # d(v_t)/d(v_s) has a direct decay term plus the surrogate-routed
        # effect of the spike on both the reset and the decay gate.
        g = None
        if membrane.grad is not None:
            g = membrane.grad * (
                (1.0 - s_val) * keep + surr * (params.v_reset - keep * v_s)
            )
        if s.grad is not None:
            gs = s.grad * surr
            g = gs if g is None else g + gs
        if g is None:
            return
        if prev.requires_grad and input_current.requires_grad:
            tn.accumulate_grad(prev, g)
            tn.accumulate_grad(input_current, g, own=True)
        elif prev.requires_grad:
            tn.accumulate_grad(prev, g, own=True)
        elif input_current.requires_grad:
            tn.accumulate_grad(input_current, g, own=True)

    req = tn.record((prev, input_current), bwd)
    s.requires_grad = req
    membrane.requires_grad = req
    return s, LifState(membrane=membrane)


def lif_sequence(inputs: Tensor, params: LifParams, initial_state: LifState | None = None) -> SpikeTrain:
    """Fold :func:`lif_step` over the leading time axis of ``inputs``.

    Starts from zero membrane unless ``initial_state`` is given. Output at
    step t depends only on inputs up to t.
    """
    if inputs.ndim < 1 or inputs.shape[0] < 1:
        raise ContractError(
            f"lif_sequence needs at least one timestep, got shape {tuple(inputs.shape)}"
        )
    state = initial_state if initial_state is not None else LifState.zeros(inputs.shape[1:])
    steps = []
    for t in range(inputs.shape[0]):
        s, state = lif_step(state, tn.index0(inputs, t), params)
        steps.append(s)
    return SpikeTrain(spikes=tn.stack0(steps))
