"""Dense float64 tensors with reverse-mode differentiation on a linear tape.

Every operation that participates in training records one closure on the
active :class:`Tape`. ``backward`` replays the closures in strict reverse
execution order, accumulating adjoints into ``Tensor.grad``. The tape lives
for exactly one forward+backward pass: ``backward`` clears it, and calling
``backward`` again without a fresh forward raises :class:`ContractError`.

Only the operations the model actually needs are provided; there is no
general broadcasting. All arithmetic is 64-bit and single-threaded, so
identical inputs produce bit-identical outputs.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, TrainingAbort


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """A trainable tensor (gradient will be accumulated)."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Tape:
    """Ordered record of executed operations, replayed backwards for adjoints."""

    def __init__(self):
        self._entries = []

    def record(self, backward_fn):
        self._entries.append(backward_fn)

    def clear(self):
        self._entries.clear()

    def __len__(self):
        return len(self._entries)


_ACTIVE_TAPE = Tape()
_GRAD_ENABLED = True


def active_tape() -> Tape:
    return _ACTIVE_TAPE


@contextmanager
def no_grad():
    """Disable tape recording (inference, finite-difference probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def accumulate_grad(t: Tensor, g: np.ndarray, own: bool = False):
    """Add ``g`` into ``t.grad``, allocating the buffer on first use.

    ``own=True`` asserts that ``g`` is a freshly allocated array no one else
    references, letting the first accumulation skip the defensive copy. The
    same array must not be handed to two tensors.
    """
    if t.grad is None:
        t.grad = g if own else np.array(g, dtype=np.float64)
    else:
        t.grad += g


def record(inputs, backward_fn) -> bool:
    """Record ``backward_fn`` if grad mode is on and any input needs a gradient.

    Returns whether the op output should itself require a gradient.
    """
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        _ACTIVE_TAPE.record(backward_fn)
        return True
    return False


def backward(loss: Tensor):
    """Fill the ``grad`` of every tape participant with d(loss)/d(param).

    ``loss`` must be scalar. Consumes the tape: a second call without a new
    forward pass raises :class:`ContractError`.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward needs a scalar loss, got shape {tuple(loss.shape)}"
        )
    if len(_ACTIVE_TAPE) == 0:
        raise ContractError(
            "gradient tape is empty; run a forward pass before backward"
        )
    loss.grad = np.ones_like(loss.data)
    for fn in reversed(_ACTIVE_TAPE._entries):
        fn()
    _ACTIVE_TAPE.clear()


# ---------------------------------------------------------------------------
# elementwise and structural operations
# ---------------------------------------------------------------------------


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            accumulate_grad(a, out.grad)
        if b.requires_grad:
            accumulate_grad(b, out.grad)

    out.requires_grad = record((a, b), bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            accumulate_grad(a, out.grad)
        if b.requires_grad:
            accumulate_grad(b, -out.grad, own=True)

    out.requires_grad = record((a, b), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            accumulate_grad(a, out.grad * b.data, own=True)
        if b.requires_grad:
            accumulate_grad(b, out.grad * a.data, own=True)

    out.requires_grad = record((a, b), bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def bwd():
        if out.grad is None:
            return
        accumulate_grad(a, out.grad * c, own=True)

    out.requires_grad = record((a,), bwd)
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + float(c))

    def bwd():
        if out.grad is None:
            return
        accumulate_grad(a, out.grad)

    out.requires_grad = record((a,), bwd)
    return out


def add_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a (1, n) row vector to every row of an (m, n) tensor."""
    if a.ndim != 2 or bias.shape != (1, a.shape[1]):
        raise DimensionError(
            f"add_bias: got {tuple(a.shape)} and {tuple(bias.shape)}, "
            f"need (m, n) and (1, n)"
        )
    out = Tensor(a.data + bias.data)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            accumulate_grad(a, out.grad)
        if bias.requires_grad:
            accumulate_grad(bias, out.grad.sum(axis=0, keepdims=True), own=True)

    out.requires_grad = record((a, bias), bwd)
    return out


def rowdiv(a: Tensor, d: Tensor) -> Tensor:
    """Divide each row of an (m, n) tensor by an (m, 1) column of divisors."""
    if a.ndim != 2 or d.shape != (a.shape[0], 1):
        raise DimensionError(
            f"rowdiv: got {tuple(a.shape)} and {tuple(d.shape)}, need (m, n) and (m, 1)"
        )
    out = Tensor(a.data / d.data)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            accumulate_grad(a, out.grad / d.data, own=True)
        if d.requires_grad:
            accumulate_grad(
                d, (-(a.data / d.data**2) * out.grad).sum(axis=1, keepdims=True), own=True
            )

    out.requires_grad = record((a, d), bwd)
    return out


def axis_sum(a: Tensor, axis: int, keepdims: bool = True) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd():
        if out.grad is None:
            return
        g = out.grad
        if not keepdims:
            g = np.expand_dims(g, axis)
        accumulate_grad(a, np.broadcast_to(g, a.shape).copy(), own=True)

    out.requires_grad = record((a,), bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bwd():
        if out.grad is None:
            return
        accumulate_grad(a, np.full_like(a.data, float(out.grad)), own=True)

    out.requires_grad = record((a,), bwd)
    return out


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def bwd():
        if out.grad is None:
            return
        accumulate_grad(a, out.grad.reshape(a.shape))

    out.requires_grad = record((a,), bwd)
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        if a.ndim != 2:
            raise DimensionError(f"transpose without axes needs 2-D, got {tuple(a.shape)}")
        axes = (1, 0)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))

    def bwd():
        if out.grad is None:
            return
        accumulate_grad(a, out.grad.transpose(inv))

    out.requires_grad = record((a,), bwd)
    return out


def stack0(tensors) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise ContractError("stack0 needs at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != base:
            raise DimensionError(
                f"stack0: shapes {tuple(base)} and {tuple(t.shape)} differ"
            )
    out = Tensor(np.stack([t.data for t in tensors]))

    def bwd():
        if out.grad is None:
            return
        for i, t in enumerate(tensors):
            if t.requires_grad:
                accumulate_grad(t, out.grad[i])

    out.requires_grad = record(tensors, bwd)
    return out


def index0(a: Tensor, i: int) -> Tensor:
    """Select slot ``i`` along the leading axis."""
    if not (0 <= i < a.shape[0]):
        raise DimensionError(f"index0: index {i} out of range for shape {tuple(a.shape)}")
    out = Tensor(a.data[i])

    def bwd():
        if out.grad is None:
            return
        g = np.zeros_like(a.data)
        g[i] = out.grad
        accumulate_grad(a, g, own=True)

    out.requires_grad = record((a,), bwd)
    return out


# ---------------------------------------------------------------------------
# matmul and convolution
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}"
        )
    out = Tensor(a.data @ b.data)

    def bwd():
        if out.grad is None:
            return
        if a.requires_grad:
            accumulate_grad(a, out.grad @ b.data.T, own=True)
        if b.requires_grad:
            accumulate_grad(b, a.data.T @ out.grad, own=True)

    out.requires_grad = record((a, b), bwd)
    return out


def _conv_geometry(h, w, kh, kw, stride, padding):
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d: kernel ({kh}x{kw}) larger than padded input ({hp}x{wp})"
        )
    return (hp - kh) // stride + 1, (wp - kw) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, mode: str, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over a (C, H, W) tensor.

    ``mode='pointwise'`` takes a (C_out, C_in) kernel mixing channels at each
    location; ``mode='depthwise'`` takes a (C, kh, kw) kernel, one filter per
    input channel. No kernel flip is performed.
    """
    if x.ndim != 3:
        raise DimensionError(f"conv2d: input must be (C, H, W), got {tuple(x.shape)}")
    c, h, w = x.shape
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ContractError(f"conv2d: stride must be >= 1, got {stride}")

    if mode == "pointwise":
        if kernel.ndim != 2 or kernel.shape[1] != c:
            raise DimensionError(
                f"conv2d pointwise: kernel {tuple(kernel.shape)} does not match "
                f"{c} input channels (need (C_out, {c}))"
            )
        h_out, w_out = _conv_geometry(h, w, 1, 1, stride, padding)
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
        xs = np.ascontiguousarray(
            xp[:, : (h_out - 1) * stride + 1 : stride, : (w_out - 1) * stride + 1 : stride]
        )
        flat = xs.reshape(c, h_out * w_out)
        out = Tensor((kernel.data @ flat).reshape(kernel.shape[0], h_out, w_out))

        def bwd():
            if out.grad is None:
                return
            g = out.grad.reshape(out.shape[0], h_out * w_out)
            if kernel.requires_grad:
                accumulate_grad(kernel, g @ flat.T, own=True)
            if x.requires_grad:
                gs = (kernel.data.T @ g).reshape(c, h_out, w_out)
                if padding or stride != 1 or gs.shape != (c, h, w):
                    gxp = np.zeros_like(xp)
                    gxp[:, : (h_out - 1) * stride + 1 : stride, : (w_out - 1) * stride + 1 : stride] = gs
                    gs = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
                accumulate_grad(x, np.ascontiguousarray(gs), own=True)

        out.requires_grad = record((x, kernel), bwd)
        return out

    if mode == "depthwise":
        if kernel.ndim != 3 or kernel.shape[0] != c:
            raise DimensionError(
                f"conv2d depthwise: kernel {tuple(kernel.shape)} does not match "
                f"{c} input channels (need ({c}, kh, kw))"
            )
        kh, kw = kernel.shape[1], kernel.shape[2]
        h_out, w_out = _conv_geometry(h, w, kh, kw, stride, padding)
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data

        def taps():
            for u in range(kh):
                for v in range(kw):
                    yield u, v, xp[:, u : u + stride * (h_out - 1) + 1 : stride,
                                   v : v + stride * (w_out - 1) + 1 : stride]

        acc = np.zeros((c, h_out, w_out))
        for u, v, sl in taps():
            acc += sl * kernel.data[:, u, v][:, None, None]
        out = Tensor(acc)

        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if kernel.requires_grad:
                gk = np.empty_like(kernel.data)
                tmp = np.empty_like(g)
                for u, v, sl in taps():
                    np.multiply(sl, g, out=tmp)
                    gk[:, u, v] = tmp.reshape(c, -1).sum(axis=1)
                accumulate_grad(kernel, gk, own=True)
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for u in range(kh):
                    for v in range(kw):
                        gxp[:, u : u + stride * (h_out - 1) + 1 : stride,
                            v : v + stride * (w_out - 1) + 1 : stride] += (
                            g * kernel.data[:, u, v][:, None, None]
                        )
                gx = gxp[:, padding : padding + h, padding : padding + w] if padding else gxp
                accumulate_grad(x, np.ascontiguousarray(gx), own=True)

        out.requires_grad = record((x, kernel), bwd)
        return out

    raise ContractError(f"conv2d: unknown mode {mode!r} (use 'pointwise' or 'depthwise')")


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormParams:
    """Learnable scale/shift plus running statistics for one normalization site.

    ``channel_axis`` names the axis holding channels; statistics are taken
    over every other axis of the tensor passing through. Running stats are
    updated in place during training-mode forward passes.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    channel_axis: int = 0
    momentum: float = 0.1
    eps: float = 1e-5


def bn_init(channels: int, channel_axis: int = 0) -> BatchNormParams:
    return BatchNormParams(
        gamma=parameter(np.ones(channels)),
        beta=parameter(np.zeros(channels)),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        channel_axis=channel_axis,
    )


def batch_norm(x: Tensor, bn: BatchNormParams, training: bool,
               channel_axis: int | None = None) -> Tensor:
    """Normalize per channel, then apply the learned affine transform.

    Training mode normalizes with the statistics of ``x`` itself (every axis
    but the channel axis, so a leading batch axis pools into the statistics)
    and updates the running stats; inference mode normalizes with the
    running stats. ``channel_axis`` overrides the site's default when the
    same parameters serve batched and unbatched layouts. Zero-variance
    channels are safe: the epsilon keeps the divisor positive.
    """
    axis = (bn.channel_axis if channel_axis is None else channel_axis) % x.ndim
    channels = x.shape[axis]
    if bn.gamma.shape != (channels,) or bn.beta.shape != (channels,):
        raise DimensionError(
            f"batch_norm: gamma/beta of shape {tuple(bn.gamma.shape)} do not match "
            f"{channels} channels on axis {axis} of {tuple(x.shape)}"
        )
    reduce_axes = tuple(i for i in range(x.ndim) if i != axis)
    bshape = tuple(channels if i == axis else 1 for i in range(x.ndim))
    m = x.size // channels

    if training:
        # Single pass over the data for both moments; the epsilon below
        # absorbs the tiny negative residue this can leave on constant input.
        flat = np.moveaxis(x.data, axis, 0).reshape(channels, m)
        mean = flat.mean(axis=1)
        var = np.einsum("ij,ij->i", flat, flat) / m - mean * mean
        bn.running_mean += bn.momentum * (mean - bn.running_mean)
        bn.running_var += bn.momentum * (var - bn.running_var)
    else:
        mean = bn.running_mean
        var = bn.running_var

    inv_std = 1.0 / np.sqrt(var + bn.eps)
    x_hat = (x.data - mean.reshape(bshape)) * inv_std.reshape(bshape)
    out = Tensor(bn.gamma.data.reshape(bshape) * x_hat + bn.beta.data.reshape(bshape))

    gamma, beta = bn.gamma, bn.beta

    def bwd():
        if out.grad is None:
            return
        g = out.grad
        if gamma.requires_grad:
            accumulate_grad(gamma, (g * x_hat).sum(axis=reduce_axes), own=True)
        if beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=reduce_axes), own=True)
        if x.requires_grad:
            k = (gamma.data * inv_std).reshape(bshape)
            if training:
                g_mean = g.mean(axis=reduce_axes).reshape(bshape)
                gx_mean = (g * x_hat).mean(axis=reduce_axes).reshape(bshape)
                accumulate_grad(x, k * (g - g_mean - x_hat * gx_mean), own=True)
            else:
                accumulate_grad(x, k * g, own=True)

    out.requires_grad = record((x, gamma, beta), bwd)
    return out


# ---------------------------------------------------------------------------
# classification loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross entropy of a softmax over 1-D class logits against an index label."""
    if logits.ndim != 1:
        raise DimensionError(f"softmax_cross_entropy: logits must be 1-D, got {tuple(logits.shape)}")
    n = logits.shape[0]
    label = int(label)
    if not (0 <= label < n):
        raise ContractError(f"label {label} out of range for {n} classes")
    z = logits.data
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    out = Tensor(lse - z[label])
    probs = np.exp(z - lse)

    def bwd():
        if out.grad is None:
            return
        g = probs.copy()
        g[label] -= 1.0
        g *= float(out.grad)
        accumulate_grad(logits, g, own=True)

    out.requires_grad = record((logits,), bwd)
    return out


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def sgd_step(params, grads, learning_rate: float, momentum: float, velocity=None):
    """One SGD update: ``v <- momentum*v + g``, ``p <- p - lr*v``.

    Pure function over numpy arrays; returns (new_params, new_velocity).
    Raises :class:`TrainingAbort` on non-finite gradients.
    """
    params = [np.asarray(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise DimensionError(f"sgd_step: {len(params)} params vs {len(grads)} grads")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(
                f"sgd_step: param {i} shape {p.shape} does not match grad shape {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingAbort(f"non-finite gradient in parameter {i} (shape {p.shape})")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_v = [momentum * v + g for v, g in zip(velocity, grads)]
    new_p = [p - learning_rate * v for p, v in zip(params, new_v)]
    return new_p, new_v


class SgdOptimizer:
    """In-place SGD with momentum over named parameter tensors."""

    def __init__(self, params: dict, learning_rate: float, momentum: float = 0.0):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self._velocity = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def step(self):
        for name, t in self.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise TrainingAbort(f"non-finite gradient in parameter {name!r}")
            (new_p,), (new_v,) = sgd_step(
                [t.data], [g], self.learning_rate, self.momentum, [self._velocity[name]]
            )
            t.data = new_p
            self._velocity[name] = new_v

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-parameter worst-case relative error of tape vs finite differences."""

    per_param: dict = field(default_factory=dict)
    tolerance: float = 0.0
    step: float = 1e-5
    probes: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def failing(self):
        return sorted(k for k, v in self.per_param.items() if v >= self.tolerance)


def grad_check(op_closure, params, tolerance: float, step: float = 1e-5,
               probes: int | None = None, seed: int = 0) -> GradCheckReport:
    """Compare tape gradients of a scalar closure against central differences.

    ``params`` is a name->Tensor mapping (a list gets positional names). When
    ``probes`` is given, that many (parameter, element) pairs are sampled at
    random instead of probing every element. Clears the active tape and the
    parameters' gradients. Always returns a report; never raises on mismatch.

    The relative error denominator is floored at 1e-3, so elements whose
    true derivative is far below that scale are compared absolutely (their
    central difference is dominated by float roundoff of the loss values).
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    rng = np.random.Generator(np.random.PCG64(seed))

    _ACTIVE_TAPE.clear()
    for t in params.values():
        t.zero_grad()
    loss = op_closure()
    backward(loss)
    tape_grads = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in params.items()
    }
    for t in params.values():
        t.zero_grad()

    slots = [(k, i) for k, t in params.items() for i in range(t.size)]
    if probes is not None and probes < len(slots):
        picks = rng.choice(len(slots), size=probes, replace=False)
        slots = [slots[int(i)] for i in picks]

    def eval_loss() -> float:
        with no_grad():
            return op_closure().item()

    report = GradCheckReport(tolerance=tolerance, step=step, probes=len(slots))
    errs = {k: 0.0 for k in params}
    for name, idx in slots:
        flat = params[name].data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + step
        f_plus = eval_loss()
        flat[idx] = orig - step
        f_minus = eval_loss()
        flat[idx] = orig
        fd = (f_plus - f_minus) / (2.0 * step)
        g = tape_grads[name].reshape(-1)[idx]
        rel = abs(g - fd) / max(abs(g), abs(fd), 1e-3)
        if rel > errs[name]:
            errs[name] = rel
    report.per_param = errs
    return report
