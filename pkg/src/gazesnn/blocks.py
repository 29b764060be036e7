"""Spiking building blocks and the full classifier.

Two block types are composed into the model:

* a convolutional block with a membrane shortcut,
  ``x' = x + BN(Conv_p(Conv_d(SN(x))))``, which keeps a real-valued residual
  stream while the inner path is spike-gated;
* a spike-attention block in which spiking neurons binarize query/key/value
  projections, raw attention scores are ``Q_s K_s^T / sqrt(d_k)`` with no
  softmax, and the context is mixed back through a re-parameterizable
  projection with another shortcut.

The classifier runs the stem once per image (the input is static across
timesteps), lets all LIF states evolve for T steps, and averages the
per-step class logits and the final block's attention map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError
from .lif import LifParams, LifState, lif_step
from .rng import generator
from .tensor import BatchNormParams, Tensor, bn_init

# Row smoothing for attention-map normalization: rows of the normalized map
# sum to 1 exactly, and all-zero score rows become uniform.
ROW_NORM_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions plus the neuron constants."""

    image_size: int = 32
    in_channels: int = 1
    stem_channels: int = 16
    num_conv_blocks: int = 2
    patch_size: int = 4
    token_dim: int = 32
    num_attention_blocks: int = 2
    num_classes: int = 2
    timesteps: int = 4
    lif: LifParams = field(default_factory=LifParams)

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ContractError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.timesteps < 1:
            raise ContractError(f"timesteps must be >= 1, got {self.timesteps}")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def patch_dim(self) -> int:
        return self.stem_channels * self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "image_size", "in_channels", "stem_channels", "num_conv_blocks",
            "patch_size", "token_dim", "num_attention_blocks", "num_classes",
            "timesteps")}
        d["lif"] = self.lif.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        lif = LifParams.from_dict(d.pop("lif")) if "lif" in d else LifParams()
        return cls(lif=lif, **d)


# ---------------------------------------------------------------------------
# convolutional block
# ---------------------------------------------------------------------------


@dataclass
class ConvSnnBlock:
    depthwise: Tensor          # (C, k, k)
    pointwise: Tensor          # (C, C)
    bn: BatchNormParams
    lif: LifParams

    @property
    def channels(self) -> int:
        return self.pointwise.shape[0]


def conv_snn_block_forward(block: ConvSnnBlock, x: Tensor, state: LifState,
                           training: bool = False):
    """Shortcut plus the spike-gated depthwise/pointwise path.

    The spiking layer consumes the block input and advances ``state``; the
    residual add requires the conv path to preserve shape. Returns
    ``(output, spikes, new_state)``; ``spikes`` is exposed for firing-rate
    bookkeeping.
    """
    if x.ndim != 3 or x.shape[0] != block.channels:
        raise DimensionError(
            f"conv block expects ({block.channels}, H, W), got {tuple(x.shape)}"
        )
    spikes, state = lif_step(state, x, block.lif)
    k = block.depthwise.shape[1]
    y = tn.conv2d(spikes, block.depthwise, "depthwise", padding=k // 2)
    y = tn.conv2d(y, block.pointwise, "pointwise")
    y = tn.batch_norm(y, block.bn, training)
    return tn.add(x, y), spikes, state


# ---------------------------------------------------------------------------
# re-parameterizable projection (token-level 1x1 convolution + BN)
# ---------------------------------------------------------------------------


@dataclass
class RepConv:
    """Linear token projection trained with a trailing batch norm.

    For inference the normalization can be folded into the kernel and a bias
    (:func:`rep_conv_fuse`); the fused forward matches the unfused
    inference path to float precision.
    """

    weight: Tensor             # (d_in, d_out)
    bn: BatchNormParams        # channel_axis = 1 (token features)
    fused: bool = False
    fused_weight: np.ndarray | None = None
    fused_bias: np.ndarray | None = None


def rep_conv_init(d_in: int, d_out: int, rng: np.random.Generator) -> RepConv:
    w = rng.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, d_out))
    return RepConv(weight=tn.parameter(w), bn=bn_init(d_out, channel_axis=1))


def rep_conv_forward(rc: RepConv, x: Tensor, training: bool = False) -> Tensor:
    if x.ndim != 2 or x.shape[1] != rc.weight.shape[0]:
        raise DimensionError(
            f"rep_conv expects (N, {rc.weight.shape[0]}), got {tuple(x.shape)}"
        )
    if rc.fused:
        if training:
            raise ContractError("fused rep_conv cannot run in training mode")
        return tn.constant(x.data @ rc.fused_weight + rc.fused_bias)
    return tn.batch_norm(tn.matmul(x, rc.weight), rc.bn, training)


def rep_conv_fuse(rc: RepConv) -> RepConv:
    """Fold the batch norm (running stats) into the kernel and a bias."""
    if rc.fused:
        raise ContractError("rep_conv is already fused")
    scale = rc.bn.gamma.data / np.sqrt(rc.bn.running_var + rc.bn.eps)
    rc.fused_weight = rc.weight.data * scale[None, :]
    rc.fused_bias = rc.bn.beta.data - rc.bn.running_mean * scale
    rc.fused = True
    return rc


# ---------------------------------------------------------------------------
# spike attention
# ---------------------------------------------------------------------------


@dataclass
class AttnStates:
    q: LifState
    k: LifState
    v: LifState

    @classmethod
    def zeros(cls, shape) -> "AttnStates":
        return cls(LifState.zeros(shape), LifState.zeros(shape), LifState.zeros(shape))


@dataclass
class SpikeAttentionBlock:
    rc_q: RepConv
    rc_k: RepConv
    rc_v: RepConv
    rc_out: RepConv
    lif: LifParams
    d_k: int

    def __post_init__(self):
        if self.d_k <= 0:
            raise ContractError(f"d_k must be positive, got {self.d_k}")


def spike_qkv(block: SpikeAttentionBlock, x: Tensor, states: AttnStates,
              training: bool = False):
    """Binary query/key/value trains: each is SN over its own projection of x."""
    q_s, sq = lif_step(states.q, rep_conv_forward(block.rc_q, x, training), block.lif)
    k_s, sk = lif_step(states.k, rep_conv_forward(block.rc_k, x, training), block.lif)
    v_s, sv = lif_step(states.v, rep_conv_forward(block.rc_v, x, training), block.lif)
    return q_s, k_s, v_s, AttnStates(sq, sk, sv)


def normalize_rows(scores: Tensor) -> Tensor:
    """Smooth row normalization of a nonnegative score matrix.

    Each output row sums to exactly 1; an all-zero score row comes out
    uniform instead of dividing by zero.
    """
    n = scores.shape[1]
    num = tn.add_scalar(scores, ROW_NORM_EPS / n)
    den = tn.add_scalar(tn.axis_sum(scores, axis=1, keepdims=True), ROW_NORM_EPS)
    return tn.rowdiv(num, den)


def spike_attention(block: SpikeAttentionBlock, x: Tensor, states: AttnStates,
                    training: bool = False):
    """Spike-driven attention with a shortcut.

    Raw scores are ``Q_s K_s^T / sqrt(d_k)`` (no softmax: with binary Q/K the
    score and value products reduce to accumulations). The output is
    ``x + rep_conv(scores @ V_s)``. Also returns the row-normalized score
    matrix, used for gaze alignment, and the new LIF states. The extra
    ``q/k/v`` spike returns feed firing-rate bookkeeping.
    """
    if x.ndim != 2:
        raise DimensionError(f"spike_attention expects (N, d) tokens, got {tuple(x.shape)}")
    q_s, k_s, v_s, states = spike_qkv(block, x, states, training)
    scores = tn.scale(tn.matmul(q_s, tn.transpose(k_s)), 1.0 / math.sqrt(block.d_k))
    attn = normalize_rows(scores)
    ctx = tn.matmul(scores, v_s)
    out = tn.add(x, rep_conv_forward(block.rc_out, ctx, training))
    return out, attn, states, (q_s, k_s, v_s)


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


@dataclass
class EgSpikeFormer:
    """Stem, conv blocks, patch tokenizer, spike-attention blocks, and head."""

    config: ModelConfig
    stem_depthwise: Tensor
    stem_pointwise: Tensor
    stem_bn: BatchNormParams
    conv_blocks: list
    tokenizer_weight: Tensor
    attn_blocks: list
    head_weight: Tensor
    head_bias: Tensor

    def parameters(self) -> dict:
        """Trainable tensors, in a fixed, checkpoint-stable order."""
        params = {
            "stem.dw": self.stem_depthwise,
            "stem.pw": self.stem_pointwise,
            "stem.bn.gamma": self.stem_bn.gamma,
            "stem.bn.beta": self.stem_bn.beta,
        }
        for i, cb in enumerate(self.conv_blocks):
            params[f"conv{i}.dw"] = cb.depthwise
            params[f"conv{i}.pw"] = cb.pointwise
            params[f"conv{i}.bn.gamma"] = cb.bn.gamma
            params[f"conv{i}.bn.beta"] = cb.bn.beta
        params["tokenizer.w"] = self.tokenizer_weight
        for i, ab in enumerate(self.attn_blocks):
            for tag, rc in (("q", ab.rc_q), ("k", ab.rc_k), ("v", ab.rc_v), ("out", ab.rc_out)):
                params[f"attn{i}.{tag}.w"] = rc.weight
                params[f"attn{i}.{tag}.bn.gamma"] = rc.bn.gamma
                params[f"attn{i}.{tag}.bn.beta"] = rc.bn.beta
        params["head.w"] = self.head_weight
        params["head.b"] = self.head_bias
        return params

    def _bn_sites(self) -> dict:
        sites = {"stem.bn": self.stem_bn}
        for i, cb in enumerate(self.conv_blocks):
            sites[f"conv{i}.bn"] = cb.bn
        for i, ab in enumerate(self.attn_blocks):
            for tag, rc in (("q", ab.rc_q), ("k", ab.rc_k), ("v", ab.rc_v), ("out", ab.rc_out)):
                sites[f"attn{i}.{tag}.bn"] = rc.bn
        return sites

    def state_arrays(self) -> dict:
        """All persistent arrays: trainable parameters plus running stats."""
        arrays = {k: t.data for k, t in self.parameters().items()}
        for name, bn in self._bn_sites().items():
            arrays[f"{name}.running_mean"] = bn.running_mean
            arrays[f"{name}.running_var"] = bn.running_var
        return arrays

    def load_state_arrays(self, arrays: dict):
        params = self.parameters()
        bn_sites = self._bn_sites()
        for name, arr in arrays.items():
            if name in params:
                if params[name].data.shape != arr.shape:
                    raise DimensionError(
                        f"checkpoint parameter {name!r} has shape {arr.shape}, "
                        f"model expects {params[name].data.shape}"
                    )
                params[name].data = arr.copy()
            elif name.endswith(".running_mean"):
                bn_sites[name[: -len(".running_mean")]].running_mean = arr.copy()
            elif name.endswith(".running_var"):
                bn_sites[name[: -len(".running_var")]].running_var = arr.copy()
            else:
                raise ContractError(f"unknown checkpoint entry {name!r}")


def build_model(config: ModelConfig, seed: int = 0) -> EgSpikeFormer:
    """Initialize a model deterministically from (config, seed)."""
    rng = generator(seed, 0xB10C)
    cin, c = config.in_channels, config.stem_channels

    def he(shape, fan_in):
        return tn.parameter(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape))

    conv_blocks = [
        ConvSnnBlock(
            depthwise=he((c, 3, 3), 9),
            pointwise=he((c, c), c),
            bn=bn_init(c, channel_axis=0),
            lif=config.lif,
        )
        for _ in range(config.num_conv_blocks)
    ]
    attn_blocks = [
        SpikeAttentionBlock(
            rc_q=rep_conv_init(config.token_dim, config.token_dim, rng),
            rc_k=rep_conv_init(config.token_dim, config.token_dim, rng),
            rc_v=rep_conv_init(config.token_dim, config.token_dim, rng),
            rc_out=rep_conv_init(config.token_dim, config.token_dim, rng),
            lif=config.lif,
            d_k=config.token_dim,
        )
        for _ in range(config.num_attention_blocks)
    ]
    return EgSpikeFormer(
        config=config,
        stem_depthwise=he((cin, 3, 3), 9),
        stem_pointwise=he((c, cin), cin),
        stem_bn=bn_init(c, channel_axis=0),
        conv_blocks=conv_blocks,
        tokenizer_weight=he((config.patch_dim, config.token_dim), config.patch_dim),
        attn_blocks=attn_blocks,
        head_weight=he((config.token_dim, config.num_classes), config.token_dim),
        head_bias=tn.parameter(np.zeros((1, config.num_classes))),
    )


def tokenize(x: Tensor, config: ModelConfig, weight: Tensor) -> Tensor:
    """Flatten non-overlapping patches and project them to token width."""
    c = config.stem_channels
    g, p = config.grid_size, config.patch_size
    x = tn.reshape(x, (c, g, p, g, p))
    x = tn.transpose(x, (1, 3, 0, 2, 4))
    x = tn.reshape(x, (config.num_tokens, config.patch_dim))
    return tn.matmul(x, weight)


@dataclass
class ForwardResult:
    logits: Tensor                 # (num_classes,)
    attention: Tensor              # (N, N), averaged over timesteps
    firing_rates: dict             # site name -> mean rate over elements and steps
    spike_tensors: list | None = None


def model_forward_batch(model: EgSpikeFormer, images, timesteps: int | None = None,
                        training: bool = True):
    """Run the classifier on a whole batch jointly.

    Convolutions and attention products run per sample, but every
    normalization site sees the concatenated batch, so training-mode batch
    norm uses true batch statistics (and the running stats learned here
    describe the same function inference mode applies per sample). Used by
    the training loop; single-image inference goes through
    :func:`model_forward`.

    Returns ``(logits, attentions, firing_rates)`` where ``logits`` is
    (B, num_classes) and ``attentions`` is a list of per-sample (N, N) maps
    averaged over timesteps.
    """
    cfg = model.config
    t_steps = cfg.timesteps if timesteps is None else int(timesteps)
    if t_steps < 1:
        raise ContractError(f"timesteps must be >= 1, got {t_steps}")
    batch = [img if isinstance(img, Tensor) else tn.constant(img) for img in images]
    b = len(batch)
    if b < 1:
        raise ContractError("model_forward_batch needs at least one image")
    expect = (cfg.in_channels, cfg.image_size, cfg.image_size)
    for img in batch:
        if tuple(img.shape) != expect:
            raise DimensionError(f"model expects image {expect}, got {tuple(img.shape)}")
    n, d = cfg.num_tokens, cfg.token_dim

    stems = []
    for img in batch:
        s = tn.conv2d(img, model.stem_depthwise, "depthwise", padding=1)
        stems.append(tn.conv2d(s, model.stem_pointwise, "pointwise"))
    stem = tn.batch_norm(tn.stack0(stems), model.stem_bn, training, channel_axis=1)

    conv_states = [LifState.zeros(stem.shape) for _ in model.conv_blocks]
    attn_states = [AttnStates.zeros((b, n, d)) for _ in model.attn_blocks]
    rate_sums = {}

    def note_spikes(site, s):
        rate_sums[site] = rate_sums.get(site, 0.0) + float(s.data.mean())

    def attn_block(block, xs, states):
        def project(rc, state):
            flat = rep_conv_forward(rc, tn.reshape(xs, (b * n, d)), training)
            return lif_step(state, tn.reshape(flat, (b, n, d)), block.lif)

        q_s, sq = project(block.rc_q, states.q)
        k_s, sk = project(block.rc_k, states.k)
        v_s, sv = project(block.rc_v, states.v)
        ctxs, attns = [], []
        for i in range(b):
            scores = tn.scale(
                tn.matmul(tn.index0(q_s, i), tn.transpose(tn.index0(k_s, i))),
                1.0 / math.sqrt(block.d_k),
            )
            attns.append(normalize_rows(scores))
            ctxs.append(tn.matmul(scores, tn.index0(v_s, i)))
        ctx = tn.reshape(tn.stack0(ctxs), (b * n, d))
        out = tn.reshape(rep_conv_forward(block.rc_out, ctx, training), (b, n, d))
        return tn.add(xs, out), attns, AttnStates(sq, sk, sv), (q_s, k_s, v_s)

    logits_acc = None
    attn_acc = None
    for _ in range(t_steps):
        x = stem
        for i, cb in enumerate(model.conv_blocks):
            spikes, conv_states[i] = lif_step(conv_states[i], x, cb.lif)
            note_spikes(f"conv{i}.sn", spikes)
            k = cb.depthwise.shape[1]
            ys = []
            for j in range(b):
                y = tn.conv2d(tn.index0(spikes, j), cb.depthwise, "depthwise", padding=k // 2)
                ys.append(tn.conv2d(y, cb.pointwise, "pointwise"))
            y = tn.batch_norm(tn.stack0(ys), cb.bn, training, channel_axis=1)
            x = tn.add(x, y)
        g, p = cfg.grid_size, cfg.patch_size
        tok = tn.reshape(x, (b, cfg.stem_channels, g, p, g, p))
        tok = tn.transpose(tok, (0, 2, 4, 1, 3, 5))
        tok = tn.reshape(tok, (b * n, cfg.patch_dim))
        tokens = tn.reshape(tn.matmul(tok, model.tokenizer_weight), (b, n, d))
        attn_maps = None
        for i, ab in enumerate(model.attn_blocks):
            tokens, attn_maps, attn_states[i], qkv = attn_block(ab, tokens, attn_states[i])
            for tag, s in zip(("q", "k", "v"), qkv):
                note_spikes(f"attn{i}.{tag}", s)
        pooled = tn.scale(tn.axis_sum(tokens, axis=1, keepdims=False), 1.0 / n)
        step_logits = tn.add_bias(tn.matmul(pooled, model.head_weight), model.head_bias)
        logits_acc = step_logits if logits_acc is None else tn.add(logits_acc, step_logits)
        attn_acc = attn_maps if attn_acc is None else [
            tn.add(a, m) for a, m in zip(attn_acc, attn_maps)
        ]

    logits = tn.scale(logits_acc, 1.0 / t_steps)
    attentions = [tn.scale(a, 1.0 / t_steps) for a in attn_acc]
    firing_rates = {site: total / t_steps for site, total in rate_sums.items()}
    return logits, attentions, firing_rates


def model_forward(model: EgSpikeFormer, image, timesteps: int | None = None,
                  training: bool = False, collect_spikes: bool = False) -> ForwardResult:
    """Run the classifier for T timesteps on one image.

    The image is presented at every timestep (static coding), so the stem is
    evaluated once and its output reused while the LIF states evolve.
    Per-step logits and the last attention block's normalized map are
    averaged over timesteps.
    """
    cfg = model.config
    t_steps = cfg.timesteps if timesteps is None else int(timesteps)
    if t_steps < 1:
        raise ContractError(f"timesteps must be >= 1, got {t_steps}")
    x_in = image if isinstance(image, Tensor) else tn.constant(image)
    expect = (cfg.in_channels, cfg.image_size, cfg.image_size)
    if tuple(x_in.shape) != expect:
        raise DimensionError(f"model expects image {expect}, got {tuple(x_in.shape)}")

    stem = tn.conv2d(x_in, model.stem_depthwise, "depthwise", padding=1)
    stem = tn.conv2d(stem, model.stem_pointwise, "pointwise")
    stem = tn.batch_norm(stem, model.stem_bn, training)

    conv_states = [LifState.zeros(stem.shape) for _ in model.conv_blocks]
    attn_states = [AttnStates.zeros((cfg.num_tokens, cfg.token_dim)) for _ in model.attn_blocks]

    rate_sums = {}
    spike_tensors = [] if collect_spikes else None

    def note_spikes(site, s):
        rate_sums[site] = rate_sums.get(site, 0.0) + float(s.data.mean())
        if collect_spikes:
            spike_tensors.append(s.data)

    logits_acc = None
    attn_acc = None
    for _ in range(t_steps):
        x = stem
        for i, cb in enumerate(model.conv_blocks):
            x, s, conv_states[i] = conv_snn_block_forward(cb, x, conv_states[i], training)
            note_spikes(f"conv{i}.sn", s)
        tokens = tokenize(x, cfg, model.tokenizer_weight)
        attn_map = None
        for i, ab in enumerate(model.attn_blocks):
            tokens, attn_map, attn_states[i], qkv = spike_attention(
                ab, tokens, attn_states[i], training
            )
            for tag, s in zip(("q", "k", "v"), qkv):
                note_spikes(f"attn{i}.{tag}", s)
        pooled = tn.scale(tn.axis_sum(tokens, axis=0, keepdims=True), 1.0 / cfg.num_tokens)
        step_logits = tn.add_bias(tn.matmul(pooled, model.head_weight), model.head_bias)
        logits_acc = step_logits if logits_acc is None else tn.add(logits_acc, step_logits)
        attn_acc = attn_map if attn_acc is None else tn.add(attn_acc, attn_map)

    logits = tn.reshape(tn.scale(logits_acc, 1.0 / t_steps), (cfg.num_classes,))
    attention = tn.scale(attn_acc, 1.0 / t_steps)
    firing_rates = {site: total / t_steps for site, total in rate_sums.items()}
    return ForwardResult(logits=logits, attention=attention,
                         firing_rates=firing_rates, spike_tensors=spike_tensors)
