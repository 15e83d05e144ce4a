"""Convolutional backbone, tokenizer, mixer stack, and classification head.

The network is a reduced EfficientNet-style pipeline: a strided 3x3 stem,
stages of fused and standard inverted-bottleneck blocks with squeeze-
excitation, a 1x1 convolution projecting features to d_model channels, a
reshape of the spatial grid into n = H*W tokens, a stack of mixer blocks,
and a global-average-pool + affine + softmax head.

Convolutions run as im2col plus one matrix multiply per call so the whole
model trains at practical speed on a CPU; the backward pass scatters column
gradients back with one strided add per kernel tap.  All convolutions are
cross-correlations (no kernel flip) without biases; "same" padding follows
the ceil(H/stride) rule with the extra pixel on the bottom/right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .mixer import (
    MixerAttentionParams,
    MixerConfig,
    init_mixer_params,
    mixer_attention_block,
)
from .tensor import (
    ShapeError,
    Tensor,
    add,
    gelu,
    matmul,
    mean_axes,
    record_op,
    relu,
    reshape,
    sigmoid,
    softmax,
    transpose_last,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# conv2d


def _out_and_pad(size: int, k: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Output extent plus (low, high) zero padding for one spatial axis."""
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + k - size, 0)
        lo = total // 2
        return out, lo, total - lo
    if padding == "valid":
        if size < k:
            raise ShapeError(f"valid padding needs extent >= kernel, "
                             f"got {size} < {k}")
        return (size - k) // stride + 1, 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _col2im_add(d6: Array, hp: int, wp: int, stride: int) -> Array:
    """Scatter (B, C, kh, kw, Ho, Wo) window grads into a padded image."""
    b, c, kh, kw, ho, wo = d6.shape
    buf = np.zeros((b, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i:i + stride * ho:stride,
                j:j + stride * wo:stride] += d6[:, :, i, j]
    return buf


def _conv_forward_dense(xp: Array, w: Array, stride: int,
                        ho: int, wo: int) -> tuple[Array, Array]:
    """Single-group convolution; returns output and the im2col matrix."""
    b = xp.shape[0]
    c_out, c_in, kh, kw = w.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(
        b, c_in * kh * kw, ho * wo)
    out = np.matmul(w.reshape(c_out, -1), cols).reshape(b, c_out, ho, wo)
    return out, cols


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: str = "same",
           groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation.

    ``x`` is (C_in, H, W) or (B, C_in, H, W); ``w`` is
    (C_out, C_in/groups, kh, kw).  groups=C_in with unit weight depth is the
    depthwise case.  Differentiable in both arguments.
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d input must be rank 3 or 4, got {x.ndim}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be rank 4, got {w.ndim}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    squeeze = x.ndim == 3
    x4 = reshape(x, (1,) + x.shape) if squeeze else x
    b, c_in, h, wid = x4.shape
    c_out, c_in_g, kh, kw = w.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"groups {groups} must divide C_in {c_in} "
                         f"and C_out {c_out}")
    if c_in_g * groups != c_in:
        raise ShapeError(f"weight depth {c_in_g} * groups {groups} "
                         f"!= C_in {c_in}")
    ho, plo_h, phi_h = _out_and_pad(h, kh, stride, padding)
    wo, plo_w, phi_w = _out_and_pad(wid, kw, stride, padding)
    xp = np.pad(x4.data, ((0, 0), (0, 0), (plo_h, phi_h), (plo_w, phi_w)))
    hp, wp = xp.shape[2], xp.shape[3]
    crop = (slice(None), slice(None), slice(plo_h, plo_h + h),
            slice(plo_w, plo_w + wid))
    x_needs, w_needs = x4.requires_grad, w.requires_grad

    if groups == c_in and c_out == c_in:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[
            :, :, ::stride, ::stride]
        w2 = w.data[:, 0]
        out_data = np.einsum("bcxykl,ckl->bcxy", win, w2)

        def vjp_depthwise(g: Array) -> tuple[Array | None, Array | None]:
            gx = gw = None
            if w_needs:
                gw = np.einsum("bcxykl,bcxy->ckl", win, g)[:, None]
            if x_needs:
                d6 = np.einsum("bcxy,ckl->bcklxy", g, w2)
                gx = _col2im_add(d6, hp, wp, stride)[crop]
            return gx, gw

        out = record_op(out_data, (x4, w), vjp_depthwise, "conv2d")
    elif groups == 1:
        out_data, cols = _conv_forward_dense(xp, w.data, stride, ho, wo)
        wflat = w.data.reshape(c_out, -1)

        def vjp_dense(g: Array) -> tuple[Array | None, Array | None]:
            gf = g.reshape(b, c_out, ho * wo)
            gx = gw = None
            if w_needs:
                gw = np.matmul(gf, cols.transpose(0, 2, 1)).sum(0).reshape(
                    w.shape)
            if x_needs:
                d6 = np.matmul(wflat.T, gf).reshape(b, c_in, kh, kw, ho, wo)
                gx = _col2im_add(d6, hp, wp, stride)[crop]
            return gx, gw

        out = record_op(out_data, (x4, w), vjp_dense, "conv2d")
    else:
        pieces, col_list = [], []
        for gi in range(groups):
            xs = xp[:, gi * c_in_g:(gi + 1) * c_in_g]
            ws = w.data[gi * (c_out // groups):(gi + 1) * (c_out // groups)]
            o, cols = _conv_forward_dense(xs, ws, stride, ho, wo)
            pieces.append(o)
            col_list.append(cols)
        out_data = np.concatenate(pieces, axis=1)
        cg = c_out // groups

        def vjp_grouped(g: Array) -> tuple[Array | None, Array | None]:
            gx = np.zeros((b, c_in, hp, wp)) if x_needs else None
            gw = np.zeros(w.shape) if w_needs else None
            for gi in range(groups):
                gf = g[:, gi * cg:(gi + 1) * cg].reshape(b, cg, ho * wo)
                ws = w.data[gi * cg:(gi + 1) * cg].reshape(cg, -1)
                if w_needs:
                    gw[gi * cg:(gi + 1) * cg] = np.matmul(
                        gf, col_list[gi].transpose(0, 2, 1)).sum(0).reshape(
                            cg, c_in_g, kh, kw)
                if x_needs:
                    d6 = np.matmul(ws.T, gf).reshape(
                        b, c_in_g, kh, kw, ho, wo)
                    gx[:, gi * c_in_g:(gi + 1) * c_in_g] += _col2im_add(
                        d6, hp, wp, stride)
            return gx[crop] if x_needs else None, gw

        out = record_op(out_data, (x4, w), vjp_grouped, "conv2d")
    return reshape(out, out.shape[1:]) if squeeze else out


def channel_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale every (H, W) plane of x (B, C, H, W) by the gate s (B, C)."""
    if x.ndim != 4 or s.ndim != 2 or x.shape[:2] != s.shape:
        raise ShapeError(f"channel_scale: incompatible shapes {x.shape} "
                         f"and {s.shape}")
    sm = s.data[:, :, None, None]
    x_needs, s_needs = x.requires_grad, s.requires_grad
    xd = x.data

    def vjp(g: Array) -> tuple[Array | None, Array | None]:
        gx = g * sm if x_needs else None
        gs = (g * xd).sum(axis=(2, 3)) if s_needs else None
        return gx, gs

    return record_op(x.data * sm, (x, s), vjp, "channel_scale")


# ---------------------------------------------------------------------------
# blocks


def se_module(x: Tensor, w_reduce: Tensor, w_expand: Tensor) -> Tensor:
    """Squeeze-excitation: gate = sigmoid(relu(gap(x) Wr) We), out = gate*x.

    ``w_reduce`` is (C, hidden), ``w_expand`` is (hidden, C).  Accepts
    (C, H, W) or (B, C, H, W).
    """
    squeeze = x.ndim == 3
    x4 = reshape(x, (1,) + x.shape) if squeeze else x
    if x4.ndim != 4:
        raise ShapeError(f"se_module input must be rank 3 or 4, got {x.ndim}")
    c = x4.shape[1]
    if w_reduce.shape[0] != c or w_expand.shape[-1] != c or \
            w_reduce.shape[1] != w_expand.shape[0]:
        raise ShapeError(f"se_module: weights {w_reduce.shape}/"
                         f"{w_expand.shape} do not fit {c} channels")
    gate = sigmoid(matmul(relu(matmul(mean_axes(x4, (2, 3)), w_reduce)),
                          w_expand))
    out = channel_scale(x4, gate)
    return reshape(out, out.shape[1:]) if squeeze else out


def _se_hidden(channels: int, se_ratio: float) -> int:
    return max(1, int(round(channels * se_ratio)))


@dataclass
class SqueezeExciteParams:
    reduce: Tensor  # (C, hidden)
    expand: Tensor  # (hidden, C)


@dataclass
class FusedMBConvParams:
    conv: Tensor        # (C_mid, C_in, 3, 3) fused expand
    se: SqueezeExciteParams
    project: Tensor     # (C_out, C_mid, 1, 1)


@dataclass
class MBConvParams:
    expand: Tensor      # (C_mid, C_in, 1, 1)
    depthwise: Tensor   # (C_mid, 1, 3, 3)
    se: SqueezeExciteParams
    project: Tensor     # (C_out, C_mid, 1, 1)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...],
             fan_in: int, gain: float = 1.0) -> Tensor:
    bound = gain / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


# The conv stack has no normalization layers, so initialization must keep
# activation variance roughly constant by itself.  A uniform(+-b) kernel
# with fan_in inputs scales activation std by b*sqrt(fan_in/3); gelu on
# near-zero inputs halves std, and a fresh SE gate sits at sigmoid(0)=0.5.
# Gain 2*sqrt(3) makes a conv-then-gelu (or post-SE projection) step
# variance-neutral; sqrt(3) is the neutral gain for a plain linear conv.
GELU_CONV_GAIN = 2.0 * np.sqrt(3.0)
LINEAR_CONV_GAIN = np.sqrt(3.0)


def _init_se(c: int, se_ratio: float,
             rng: np.random.Generator) -> SqueezeExciteParams:
    hidden = _se_hidden(c, se_ratio)
    return SqueezeExciteParams(reduce=_uniform(rng, (c, hidden), c),
                               expand=_uniform(rng, (hidden, c), hidden))


def init_fused_mbconv_params(c_in: int, c_out: int, expand_ratio: int,
                             se_ratio: float,
                             rng: np.random.Generator) -> FusedMBConvParams:
    c_mid = c_in * expand_ratio
    return FusedMBConvParams(
        conv=_uniform(rng, (c_mid, c_in, 3, 3), c_in * 9, GELU_CONV_GAIN),
        se=_init_se(c_mid, se_ratio, rng),
        project=_uniform(rng, (c_out, c_mid, 1, 1), c_mid, GELU_CONV_GAIN),
    )


def init_mbconv_params(c_in: int, c_out: int, expand_ratio: int,
                       se_ratio: float,
                       rng: np.random.Generator) -> MBConvParams:
    c_mid = c_in * expand_ratio
    return MBConvParams(
        expand=_uniform(rng, (c_mid, c_in, 1, 1), c_in, GELU_CONV_GAIN),
        depthwise=_uniform(rng, (c_mid, 1, 3, 3), 9, GELU_CONV_GAIN),
        se=_init_se(c_mid, se_ratio, rng),
        project=_uniform(rng, (c_out, c_mid, 1, 1), c_mid, GELU_CONV_GAIN),
    )


def _maybe_residual(x: Tensor, y: Tensor, stride: int) -> Tensor:
    if stride == 1 and x.shape == y.shape:
        return add(x, y)
    return y


def _check_block_ratios(c_in: int, c_mid: int, hidden: int,
                        expand_ratio: int | None,
                        se_ratio: float | None) -> None:
    if expand_ratio is not None and c_mid != c_in * expand_ratio:
        raise ShapeError(f"params expand width {c_mid} != "
                         f"{expand_ratio} * {c_in}")
    if se_ratio is not None and hidden != _se_hidden(c_mid, se_ratio):
        raise ShapeError(f"params SE hidden {hidden} != "
                         f"ratio {se_ratio} of {c_mid}")


def fused_mbconv(x: Tensor, params: FusedMBConvParams, stride: int = 1,
                 expand_ratio: int | None = None,
                 se_ratio: float | None = None) -> Tensor:
    """Fused block: strided 3x3 expand conv, gelu, SE, 1x1 projection.

    The input is added back when stride is 1 and channel counts match.
    ``expand_ratio``/``se_ratio``, when given, are checked against the
    parameter shapes.
    """
    c_in = x.shape[-3]
    _check_block_ratios(c_in, params.conv.shape[0], params.se.reduce.shape[1],
                        expand_ratio, se_ratio)
    y = gelu(conv2d(x, params.conv, stride=stride, padding="same"))
    y = se_module(y, params.se.reduce, params.se.expand)
    y = conv2d(y, params.project)
    return _maybe_residual(x, y, stride)


def mbconv(x: Tensor, params: MBConvParams, stride: int = 1,
           expand_ratio: int | None = None,
           se_ratio: float | None = None) -> Tensor:
    """Inverted bottleneck: 1x1 expand, strided depthwise 3x3, SE, 1x1 project.

    Residual connection under the same rule as ``fused_mbconv``.
    """
    c_in = x.shape[-3]
    c_mid = params.expand.shape[0]
    _check_block_ratios(c_in, c_mid, params.se.reduce.shape[1],
                        expand_ratio, se_ratio)
    y = gelu(conv2d(x, params.expand))
    y = gelu(conv2d(y, params.depthwise, stride=stride, groups=c_mid))
    y = se_module(y, params.se.reduce, params.se.expand)
    y = conv2d(y, params.project)
    return _maybe_residual(x, y, stride)


def tokenize(features: Tensor, w_proj: Tensor) -> Tensor:
    """1x1-project features to d_model channels, then flatten to tokens.

    Token i holds the projected feature vector of spatial position
    (i // W, i % W); output is (n, d_model) or batched (B, n, d_model).
    """
    y = conv2d(features, w_proj)
    d = y.shape[-3]
    lead = y.shape[:-3]
    n = y.shape[-2] * y.shape[-1]
    return transpose_last(reshape(y, lead + (d, n)))


# ---------------------------------------------------------------------------
# model configuration


@dataclass(frozen=True)
class StageSpec:
    """One backbone stage: `repeat` blocks, the first taking the stride."""

    kind: str              # "fused_mbconv" or "mbconv"
    repeat: int
    out_channels: int
    stride: int
    expand_ratio: int = 1
    se_ratio: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in ("fused_mbconv", "mbconv"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.repeat < 1 or self.out_channels < 1:
            raise ValueError("repeat and out_channels must be >= 1")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.expand_ratio < 1:
            raise ValueError(f"expand_ratio must be >= 1, "
                             f"got {self.expand_ratio}")
        if not 0 < self.se_ratio <= 1:
            raise ValueError(f"se_ratio must be in (0, 1], "
                             f"got {self.se_ratio}")


DEFAULT_STAGES = (
    StageSpec("fused_mbconv", repeat=2, out_channels=16, stride=1),
    StageSpec("fused_mbconv", repeat=2, out_channels=32, stride=2),
    StageSpec("mbconv", repeat=2, out_channels=64, stride=2, expand_ratio=4),
)


@dataclass(frozen=True)
class BackboneConfig:
    """Stem plus stage layout of the convolutional feature extractor."""

    input_size: int = 64
    stem_channels: int = 16
    stages: tuple[StageSpec, ...] = DEFAULT_STAGES
    d_model: int = 64
    num_classes: int = 3

    def __post_init__(self) -> None:
        if self.input_size < 4:
            raise ValueError(f"input_size must be >= 4, got {self.input_size}")
        if min(self.stem_channels, self.d_model, self.num_classes) < 1:
            raise ValueError("stem_channels, d_model, num_classes "
                             "must be >= 1")
        if not self.stages:
            raise ValueError("at least one stage is required")

    def feature_size(self) -> int:
        """Spatial extent of the square feature map fed to the tokenizer."""
        size = -(-self.input_size // 2)  # stem stride 2
        for stage in self.stages:
            size = -(-size // stage.stride)
        return size


@dataclass(frozen=True)
class ModelConfig:
    """Backbone plus mixer geometry; the two must agree on the token grid."""

    backbone: BackboneConfig
    mixer: MixerConfig
    mixer_depth: int = 1

    def __post_init__(self) -> None:
        n = self.backbone.feature_size() ** 2
        if self.mixer.n_tokens != n:
            raise ValueError(f"mixer n_tokens {self.mixer.n_tokens} != "
                             f"backbone token count {n}")
        if self.mixer.d_model != self.backbone.d_model:
            raise ValueError(f"mixer d_model {self.mixer.d_model} != "
                             f"backbone d_model {self.backbone.d_model}")
        if self.mixer_depth < 1:
            raise ValueError(f"mixer_depth must be >= 1, "
                             f"got {self.mixer_depth}")


def default_model_config(input_size: int = 64, d_model: int = 64,
                         token_hidden: int = 128, channel_hidden: int = 512,
                         num_classes: int = 3,
                         mixer_depth: int = 1) -> ModelConfig:
    """The stock small model: 3-stage backbone and one mixer block."""
    backbone = BackboneConfig(input_size=input_size, d_model=d_model,
                              num_classes=num_classes)
    n = backbone.feature_size() ** 2
    mixer = MixerConfig(n_tokens=n, d_model=d_model,
                        token_hidden=token_hidden,
                        channel_hidden=channel_hidden)
    return ModelConfig(backbone=backbone, mixer=mixer,
                       mixer_depth=mixer_depth)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ModelParams:
    """Every learnable tensor of the classifier, in forward order."""

    stem: Tensor
    stages: list[list[FusedMBConvParams | MBConvParams]]
    tokenizer: Tensor
    mixer: list[MixerAttentionParams]
    head_weight: Tensor
    head_bias: Tensor

    def named(self) -> dict[str, Tensor]:
        """Stable unique path -> tensor map covering every parameter."""
        out: dict[str, Tensor] = {"stem.conv.weight": self.stem}
        for i, blocks in enumerate(self.stages):
            for j, blk in enumerate(blocks):
                base = f"stages.{i}.blocks.{j}"
                if isinstance(blk, FusedMBConvParams):
                    out[f"{base}.conv.weight"] = blk.conv
                else:
                    out[f"{base}.expand.weight"] = blk.expand
                    out[f"{base}.depthwise.weight"] = blk.depthwise
                out[f"{base}.se.reduce.weight"] = blk.se.reduce
                out[f"{base}.se.expand.weight"] = blk.se.expand
                out[f"{base}.project.weight"] = blk.project
        out["tokenizer.weight"] = self.tokenizer
        for k, mp in enumerate(self.mixer):
            base = f"mixer.{k}"
            out[f"{base}.ln1.gamma"] = mp.ln1_gamma
            out[f"{base}.ln1.beta"] = mp.ln1_beta
            for nm, ap in (("attn_tokens", mp.attn_tokens),
                           ("attn_channels", mp.attn_channels)):
                out[f"{base}.{nm}.wq"] = ap.wq
                out[f"{base}.{nm}.wk"] = ap.wk
                out[f"{base}.{nm}.wv"] = ap.wv
                out[f"{base}.{nm}.wo"] = ap.wo
            out[f"{base}.token_mlp.w1"] = mp.w1
            out[f"{base}.token_mlp.w2"] = mp.w2
            out[f"{base}.ln2.gamma"] = mp.ln2_gamma
            out[f"{base}.ln2.beta"] = mp.ln2_beta
            out[f"{base}.channel_mlp.v1"] = mp.v1
            out[f"{base}.channel_mlp.v2"] = mp.v2
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out


def config_from_named(named: dict[str, Tensor]) -> ModelConfig:
    """Reconstruct a ModelConfig from a checkpoint's parameter map.

    Weight shapes pin every width; strides are not stored, so the stage
    layout must match the default schedule (kind sequence and stage count),
    whose strides are then assumed.  Raises ValueError for maps from other
    layouts.
    """
    try:
        stem_channels = named["stem.conv.weight"].shape[0]
        d_model = named["tokenizer.weight"].shape[0]
        num_classes = named["head.weight"].shape[1]
    except KeyError as exc:
        raise ValueError(f"parameter map lacks {exc.args[0]!r}; "
                         f"not a model checkpoint") from exc
    stage_ids = sorted({int(k.split(".")[1]) for k in named
                        if k.startswith("stages.")})
    if stage_ids != list(range(len(DEFAULT_STAGES))):
        raise ValueError(f"checkpoint has stages {stage_ids}; only the "
                         f"{len(DEFAULT_STAGES)}-stage default layout can "
                         f"be reconstructed")
    stages = []
    for i, default in enumerate(DEFAULT_STAGES):
        prefix = f"stages.{i}.blocks."
        block_ids = sorted({int(k[len(prefix):].split(".")[0])
                            for k in named if k.startswith(prefix)})
        first = f"{prefix}0"
        fused = f"{first}.conv.weight" in named
        kind = "fused_mbconv" if fused else "mbconv"
        if kind != default.kind:
            raise ValueError(f"stage {i} is {kind}; the default layout "
                             f"expects {default.kind}")
        expand_key = f"{first}.conv.weight" if fused else \
            f"{first}.expand.weight"
        c_mid, c_in = named[expand_key].shape[:2]
        hidden = named[f"{first}.se.reduce.weight"].shape[1]
        stages.append(StageSpec(
            kind=kind, repeat=len(block_ids),
            out_channels=named[f"{first}.project.weight"].shape[0],
            stride=default.stride, expand_ratio=c_mid // c_in,
            se_ratio=hidden / c_mid))
    factor = 2  # stem stride
    for spec in stages:
        factor *= spec.stride
    n_tokens = named["mixer.0.attn_channels.wq"].shape[0]
    feature = round(n_tokens ** 0.5)
    if feature * feature != n_tokens:
        raise ValueError(f"token count {n_tokens} is not a square grid")
    depth = len({k.split(".")[1] for k in named if k.startswith("mixer.")})
    backbone_config = BackboneConfig(
        input_size=feature * factor, stem_channels=stem_channels,
        stages=tuple(stages), d_model=d_model, num_classes=num_classes)
    mixer_config = MixerConfig(
        n_tokens=n_tokens, d_model=d_model,
        token_hidden=named["mixer.0.token_mlp.w1"].shape[0],
        channel_hidden=named["mixer.0.channel_mlp.v1"].shape[0])
    return ModelConfig(backbone=backbone_config, mixer=mixer_config,
                       mixer_depth=depth)


def init_model_params(config: ModelConfig,
                      rng: np.random.Generator) -> ModelParams:
    """Seeded uniform init, variance-neutral through the conv stack."""
    bb = config.backbone
    stem = _uniform(rng, (bb.stem_channels, 1, 3, 3), 9, GELU_CONV_GAIN)
    stages: list[list[FusedMBConvParams | MBConvParams]] = []
    c_in = bb.stem_channels
    for stage in bb.stages:
        blocks: list[FusedMBConvParams | MBConvParams] = []
        for _ in range(stage.repeat):
            init = (init_fused_mbconv_params if stage.kind == "fused_mbconv"
                    else init_mbconv_params)
            blocks.append(init(c_in, stage.out_channels, stage.expand_ratio,
                               stage.se_ratio, rng))
            c_in = stage.out_channels
        stages.append(blocks)
    tokenizer = _uniform(rng, (bb.d_model, c_in, 1, 1), c_in,
                         LINEAR_CONV_GAIN)
    mixer = [init_mixer_params(config.mixer, rng)
             for _ in range(config.mixer_depth)]
    head_weight = _uniform(rng, (bb.d_model, bb.num_classes), bb.d_model)
    head_bias = Tensor(np.zeros(bb.num_classes), requires_grad=True)
    return ModelParams(stem=stem, stages=stages, tokenizer=tokenizer,
                       mixer=mixer, head_weight=head_weight,
                       head_bias=head_bias)


# ---------------------------------------------------------------------------
# forward


@dataclass
class ForwardTrace:
    """Forward pass with the intermediates attribution needs kept live."""

    conv_features: Tensor  # tokenizer conv output (B, d_model, Hf, Wf)
    tokens: Tensor         # (B, n, d_model)
    logits: Tensor         # (B, num_classes), pre-softmax
    probs: Tensor          # (B, num_classes)


def forward_trace(params: ModelParams, x: Tensor,
                  config: ModelConfig) -> ForwardTrace:
    """Run a (B, 1, H, W) batch through the full network."""
    bb = config.backbone
    if x.ndim != 4 or x.shape[1] != 1 or \
            x.shape[2] != bb.input_size or x.shape[3] != bb.input_size:
        raise ShapeError(f"expected batch (B, 1, {bb.input_size}, "
                         f"{bb.input_size}), got {x.shape}")
    y = gelu(conv2d(x, params.stem, stride=2, padding="same"))
    for stage, blocks in zip(bb.stages, params.stages):
        apply = fused_mbconv if stage.kind == "fused_mbconv" else mbconv
        for j, blk in enumerate(blocks):
            y = apply(y, blk, stride=stage.stride if j == 0 else 1)
    conv_features = conv2d(y, params.tokenizer)
    d = conv_features.shape[1]
    n = conv_features.shape[2] * conv_features.shape[3]
    tokens = transpose_last(reshape(conv_features,
                                    (conv_features.shape[0], d, n)))
    mixed = tokens
    for mp in params.mixer:
        mixed = mixer_attention_block(mixed, mp)
    pooled = mean_axes(mixed, (1,))  # GAP over tokens -> (B, d)
    bias_rows = matmul(Tensor(np.ones((x.shape[0], 1))),
                       reshape(params.head_bias, (1, bb.num_classes)))
    logits = add(matmul(pooled, params.head_weight), bias_rows)
    return ForwardTrace(conv_features=conv_features, tokens=tokens,
                        logits=logits, probs=softmax(logits))


def forward_batch(params: ModelParams, x: Tensor,
                  config: ModelConfig) -> Tensor:
    """Class probabilities for a (B, 1, H, W) batch."""
    return forward_trace(params, x, config).probs


def model_forward(params: ModelParams, image: Tensor,
                  config: ModelConfig) -> Tensor:
    """Class probabilities for one (1, H, W) grayscale image."""
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError(f"expected one grayscale image (1, H, W), "
                         f"got {image.shape}")
    batch = reshape(image, (1,) + image.shape)
    return reshape(forward_batch(params, batch, config),
                   (config.backbone.num_classes,))
