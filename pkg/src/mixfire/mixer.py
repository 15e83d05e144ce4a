"""Attention-augmented mixer block over a (n tokens, d channels) grid.

The block runs two residual sublayers.  Token mixing normalizes the grid,
attends along the token axis, then applies a two-layer MLP across tokens.
Channel mixing transposes the grid so channels become the sequence, attends
along the channel axis, applies its own MLP, and transposes back.  The token
and channel attention layers carry independent parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, attention_layer, init_attention_params
from .tensor import (
    ShapeError,
    Tensor,
    add,
    gelu,
    layer_norm,
    matmul,
    transpose_last,
)

# (token_hidden, channel_hidden) capacity presets, smallest to largest.
MIXER_PRESETS = ((64, 256), (128, 512), (256, 1024))


@dataclass(frozen=True)
class MixerConfig:
    """Grid geometry and MLP widths of one mixer block."""

    n_tokens: int
    d_model: int
    token_hidden: int = 128
    channel_hidden: int = 512

    def __post_init__(self) -> None:
        for name in ("n_tokens", "d_model", "token_hidden", "channel_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got "
                                 f"{getattr(self, name)}")


@dataclass
class MixerAttentionParams:
    """All learnable tensors of one mixer block."""

    ln1_gamma: Tensor
    ln1_beta: Tensor
    attn_tokens: AttentionParams   # d_model x d_model projections
    w1: Tensor                     # (token_hidden, n_tokens)
    w2: Tensor                     # (n_tokens, token_hidden)
    ln2_gamma: Tensor
    ln2_beta: Tensor
    attn_channels: AttentionParams  # n_tokens x n_tokens projections
    v1: Tensor                     # (channel_hidden, d_model)
    v2: Tensor                     # (d_model, channel_hidden)


def init_mixer_params(config: MixerConfig,
                      rng: np.random.Generator) -> MixerAttentionParams:
    """Seeded init: unit/zero layer norms, uniform(+-1/sqrt(fan_in)) MLPs."""
    n, d = config.n_tokens, config.d_model

    def mlp(rows: int, cols: int) -> Tensor:
        bound = 1.0 / np.sqrt(cols)
        return Tensor(rng.uniform(-bound, bound, (rows, cols)),
                      requires_grad=True)

    return MixerAttentionParams(
        ln1_gamma=Tensor(np.ones(d), requires_grad=True),
        ln1_beta=Tensor(np.zeros(d), requires_grad=True),
        attn_tokens=init_attention_params(d, rng),
        w1=mlp(config.token_hidden, n),
        w2=mlp(n, config.token_hidden),
        ln2_gamma=Tensor(np.ones(d), requires_grad=True),
        ln2_beta=Tensor(np.zeros(d), requires_grad=True),
        attn_channels=init_attention_params(n, rng),
        v1=mlp(config.channel_hidden, d),
        v2=mlp(d, config.channel_hidden),
    )


def _check_grid(x: Tensor, params: MixerAttentionParams) -> None:
    if x.ndim not in (2, 3):
        raise ShapeError(f"mixer input must be rank 2 or 3, got {x.ndim}")
    n, d = params.w1.shape[1], params.ln1_gamma.shape[0]
    if x.shape[-2] != n or x.shape[-1] != d:
        raise ShapeError(f"mixer input grid {x.shape[-2:]} does not match "
                         f"params grid ({n}, {d})")


def token_mixing_sublayer(x: Tensor, params: MixerAttentionParams) -> Tensor:
    """x + W2 gelu(W1 attn(LN(x))), mixing along the token axis."""
    _check_grid(x, params)
    y = layer_norm(x, params.ln1_gamma, params.ln1_beta)
    y = attention_layer(y, params.attn_tokens)
    y = matmul(params.w2, gelu(matmul(params.w1, y)))
    return add(x, y)


def channel_mixing_sublayer(z: Tensor, params: MixerAttentionParams) -> Tensor:
    """z + [V2 gelu(V1 attn(LN(z)^T))]^T, mixing along the channel axis."""
    _check_grid(z, params)
    y = transpose_last(layer_norm(z, params.ln2_gamma, params.ln2_beta))
    y = attention_layer(y, params.attn_channels)
    y = matmul(params.v2, gelu(matmul(params.v1, y)))
    return add(z, transpose_last(y))


def mixer_attention_block(x: Tensor,
                          params: MixerAttentionParams) -> Tensor:
    """Token-mixing sublayer followed by channel-mixing sublayer."""
    return channel_mixing_sublayer(token_mixing_sublayer(x, params), params)
