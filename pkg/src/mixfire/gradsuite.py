"""Finite-difference verification of every differentiable building block.

Each check wraps one operation in a small scalar loss (a fixed random
weighting of the output, so no gradient direction is silently zero) and
compares the reverse-mode gradient against central differences.  The full
model is checked on a reduced configuration with a sampled subset of
coordinates to keep the suite fast.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import backbone, mixer, tensor
from .attention import attention_layer, init_attention_params, linear_attention
from .tensor import Tensor, constant, grad_check, mul, sum_all
from .train import cross_entropy_batch

TOLERANCE = 1e-4


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    return sum_all(mul(out, constant(rng.standard_normal(out.shape))))


def _away_from_kinks(rng: np.random.Generator, shape) -> np.ndarray:
    # keep |x| >= 0.1 so relu/elu finite differences never straddle 0
    mag = rng.uniform(0.2, 1.5, shape)
    return mag * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)


def run_gradient_suite(seed: int = 0,
                       model_sample: int = 200) -> list[tuple[str, float]]:
    """All checks as (name, max relative error) pairs, in run order."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, Callable[[], float]]] = []

    def check(name: str):
        def register(fn: Callable[[], float]):
            checks.append((name, fn))
            return fn
        return register

    # -- elementwise and core ops -------------------------------------
    def simple(name: str, op, data: np.ndarray) -> None:
        @check(name)
        def _():
            x = Tensor(data.copy(), requires_grad=True)
            w = constant(rng.standard_normal(x.shape))
            return grad_check(lambda: sum_all(mul(op(x), w)), {"x": x})

    plain = rng.standard_normal((4, 5))
    simple("relu", tensor.relu, _away_from_kinks(rng, (4, 5)))
    simple("elu", tensor.elu, _away_from_kinks(rng, (4, 5)))
    simple("sigmoid", tensor.sigmoid, plain)
    simple("gelu", tensor.gelu, plain)
    simple("exp", tensor.exp, plain)
    simple("log", tensor.log, np.abs(plain) + 0.5)
    simple("softmax", tensor.softmax, rng.standard_normal((3, 6)))

    @check("add_sub_mul_div_scale")
    def _():
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        w = constant(rng.standard_normal((3, 4)))

        def f():
            out = tensor.div(tensor.mul(tensor.add(a, b),
                                        tensor.sub(a, b)), b)
            return sum_all(mul(tensor.scale(out, 0.7), w))

        return grad_check(f, {"a": a, "b": b})

    @check("matmul")
    def _():
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        w = constant(rng.standard_normal((3, 2)))
        return grad_check(lambda: sum_all(mul(tensor.matmul(a, b), w)),
                          {"a": a, "b": b})

    @check("matmul_batched")
    def _():
        a = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        w = constant(rng.standard_normal((2, 3, 5)))
        return grad_check(lambda: sum_all(mul(tensor.matmul(a, b), w)),
                          {"a": a, "b": b})

    @check("reductions_reshape_transpose")
    def _():
        x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
        w = constant(rng.standard_normal((4, 6)))

        def f():
            y = tensor.transpose_last(tensor.reshape(x, (6, 4)))
            part = sum_all(mul(y, w))
            return tensor.add(part, tensor.mean_axes(tensor.sum_axes(
                x, (0, 1)), (0,)))

        return grad_check(f, {"x": x})

    @check("layer_norm")
    def _():
        x = Tensor(rng.standard_normal((5, 6)), requires_grad=True)
        gamma = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
        beta = Tensor(rng.standard_normal(6), requires_grad=True)
        w = constant(rng.standard_normal((5, 6)))
        return grad_check(
            lambda: sum_all(mul(tensor.layer_norm(x, gamma, beta), w)),
            {"x": x, "gamma": gamma, "beta": beta})

    # -- convolution stack ---------------------------------------------
    @check("conv2d")
    def _():
        x = Tensor(rng.standard_normal((2, 2, 6, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        sel = constant(rng.standard_normal((2, 3, 3, 3)))
        return grad_check(
            lambda: sum_all(mul(backbone.conv2d(x, w, stride=2), sel)),
            {"x": x, "w": w})

    @check("conv2d_depthwise")
    def _():
        x = Tensor(rng.standard_normal((2, 4, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 1, 3, 3)), requires_grad=True)
        sel = constant(rng.standard_normal((2, 4, 5, 5)))
        return grad_check(
            lambda: sum_all(mul(backbone.conv2d(x, w, groups=4), sel)),
            {"x": x, "w": w})

    @check("conv2d_grouped")
    def _():
        x = Tensor(rng.standard_normal((6, 5, 5)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
        sel = constant(rng.standard_normal((4, 3, 3)))
        return grad_check(
            lambda: sum_all(mul(backbone.conv2d(x, w, stride=2, groups=2),
                                sel)),
            {"x": x, "w": w})

    @check("se_module")
    def _():
        x = Tensor(rng.standard_normal((2, 4, 3, 3)), requires_grad=True)
        wr = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        we = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        sel = constant(rng.standard_normal((2, 4, 3, 3)))
        return grad_check(
            lambda: sum_all(mul(backbone.se_module(x, wr, we), sel)),
            {"x": x, "wr": wr, "we": we})

    @check("fused_mbconv")
    def _():
        p = backbone.init_fused_mbconv_params(3, 3, 2, 0.5, rng)
        x = Tensor(rng.standard_normal((3, 6, 6)), requires_grad=True)
        sel = constant(rng.standard_normal((3, 6, 6)))
        tensors = {"x": x, "conv": p.conv, "proj": p.project,
                   "se_r": p.se.reduce, "se_e": p.se.expand}
        return grad_check(
            lambda: sum_all(mul(backbone.fused_mbconv(x, p, stride=1), sel)),
            tensors)

    @check("mbconv")
    def _():
        p = backbone.init_mbconv_params(3, 3, 2, 0.5, rng)
        x = Tensor(rng.standard_normal((3, 6, 6)), requires_grad=True)
        sel = constant(rng.standard_normal((3, 6, 6)))
        tensors = {"x": x, "expand": p.expand, "dw": p.depthwise,
                   "proj": p.project, "se_r": p.se.reduce}
        return grad_check(
            lambda: sum_all(mul(backbone.mbconv(x, p, stride=1), sel)),
            tensors)

    # -- attention and mixer --------------------------------------------
    @check("linear_attention")
    def _():
        q = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        k = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        v = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        w = constant(rng.standard_normal((6, 4)))
        return grad_check(
            lambda: sum_all(mul(linear_attention(q, k, v), w)),
            {"q": q, "k": k, "v": v})

    @check("attention_layer")
    def _():
        p = init_attention_params(5, rng)
        x = Tensor(rng.standard_normal((7, 5)), requires_grad=True)
        w = constant(rng.standard_normal((7, 5)))
        tensors = {"x": x, "wq": p.wq, "wk": p.wk, "wv": p.wv, "wo": p.wo}
        return grad_check(lambda: sum_all(mul(attention_layer(x, p), w)),
                          tensors)

    cfg = mixer.MixerConfig(n_tokens=6, d_model=4, token_hidden=5,
                            channel_hidden=7)

    def mixer_case(name: str, sublayer) -> None:
        @check(name)
        def _():
            p = mixer.init_mixer_params(cfg, rng)
            x = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
            w = constant(rng.standard_normal((6, 4)))
            tensors = {"x": x, "w1": p.w1, "w2": p.w2, "v1": p.v1,
                       "v2": p.v2, "ln1_g": p.ln1_gamma, "ln2_g": p.ln2_gamma,
                       "attn_t_wq": p.attn_tokens.wq,
                       "attn_c_wq": p.attn_channels.wq}
            return grad_check(lambda: sum_all(mul(sublayer(x, p), w)),
                              tensors)

    mixer_case("token_mixing_sublayer", mixer.token_mixing_sublayer)
    mixer_case("channel_mixing_sublayer", mixer.channel_mixing_sublayer)
    mixer_case("mixer_attention_block", mixer.mixer_attention_block)

    # -- loss and full model ---------------------------------------------
    @check("cross_entropy_batch")
    def _():
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        labels = rng.integers(0, 3, 4)
        return grad_check(
            lambda: cross_entropy_batch(tensor.softmax(x), labels),
            {"logits": x})

    @check("full_model_subsampled")
    def _():
        small = backbone.default_model_config(input_size=32, d_model=8,
                                              token_hidden=8,
                                              channel_hidden=16)
        params = backbone.init_model_params(small, np.random.default_rng(
            seed + 1))
        image = Tensor(rng.uniform(0.0, 1.0, (2, 1, 32, 32)))
        labels = np.array([0, 2])

        def f():
            probs = backbone.forward_batch(params, image, small)
            return cross_entropy_batch(probs, labels)

        coord_rng = np.random.default_rng(seed + 2)
        return grad_check(f, params.named(), sample=model_sample,
                          rng=coord_rng)

    return [(name, fn()) for name, fn in checks]


def format_suite(results: list[tuple[str, float]]) -> str:
    """Aligned pass/fail lines plus a one-line verdict."""
    width = max(len(name) for name, _ in results)
    lines = []
    for name, err in results:
        status = "ok" if err < TOLERANCE else "FAIL"
        lines.append(f"{name:<{width}}  {err:12.3e}  {status}")
    worst = max(err for _, err in results)
    verdict = "all gradients verified" if worst < TOLERANCE else \
        "GRADIENT CHECK FAILED"
    lines.append(f"worst relative error {worst:.3e} "
                 f"(tolerance {TOLERANCE:g}): {verdict}")
    return "\n".join(lines)
