"""Kernelized linear attention, its dense reference, and timing harness.

``linear_attention`` computes attention in the reordered kernel form, touching
only d x d and length-1 aggregates, so its cost grows linearly in sequence
length.  ``dense_attention_oracle`` materializes the full n x n weight matrix
and serves both as the mathematical reference for the kernel form and as the
quadratic softmax baseline for the scaling benchmark.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    constant,
    div,
    elu,
    matmul,
    scale,
    softmax,
    transpose_last,
)

# Guards underflow in the normalizer; phi > 0 makes a true zero impossible.
DENOMINATOR_EPS = 1e-9


@dataclass
class AttentionParams:
    """Square projection matrices of one attention layer (width d_model)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]


def init_attention_params(d_model: int,
                          rng: np.random.Generator) -> AttentionParams:
    """Seeded uniform(-1/sqrt(d_model), 1/sqrt(d_model)) projections."""
    bound = 1.0 / np.sqrt(d_model)

    def w() -> Tensor:
        return Tensor(rng.uniform(-bound, bound, (d_model, d_model)),
                      requires_grad=True)

    return AttentionParams(wq=w(), wk=w(), wv=w(), wo=w())


def phi(x: Tensor) -> Tensor:
    """Positive kernel feature map elu(x) + 1."""
    return add(elu(x), constant(np.ones(x.shape)))


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> tuple[int, int]:
    if q.ndim not in (2, 3):
        raise ShapeError(f"attention inputs must be rank 2 or 3, got {q.ndim}")
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(
            f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    n, d = q.shape[-2], q.shape[-1]
    if n < 1:
        raise ShapeError("attention needs at least one position")
    return n, d


def _tile_normalizer(num: Tensor, den: Tensor, d: int) -> Tensor:
    # den has a trailing extent of 1; tile it across the d output channels
    # and add the underflow guard before dividing.
    den_full = matmul(den, constant(np.ones((1, d))))
    guard = constant(np.full(den_full.shape, DENOMINATOR_EPS))
    return div(num, add(den_full, guard))


def linear_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Kernel attention in the linear-cost order.

    Aggregates phi(K)^T V (d x d) and phi(K)^T 1 (d) first, so no n x n
    buffer is ever formed; every output row is the kernel-weighted convex
    combination of the value rows.  Accepts (n, d) or batched (B, n, d).
    """
    n, d = _check_qkv(q, k, v)
    pq = phi(q)
    pkt = transpose_last(phi(k))
    num = matmul(pq, matmul(pkt, v))
    den = matmul(pq, matmul(pkt, constant(np.ones((n, 1)))))
    return _tile_normalizer(num, den, d)


def dense_attention_oracle(q: Tensor, k: Tensor, v: Tensor,
                           kernel: str = "phi") -> Tensor:
    """Reference attention that materializes the full n x n weight matrix.

    kernel="phi" row-normalizes phi(Q) phi(K)^T with the same denominator
    guard as ``linear_attention``, so the two agree to reassociation error.
    kernel="softmax" is the standard 1/sqrt(d)-scaled quadratic baseline.
    """
    n, d = _check_qkv(q, k, v)
    if kernel == "phi":
        w = matmul(phi(q), transpose_last(phi(k)))
        num = matmul(w, v)
        den = matmul(w, constant(np.ones((n, 1))))
        return _tile_normalizer(num, den, d)
    if kernel == "softmax":
        logits = scale(matmul(q, transpose_last(k)), 1.0 / np.sqrt(d))
        return matmul(softmax(logits), v)
    raise ValueError(f"unknown kernel {kernel!r}")


def attention_layer(x: Tensor, params: AttentionParams) -> Tensor:
    """Single-head projected linear attention with output projection."""
    d = params.d_model
    if x.shape[-1] != d:
        raise ShapeError(
            f"input width {x.shape[-1]} does not match params d_model {d}")
    q = matmul(x, params.wq)
    k = matmul(x, params.wk)
    v = matmul(x, params.wv)
    return matmul(linear_attention(q, k, v), params.wo)


@dataclass
class BenchResult:
    """Median wall-clock timings per sequence length plus log-log slopes."""

    rows: list[tuple[int, float, float]]  # (n, linear_us, quadratic_us)
    linear_slope: float
    quadratic_slope: float

    def to_csv(self) -> str:
        lines = ["n,linear_us,quadratic_us"]
        lines += [f"{n},{lu:.3f},{qu:.3f}" for n, lu, qu in self.rows]
        lines.append(f"# slopes: linear={self.linear_slope:.4f} "
                     f"quadratic={self.quadratic_slope:.4f}")
        return "\n".join(lines) + "\n"


def _median_time(fn, repeats: int) -> float:
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) * 1e6


def bench_attention(lengths: list[int], d: int,
                    repeats: int = 3, seed: int = 0) -> BenchResult:
    """Time linear attention against the dense softmax baseline.

    Runs single-threaded over strictly increasing sequence lengths (at least
    four, so the slope fit is meaningful) and reports median microseconds per
    call plus fitted log-log slopes.
    """
    if len(lengths) < 4:
        raise ValueError("need at least 4 lengths for a reliable slope fit")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError("lengths must be strictly increasing")
    rng = np.random.default_rng(seed)
    rows = []
    for n in lengths:
        q = Tensor(rng.standard_normal((n, d)))
        k = Tensor(rng.standard_normal((n, d)))
        v = Tensor(rng.standard_normal((n, d)))
        lin = _median_time(lambda: linear_attention(q, k, v), repeats)
        quad = _median_time(
            lambda: dense_attention_oracle(q, k, v, kernel="softmax"),
            repeats)
        rows.append((n, lin, quad))
    logn = np.log(np.asarray(lengths, dtype=float))
    lin_slope = float(np.polyfit(logn, np.log([r[1] for r in rows]), 1)[0])
    quad_slope = float(np.polyfit(logn, np.log([r[2] for r in rows]), 1)[0])
    return BenchResult(rows, lin_slope, quad_slope)
