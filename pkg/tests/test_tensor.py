"""Autodiff core: forward values, gradients, and tape semantics."""

import numpy as np
import pytest

from mixfire.tensor import (
    NonFiniteError,
    ShapeError,
    TapeError,
    Tensor,
    add,
    constant,
    div,
    elu,
    exp,
    gelu,
    grad_check,
    layer_norm,
    log,
    matmul,
    mean_axes,
    mul,
    no_grad,
    relu,
    reset_tape,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    sum_all,
    sum_axes,
    transpose_last,
)

from conftest import matmul_oracle


# ---------------------------------------------------------------------------
# construction


def test_from_flat_builds_row_major():
    t = Tensor.from_flat((2, 3), [1, 2, 3, 4, 5, 6])
    assert t.shape == (2, 3)
    assert t.data[1, 0] == 4.0


def test_from_flat_rejects_wrong_count():
    with pytest.raises(ShapeError):
        Tensor.from_flat((2, 2), [1, 2, 3])


def test_item_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(3)).item()


# ---------------------------------------------------------------------------
# elementwise forward values


def test_binary_ops_match_numpy(rng):
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4)) + 2.0
    ta, tb = Tensor(a), Tensor(b)
    np.testing.assert_array_equal(add(ta, tb).data, a + b)
    np.testing.assert_array_equal(sub(ta, tb).data, a - b)
    np.testing.assert_array_equal(mul(ta, tb).data, a * b)
    np.testing.assert_array_equal(div(ta, tb).data, a / b)
    np.testing.assert_array_equal(scale(ta, 2.5).data, a * 2.5)


def test_binary_ops_reject_shape_mismatch():
    a, b = Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))
    for op in (add, sub, mul, div):
        with pytest.raises(ShapeError):
            op(a, b)


def test_activations_match_closed_forms(rng):
    x = rng.standard_normal(64)
    t = Tensor(x)
    np.testing.assert_array_equal(relu(t).data, np.maximum(x, 0.0))
    np.testing.assert_allclose(
        elu(t).data, np.where(x > 0, x, np.exp(np.minimum(x, 0.0)) - 1.0),
        rtol=0, atol=1e-15)
    np.testing.assert_allclose(sigmoid(t).data, 1.0 / (1.0 + np.exp(-x)),
                               rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(
        gelu(t).data, x / (1.0 + np.exp(-1.702 * x)),
        rtol=1e-15, atol=1e-15)
    np.testing.assert_array_equal(exp(t).data, np.exp(x))
    pos = Tensor(np.abs(x) + 0.1)
    np.testing.assert_array_equal(log(pos).data, np.log(pos.data))


def test_sigmoid_is_stable_at_extremes():
    out = sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0], atol=1e-300)


def test_nonfinite_forward_raises():
    with pytest.raises(NonFiniteError):
        exp(Tensor(np.array([1000.0])))
    with pytest.raises(NonFiniteError):
        log(Tensor(np.array([0.0])))


# ---------------------------------------------------------------------------
# structural ops and reductions


def test_reshape_transpose_roundtrip(rng):
    x = rng.standard_normal((2, 3, 4))
    t = Tensor(x)
    assert reshape(t, (6, 4)).shape == (6, 4)
    np.testing.assert_array_equal(transpose_last(t).data,
                                  np.swapaxes(x, -1, -2))
    with pytest.raises(ShapeError):
        transpose_last(Tensor(np.zeros(3)))


def test_reductions_match_numpy(rng):
    x = rng.standard_normal((2, 3, 4))
    t = Tensor(x)
    assert sum_all(t).item() == pytest.approx(x.sum(), rel=1e-15)
    np.testing.assert_allclose(sum_axes(t, (0, 2)).data, x.sum(axis=(0, 2)),
                               rtol=1e-15)
    np.testing.assert_allclose(mean_axes(t, 1).data, x.mean(axis=1),
                               rtol=1e-15)


def test_matmul_matches_triple_loop_oracle(rng):
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((5, 3))
    np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data,
                               matmul_oracle(a, b), rtol=0, atol=1e-13)


def test_matmul_batched_equals_per_sample(rng):
    a = rng.standard_normal((3, 4, 5))
    b = rng.standard_normal((5, 6))
    out = matmul(Tensor(a), Tensor(b)).data
    for i in range(3):
        np.testing.assert_allclose(out[i], matmul_oracle(a[i], b),
                                   rtol=0, atol=1e-13)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 4, 5))))


def test_softmax_rows_are_distributions(rng):
    x = rng.standard_normal((5, 7)) * 50
    out = softmax(Tensor(x)).data
    assert np.all(out > 0)
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(5), rtol=1e-14)
    manual = np.exp(x - x.max(-1, keepdims=True))
    manual /= manual.sum(-1, keepdims=True)
    np.testing.assert_allclose(out, manual, rtol=1e-14)


def test_layer_norm_matches_manual(rng):
    x = rng.standard_normal((4, 6)) * 3 + 1
    gamma = rng.standard_normal(6)
    beta = rng.standard_normal(6)
    out = layer_norm(Tensor(x), Tensor(gamma), Tensor(beta)).data
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    manual = gamma * (x - mu) / np.sqrt(var + 1e-5) + beta
    np.testing.assert_allclose(out, manual, rtol=1e-13, atol=1e-13)
    with pytest.raises(ShapeError):
        layer_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(6)))


# ---------------------------------------------------------------------------
# gradients


def test_grad_check_core_ops(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    c = Tensor(rng.standard_normal((3, 5)) + 3.0, requires_grad=True)

    def f():
        y = matmul(a, b)
        y = div(mul(y, y), c)
        return sum_all(sigmoid(y))

    assert grad_check(f, {"a": a, "b": b, "c": c}) < 1e-6


def test_grad_check_activation_chain(rng):
    x = Tensor(rng.standard_normal(40) + 0.3, requires_grad=True)

    def f():
        return sum_all(gelu(elu(scale(x, 0.7))))

    assert grad_check(f, {"x": x}) < 1e-6


def test_grad_check_softmax_layernorm(rng):
    x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    gamma = Tensor(np.ones(6), requires_grad=True)
    beta = Tensor(np.zeros(6), requires_grad=True)
    w = constant(rng.standard_normal((3, 6)))

    def f():
        return sum_all(mul(softmax(layer_norm(x, gamma, beta)), w))

    assert grad_check(f, {"x": x, "g": gamma, "b": beta}) < 1e-6


def test_leaf_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = add(mul(x, x), x)  # x^2 + x, dy/dx = 2x + 1
    y = sum_all(y)
    y.backward()
    assert x.grad == pytest.approx(np.array([5.0]))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    y = mul(x, x)
    with pytest.raises(ShapeError):
        y.backward()


def test_backward_without_tape_raises():
    reset_tape()
    with pytest.raises(TapeError):
        Tensor(np.zeros(1), requires_grad=True).backward()


def test_tape_is_consumed_once():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = sum_all(mul(x, x))
    loss.backward()
    with pytest.raises(TapeError):
        loss.backward()


def test_retain_keeps_intermediate_gradient():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    mid = mul(x, x)
    loss = sum_all(mid)
    loss.backward(retain=[mid])
    np.testing.assert_array_equal(mid.grad, np.ones(2))
    np.testing.assert_array_equal(x.grad, np.array([2.0, 4.0]))


def test_no_grad_disables_recording():
    x = Tensor(np.ones(2), requires_grad=True)
    reset_tape()
    with no_grad():
        loss = sum_all(mul(x, x))
    assert not loss.requires_grad
    with pytest.raises(TapeError):
        loss.backward()


def test_constant_gets_no_gradient():
    x = Tensor(np.ones(2), requires_grad=True)
    c = constant(np.full(2, 3.0))
    loss = sum_all(mul(x, c))
    loss.backward()
    np.testing.assert_array_equal(x.grad, c.data)
    assert c.grad is None
