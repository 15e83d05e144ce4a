"""Dense float64 tensors with reverse-mode automatic differentiation.

Every layer in the model stack is built from the primitives here, so analytic
gradients exist end to end.  Operations record onto an implicit per-thread
GradTape; ``Tensor.backward`` replays that tape in reverse execution order
exactly once.  There is no implicit broadcasting: binary elementwise ops
require equal shapes, the only scalar shortcut is ``scale``.  All forward
results are checked for NaN/Inf, so overflow is an error rather than a value.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf from finite inputs."""


class TapeError(RuntimeError):
    """The gradient tape is missing, foreign, or already consumed."""


class _OpRecord:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: "Tensor", parents: tuple, vjp: Callable):
        self.out = out
        self.parents = parents
        self.vjp = vjp


class GradTape:
    """Ordered record of executed operations for one forward/backward pass.

    The tape is replayed in reverse execution order by ``Tensor.backward`` and
    is consumed by it; a second backward over the same tape raises TapeError.
    """

    def __init__(self):
        self.records: list[_OpRecord] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.records)


_state = threading.local()


def _tls():
    if not hasattr(_state, "tape"):
        _state.tape = None
        _state.enabled = True
    return _state


def active_tape() -> GradTape | None:
    """The tape currently recording on this thread, if any."""
    return _tls().tape


def reset_tape() -> None:
    """Drop the current thread's tape, discarding any recorded operations."""
    _tls().tape = None


@contextmanager
def no_grad():
    """Context in which operations are not recorded for differentiation."""
    s = _tls()
    prev = s.enabled
    s.enabled = False
    try:
        yield
    finally:
        s.enabled = prev


class Tensor:
    """Row-major dense array of 64-bit floats, optionally carrying a gradient.

    ``requires_grad`` marks leaves whose gradients ``backward`` should
    populate.  Outputs of recorded operations propagate the flag but are not
    leaves; their gradients are only kept when requested via ``retain``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self._leaf = True

    @classmethod
    def from_flat(cls, shape: Sequence[int], values: Sequence[float],
                  requires_grad: bool = False) -> "Tensor":
        """Build a tensor from row-major flat values with an explicit shape."""
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeError(f"all extents must be >= 1, got {shape}")
        values = np.asarray(values, dtype=np.float64).ravel()
        n = int(np.prod(shape)) if shape else 1
        if values.size != n:
            raise ShapeError(
                f"shape {shape} needs {n} values, got {values.size}")
        return cls(values.reshape(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; semantics live in the module-level functions.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def backward(self, retain: Iterable["Tensor"] = ()) -> None:
        """Reverse-mode sweep from this scalar, populating leaf gradients.

        Replays the active tape once in reverse execution order; the tape is
        consumed afterwards.  Tensors passed in ``retain`` (recorded
        intermediates) get their gradient stored as well.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got {self.shape}")
        s = _tls()
        tape = s.tape
        if tape is None:
            raise TapeError("no gradient tape was recorded")
        if tape.consumed:
            raise TapeError("gradient tape already consumed by backward")
        if not any(rec.out is self for rec in tape.records):
            raise TapeError("tensor was not recorded on the active tape")

        want = {id(t): t for t in retain}
        grads: dict[int, Array] = {id(self): np.ones_like(self.data)}
        for rec in reversed(tape.records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            if id(rec.out) in want:
                rec.out.grad = g.copy()
            for parent, pg in zip(rec.parents, rec.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._leaf:
                    if parent.grad is None:
                        parent.grad = pg.copy()
                    else:
                        parent.grad += pg
                else:
                    pid = id(parent)
                    if pid in grads:
                        grads[pid] = grads[pid] + pg
                    else:
                        grads[pid] = pg
        tape.consumed = True
        s.tape = None


def _check_finite(data: Array, op: str) -> None:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def record_op(out_data: Array, parents: Sequence[Tensor],
              vjp: Callable[[Array], Sequence[Array | None]],
              op: str) -> Tensor:
    """Wrap an op result in a Tensor and record it on the thread's tape.

    ``vjp`` maps the output gradient to per-parent gradients (None for
    parents that need none).  Recording is skipped when gradients are
    disabled or no parent requires them.
    """
    _check_finite(out_data, op)
    out = Tensor(out_data)
    s = _tls()
    if s.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._leaf = False
        if s.tape is None or s.tape.consumed:
            s.tape = GradTape()
        s.tape.records.append(_OpRecord(out, tuple(parents), vjp))
    return out


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def constant(data) -> Tensor:
    """A tensor that never requires gradients (weights of dead branches,
    one-hot selectors, tiling helpers)."""
    return Tensor(data, requires_grad=False)


# ---------------------------------------------------------------------------
# elementwise operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return record_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return record_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return record_op(a.data * b.data, (a, b),
                     lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "div")
    out = a.data / b.data
    return record_op(out, (a, b),
                     lambda g: (g / b.data, -g * out / b.data), "div")


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar; the one permitted broadcast."""
    s = float(s)
    return record_op(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op(np.where(mask, x.data, 0.0), (x,),
                     lambda g: (g * mask,), "relu")


def elu(x: Tensor) -> Tensor:
    """elu with alpha = 1: x for x > 0, exp(x) - 1 otherwise."""
    pos = x.data > 0
    ex = np.exp(np.where(pos, 0.0, x.data))
    out = np.where(pos, x.data, ex - 1.0)
    deriv = np.where(pos, 1.0, ex)
    return record_op(out, (x,), lambda g: (g * deriv,), "elu")


def _sigmoid_array(x: Array) -> Array:
    # exp of a nonpositive argument never overflows.
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, ex) / (1.0 + ex)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_array(x.data)
    return record_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NonFiniteError
        out = np.exp(x.data)
    return record_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return record_op(out, (x,), lambda g: (g / x.data,), "log")


def gelu(x: Tensor) -> Tensor:
    """Smooth MLP/conv activation: x * sigmoid(1.702 x), fused."""
    xd = x.data
    s = _sigmoid_array(1.702 * xd)

    def vjp(g: Array) -> tuple[Array]:
        return (g * (s * (1.0 + 1.702 * xd * (1.0 - s))),)

    return record_op(xd * s, (x,), vjp, "gelu")


# ---------------------------------------------------------------------------
# structural and reduction operations
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = x.shape
    return record_op(x.data.reshape(shape), (x,),
                     lambda g: (g.reshape(old),), "reshape")


def transpose_last(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError("transpose_last needs rank >= 2")
    return record_op(np.swapaxes(x.data, -1, -2), (x,),
                     lambda g: (np.swapaxes(g, -1, -2),), "transpose_last")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record_op(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),), "sum_all")


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def sum_axes(x: Tensor, axes) -> Tensor:
    axes = _normalize_axes(axes, x.ndim)
    shape = x.shape
    keep = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def vjp(g):
        return (np.broadcast_to(g.reshape(keep), shape).copy(),)

    return record_op(x.data.sum(axis=axes), (x,), vjp, "sum_axes")


def mean_axes(x: Tensor, axes) -> Tensor:
    axes = _normalize_axes(axes, x.ndim)
    shape = x.shape
    keep = tuple(1 if i in axes else s for i, s in enumerate(shape))
    count = float(np.prod([shape[a] for a in axes]))

    def vjp(g):
        return (np.broadcast_to(g.reshape(keep) / count, shape).copy(),)

    return record_op(x.data.mean(axis=axes), (x,), vjp, "mean_axes")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Accepted shapes: 2-D @ 2-D, stacked @ 2-D, 2-D @ stacked, and stacked @
    stacked with identical leading extents.  A 2-D operand is shared across
    the other side's leading dimensions; its gradient sums over them.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents {a.shape} @ {b.shape} do not agree")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(
            f"matmul: leading extents {a.shape} and {b.shape} differ")
    a_needs = a.requires_grad
    b_needs = b.requires_grad
    a_nd, b_nd = a.ndim, b.ndim
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a_needs:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            if a_nd == 2 and ga.ndim > 2:
                ga = ga.sum(axis=tuple(range(ga.ndim - 2)))
        if b_needs:
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            if b_nd == 2 and gb.ndim > 2:
                gb = gb.sum(axis=tuple(range(gb.ndim - 2)))
        return (ga, gb)

    return record_op(np.matmul(ad, bd), (a, b), vjp, "matmul")


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return record_op(out, (x,), vjp, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean and unit population
    variance, then apply the affine terms gamma and beta."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine terms must have shape ({d},), got "
            f"{gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return record_op(out, (x, gamma, beta), vjp, "layer_norm")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor],
               h: float = 1e-5, sample: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients of a scalar-valued closure against central
    finite differences.

    ``f`` must be deterministic and close over the tensors in ``params``.
    Returns the maximum over checked entries of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.  ``sample``
    limits the check to that many randomly chosen parameter entries.
    """
    items = list(params.items())
    for _, t in items:
        t.grad = None
    reset_tape()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError("grad_check requires a scalar-valued function")
    loss.backward()
    analytic = {name: (t.grad if t.grad is not None else
                       np.zeros_like(t.data))
                for name, t in items}

    coords: list[tuple[str, Tensor, int]] = []
    for name, t in items:
        coords.extend((name, t, i) for i in range(t.data.size))
    if sample is not None and sample < len(coords):
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=sample, replace=False)
        coords = [coords[i] for i in picks]

    max_rel = 0.0
    with no_grad():
        for name, t, i in coords:
            flat = t.data.reshape(-1)
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > max_rel:
                max_rel = rel
    return max_rel
