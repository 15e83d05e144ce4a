"""Cross-entropy loss, Adam, and the mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import (
    ModelConfig,
    ModelParams,
    forward_batch,
    init_model_params,
)
from .data import Dataset
from .tensor import (
    ShapeError,
    Tensor,
    add,
    constant,
    log,
    mul,
    no_grad,
    reset_tape,
    sum_all,
)

LOG_GUARD = 1e-12  # keeps -log finite when a probability underflows


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop hyperparameters.

    The 12-epoch default saturates held-out accuracy on the synthetic task
    while keeping a five-fold run plus its determinism rerun inside a
    20-minute single-core budget.
    """

    epochs: int = 12
    batch_size: int = 16
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, "
                             f"got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0 <= beta < 1:
                raise ValueError(f"{name} must be in [0, 1), got {beta}")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")


def _nll(probs: Tensor, one_hot: np.ndarray, divisor: float) -> Tensor:
    guarded = add(probs, constant(np.full(probs.shape, LOG_GUARD)))
    return sum_all(mul(log(guarded), constant(-one_hot / divisor)))


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """-log(probs[label] + 1e-12) for one probability row."""
    if probs.ndim != 1:
        raise ShapeError(f"expected a probability vector, got {probs.shape}")
    if not 0 <= label < probs.shape[0]:
        raise ValueError(f"label {label} out of range "
                         f"[0, {probs.shape[0]})")
    one_hot = np.zeros(probs.shape)
    one_hot[label] = 1.0
    return _nll(probs, one_hot, 1.0)


def cross_entropy_batch(probs: Tensor, labels) -> Tensor:
    """Mean of per-row cross-entropy over a (B, C) probability batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probs {probs.shape} and labels {labels.shape} "
                         f"do not line up")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"labels out of range [0, {probs.shape[1]})")
    one_hot = np.zeros(probs.shape)
    one_hot[np.arange(len(labels)), labels] = 1.0
    return _nll(probs, one_hot, float(len(labels)))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment estimates per parameter plus the step count."""

    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict)
    step: int = 0


def adam_init(named: dict[str, Tensor]) -> AdamState:
    return AdamState(moments={
        name: (np.zeros(t.shape), np.zeros(t.shape))
        for name, t in named.items()
    })


def adam_step(named: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig) -> AdamState:
    """One in-place Adam update with bias correction.

    ``grads`` maps parameter names to gradient arrays; parameters without
    an entry are left untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    scale1 = 1.0 - b1 ** t
    scale2 = 1.0 - b2 ** t
    for name, grad in grads.items():
        param = named[name]
        if grad.shape != param.shape:
            raise ShapeError(f"gradient for {name!r} has shape {grad.shape}, "
                             f"parameter has {param.shape}")
        m, v = state.moments[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        update = (m / scale1) / (np.sqrt(v / scale2) + config.adam_eps)
        param.data -= config.learning_rate * update
    return state


# ---------------------------------------------------------------------------
# training loop


def _zero_grads(named: dict[str, Tensor]) -> None:
    for t in named.values():
        t.grad = None


def _stack_batch(images: list[np.ndarray]) -> Tensor:
    return Tensor(np.stack(images, axis=0))


def train(dataset: Dataset, model_config: ModelConfig,
          train_config: TrainConfig) -> tuple[ModelParams, list[float]]:
    """Mini-batch Adam over mean cross-entropy; fully seeded.

    One generator (from ``train_config.seed``) drives both parameter init
    and the per-epoch shuffles, so a (dataset, config) pair pins the entire
    trajectory.  Returns the final parameters and per-epoch mean loss.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    size = model_config.backbone.input_size
    if dataset.images[0].shape != (1, size, size):
        raise ShapeError(f"dataset images are {dataset.images[0].shape}, "
                         f"model expects (1, {size}, {size})")
    rng = np.random.default_rng(train_config.seed)
    params = init_model_params(model_config, rng)
    named = params.named()
    state = adam_init(named)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    history: list[float] = []
    n = len(dataset)
    for _ in range(train_config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            x = _stack_batch([dataset.images[i] for i in idx])
            reset_tape()
            probs = forward_batch(params, x, model_config)
            loss = cross_entropy_batch(probs, labels[idx])
            _zero_grads(named)
            loss.backward()
            grads = {name: t.grad for name, t in named.items()
                     if t.grad is not None}
            adam_step(named, grads, state, train_config)
            epoch_loss += loss.item() * len(idx)
        history.append(epoch_loss / n)
    return params, history


def predict(params: ModelParams, images: list[np.ndarray],
            model_config: ModelConfig, batch_size: int = 64) -> list[int]:
    """Argmax class predictions, computed without recording gradients."""
    preds: list[int] = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = _stack_batch(images[start:start + batch_size])
            probs = forward_batch(params, x, model_config)
            preds.extend(int(i) for i in np.argmax(probs.data, axis=1))
    return preds
