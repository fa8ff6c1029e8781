"""Minibatch SGD with Nesterov momentum for DiffNet classifiers.

Training is deterministic given the seed: per-epoch example order is a
seeded shuffle and every arithmetic step is plain float64 numpy.  The loss
is the mean cross-entropy against each example's (possibly soft) label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import backward, const
from .network import DiffNet, Example, _as_batch, _flatten_grads, _forward_graph

__all__ = [
    "TrainerConfig",
    "TrainingDivergedError",
    "sgd_train",
    "sgd_train_with_snapshots",
    "examples_from_arrays",
]

_SCHEDULES = ("cosine", "constant")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainerConfig:
    lr: float
    epochs: int
    batch_size: int
    seed: int
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_schedule: str = "cosine"
    # Cosine horizon; lets an early-stopped run anneal as if it were going to
    # train this many epochs.  None means `epochs`.
    schedule_epochs: int | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.lr_schedule not in _SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {_SCHEDULES}")
        if self.schedule_epochs is not None and self.schedule_epochs < self.epochs:
            raise ValueError("schedule_epochs must cover the trained epochs")


def examples_from_arrays(x, y) -> list[Example]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("feature and label arrays differ in length")
    return [Example(xi, yi) for xi, yi in zip(x, y)]


def _stack(data) -> tuple[np.ndarray, np.ndarray]:
    if len(data) == 0:
        raise ValueError("training data must be nonempty")
    xs = np.stack([np.asarray(ex.x, dtype=np.float64) for ex in data])
    ys = np.stack([np.asarray(ex.y, dtype=np.float64) for ex in data])
    return xs, ys


def _lr_at(hyper: TrainerConfig, epoch: int) -> float:
    if hyper.lr_schedule == "constant":
        return hyper.lr
    horizon = hyper.schedule_epochs or hyper.epochs
    if horizon <= 0:
        return hyper.lr
    return hyper.lr * 0.5 * (1.0 + np.cos(np.pi * epoch / horizon))


def _batch_loss_grad(net: DiffNet, xb: np.ndarray, yb: np.ndarray):
    log_probs, leaves = _forward_graph(net, xb)
    mean_ce = ad.mul(
        ad.neg(ad.tsum(ad.mul(const(yb), log_probs))), const(1.0 / xb.shape[0])
    )
    flat_leaves = [t for pair in leaves for t in pair]
    grads = backward(mean_ce, flat_leaves)
    flat = _flatten_grads(list(zip(grads[0::2], grads[1::2])))
    return float(mean_ce.value), flat


def _train_loop(net, data, hyper, snapshot_epochs, label_fn):
    xs, ys = _stack(data)
    xs = _as_batch(net, xs)
    if ys.shape[1] != net.n_classes:
        raise ValueError(
            f"label width {ys.shape[1]} does not match {net.n_classes} classes"
        )
    theta = net.params.values.copy()
    velocity = np.zeros_like(theta)
    rng = np.random.default_rng(hyper.seed)
    mu = hyper.momentum
    snapshots: dict[int, DiffNet] = {}

    for epoch in range(hyper.epochs):
        lr = _lr_at(hyper, epoch)
        order = rng.permutation(len(xs))
        for start in range(0, len(xs), hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xb, yb = xs[idx], ys[idx]
            current = net.with_params(theta)
            if label_fn is not None:
                yb = np.asarray(label_fn(current, xb, yb), dtype=np.float64)
            loss, grad = _batch_loss_grad(current, xb, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch start {start}"
                )
            grad += hyper.weight_decay * theta
            velocity = mu * velocity + grad
            theta = theta - lr * (grad + mu * velocity)
        if epoch + 1 in snapshot_epochs:
            snapshots[epoch + 1] = net.with_params(theta)
    return net.with_params(theta), snapshots


def sgd_train(net: DiffNet, data, hyper: TrainerConfig, *, label_fn=None) -> DiffNet:
    """Train a copy of ``net`` on ``data`` (a sequence of Example).

    ``label_fn(current_net, x_batch, y_batch) -> labels`` optionally rewrites
    each batch's labels from the current parameter state before the step;
    the default trains on the stored labels unchanged.
    """
    trained, _ = _train_loop(net, data, hyper, frozenset(), label_fn)
    return trained


def sgd_train_with_snapshots(
    net: DiffNet, data, hyper: TrainerConfig, snapshot_epochs, *, label_fn=None
):
    """Same loop as ``sgd_train`` but also returns {epoch: net} snapshots
    captured after the listed epochs complete (1-based)."""
    wanted = frozenset(int(e) for e in snapshot_epochs)
    return _train_loop(net, data, hyper, wanted, label_fn)
