"""The adversary's side: synthetic tasks, clone training, countermeasures.

Tasks are seeded Gaussian mixtures at desk scale.  The distribution-aware
query set is a held-out draw from the defender's own mixture; the
knowledge-limited set comes from a rotated and offset copy, so its
class-conditional centers genuinely differ.  The clone trainer implements
the batch extraction attack: collect every (query, response) pair, convert
labels per the countermeasure mode, and distill.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .defense_engine import argmax_lowest, gz_batch_shared_target
from .diffnet import (
    DiffNet,
    TrainerConfig,
    examples_from_arrays,
    forward_batch,
    one_hot,
    sgd_train,
    update_gradient,
)
from .ioutil import atomic_write_text
from .simplex_redirect import Budget, redirect_values

__all__ = [
    "SyntheticTaskSpec",
    "LabeledSet",
    "TaskData",
    "AttackConfig",
    "gen_task",
    "knockoff_attack",
    "train_clone_on_labels",
    "watermark_reprogram",
    "evaluate_error",
    "dump_dataset",
    "load_dataset",
]

LABEL_MODES = ("full_posterior", "argmax_onehot")

# Minimum pairwise center distance enforced during (seeded) center sampling,
# in units of cluster_std; keeps random draws from producing unlearnable
# tasks while leaving enough overlap for informative posteriors.
_MIN_CENTER_SEPARATION = 2.5


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Seeded description of one synthetic classification task."""

    n_classes: int = 4
    input_dim: int = 6
    train_size: int = 2000
    test_size: int = 2000
    query_size: int = 2000
    center_scale: float = 1.6
    cluster_std: float = 1.0
    shift_angle: float = 0.9
    shift_offset: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.input_dim < 2:
            raise ValueError("need at least 2 input dimensions (shift rotates a plane)")
        for name in ("train_size", "test_size", "query_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cluster_std <= 0:
            raise ValueError("cluster_std must be positive")


@dataclass(frozen=True)
class LabeledSet:
    x: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if len(self.x) != len(self.labels):
            raise ValueError("features and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class TaskData:
    spec: SyntheticTaskSpec
    defender_train: LabeledSet
    defender_test: LabeledSet
    queries_aware: LabeledSet
    queries_limited: LabeledSet
    feature_mean: np.ndarray
    feature_std: np.ndarray


@dataclass(frozen=True)
class AttackConfig:
    layer_spec: tuple
    trainer: TrainerConfig
    label_mode: str = "full_posterior"
    seed: int = 0

    def __post_init__(self):
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"unknown label_mode {self.label_mode!r}")
        object.__setattr__(
            self, "layer_spec", tuple(tuple(layer) for layer in self.layer_spec)
        )


def _sample_centers(rng: np.random.Generator, spec: SyntheticTaskSpec) -> np.ndarray:
    """Seeded center draw with a minimum-separation rejection loop."""
    min_sep = _MIN_CENTER_SEPARATION * spec.cluster_std
    for _ in range(1000):
        centers = rng.normal(size=(spec.n_classes, spec.input_dim)) * spec.center_scale
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        dist[np.diag_indices(spec.n_classes)] = np.inf
        if dist.min() >= min_sep:
            return centers
    raise ValueError(
        "could not draw sufficiently separated class centers; "
        "raise center_scale or lower n_classes"
    )


def _shift_centers(spec: SyntheticTaskSpec, centers: np.ndarray, rng) -> np.ndarray:
    shifted = centers.copy()
    angle = spec.shift_angle
    if angle != 0.0:
        rot = np.eye(spec.input_dim)
        rot[0, 0] = rot[1, 1] = np.cos(angle)
        rot[0, 1] = -np.sin(angle)
        rot[1, 0] = np.sin(angle)
        shifted = shifted @ rot.T
    if spec.shift_offset != 0.0:
        direction = rng.normal(size=spec.input_dim)
        direction /= np.linalg.norm(direction)
        shifted = shifted + spec.shift_offset * direction
    if (angle != 0.0 or spec.shift_offset != 0.0) and np.allclose(shifted, centers):
        raise ValueError("shift parameters did not move the class centers")
    return shifted


def _balanced_labels(size: int, n_classes: int) -> np.ndarray:
    """Exact per-class counts: floor(size/n) each, remainder to low labels."""
    per, rem = divmod(size, n_classes)
    counts = np.full(n_classes, per)
    counts[:rem] += 1
    return np.repeat(np.arange(n_classes), counts)


def _draw_split(rng, centers: np.ndarray, std: float, size: int) -> LabeledSet:
    n_classes, dim = centers.shape
    labels = _balanced_labels(size, n_classes)
    x = centers[labels] + rng.normal(size=(size, dim)) * std
    order = rng.permutation(size)
    return LabeledSet(x[order], labels[order])


def gen_task(spec: SyntheticTaskSpec) -> TaskData:
    """Deterministically generate all four splits of a task.

    Features are standardized to zero mean and unit variance using the
    defender-train statistics (the statistics the defender actually owns).
    """
    rng = np.random.default_rng(spec.seed)
    centers = _sample_centers(rng, spec)
    shifted = _shift_centers(spec, centers, rng)

    train = _draw_split(rng, centers, spec.cluster_std, spec.train_size)
    test = _draw_split(rng, centers, spec.cluster_std, spec.test_size)
    aware = _draw_split(rng, centers, spec.cluster_std, spec.query_size)
    limited = _draw_split(rng, shifted, spec.cluster_std, spec.query_size)

    mean = train.x.mean(axis=0)
    std = train.x.std(axis=0)
    std[std == 0.0] = 1.0

    def standardize(split: LabeledSet) -> LabeledSet:
        return LabeledSet((split.x - mean) / std, split.labels)

    return TaskData(
        spec=spec,
        defender_train=standardize(train),
        defender_test=standardize(test),
        queries_aware=standardize(aware),
        queries_limited=standardize(limited),
        feature_mean=mean,
        feature_std=std,
    )


def _labels_for_mode(posteriors: np.ndarray, label_mode: str) -> np.ndarray:
    if label_mode == "full_posterior":
        return posteriors
    n = posteriors.shape[1]
    out = np.zeros_like(posteriors)
    for i, row in enumerate(posteriors):
        out[i, argmax_lowest(row)] = 1.0
    return out


def train_clone_on_labels(queries, labels, cfg: AttackConfig) -> DiffNet:
    """Distill collected responses into a fresh clone network."""
    x = np.asarray(queries, dtype=np.float64)
    y = _labels_for_mode(np.asarray(labels, dtype=np.float64), cfg.label_mode)
    clone = DiffNet.initialized(cfg.layer_spec, cfg.seed)
    return sgd_train(clone, examples_from_arrays(x, y), cfg.trainer)


def knockoff_attack(oracle, queries, cfg: AttackConfig) -> DiffNet:
    """The batch extraction attack against a posterior-serving oracle.

    ``oracle`` either exposes ``respond_batch(x_batch)`` or is a plain
    callable mapping one feature row to a posterior.  All queries are sent
    before training starts; the training shuffle is seeded by the attack
    config and invisible to the defender.
    """
    x = np.asarray(queries, dtype=np.float64)
    if hasattr(oracle, "respond_batch"):
        posteriors = np.asarray(oracle.respond_batch(x), dtype=np.float64)
    else:
        posteriors = np.stack([np.asarray(oracle(xi), dtype=np.float64) for xi in x])
    return train_clone_on_labels(x, posteriors, cfg)


def watermark_reprogram(
    target_net: DiffNet, defender: DiffNet, queries, pair, eps: Budget, trainer: TrainerConfig
) -> DiffNet:
    """White-box reprogramming of an evolving clone toward a watermark pair.

    Runs the extraction training loop, but every served posterior is steered
    against the *current* clone state with the watermark's likelihood-ascent
    direction as the target, which is recomputed after every training step.
    """
    x_w, y_w = pair
    x_w = np.asarray(x_w, dtype=np.float64)
    x = np.asarray(queries, dtype=np.float64)
    # per-example forwards: the same arithmetic the serving oracle uses, so
    # the zero-budget run reproduces the undefended attack bit for bit
    clean = np.stack([forward_batch(defender, xi[None, :])[0] for xi in x])
    if eps.epsilon == 0.0:
        # Identical code path to the undefended attack, so the zero-budget
        # run is bit-for-bit the same clone.
        return sgd_train(target_net, examples_from_arrays(x, clean), trainer)

    n = defender.n_classes
    wm_label = one_hot(int(y_w), n)

    def steer(current: DiffNet, xb: np.ndarray, yb: np.ndarray) -> np.ndarray:
        z = update_gradient(current, x_w, wm_label).values
        values = gz_batch_shared_target(current, xb, yb, z)
        out = np.empty_like(yb)
        for i in range(len(xb)):
            out[i] = redirect_values(values[i], yb[i], eps.epsilon)
        return out

    return sgd_train(
        target_net, examples_from_arrays(x, clean), trainer, label_fn=steer
    )


def evaluate_error(net: DiffNet, test: LabeledSet) -> float:
    """Fraction of test examples whose tie-broken argmax misses the label."""
    posteriors = forward_batch(net, test.x)
    predicted = np.array([argmax_lowest(row) for row in posteriors])
    return float((predicted != test.labels).mean())


# ---------------------------------------------------------------------------
# Dataset dump format: columnar CSV plus a JSON sidecar with the generating
# spec and seed.
# ---------------------------------------------------------------------------


def dump_dataset(split: LabeledSet, path, spec: SyntheticTaskSpec, split_name: str) -> None:
    dim = split.x.shape[1]
    lines = [",".join([f"feature_{j}" for j in range(dim)] + ["label"])]
    for row, label in zip(split.x, split.labels):
        lines.append(",".join(f"{v:.17g}" for v in row) + f",{int(label)}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    sidecar = {"spec": asdict(spec), "seed": spec.seed, "split": split_name}
    atomic_write_text(os.fspath(path) + ".json", json.dumps(sidecar, sort_keys=True, indent=1) + "\n")


def load_dataset(path) -> LabeledSet:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        n_features = len(header) - 1
        xs, labels = [], []
        for line in f:
            parts = line.strip().split(",")
            if not parts or parts == [""]:
                continue
            xs.append([float(v) for v in parts[:n_features]])
            labels.append(int(parts[n_features]))
    return LabeledSet(np.asarray(xs), np.asarray(labels))
