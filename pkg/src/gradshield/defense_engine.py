"""Deployable defenses for a posterior-serving classifier.

Combines the steering solver with the differentiation engine: a surrogate
network stands in for the unknown adversary, a target-direction strategy
decides where to push its training updates, and each query's posterior is
steered within the l1 budget.  The in-scope baselines (random one-hot
interpolation, top-k truncation) live here too so every method shares one
budget axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffnet import (
    DiffNet,
    ParamVector,
    TrainerConfig,
    examples_from_arrays,
    forward_batch,
    gz_double_backprop,
    one_hot,
    sgd_train,
    update_gradient,
)
from .diffnet.network import _as_batch, _check_label, _gz_graph
from .simplex_redirect import Budget, Posterior, redirect

__all__ = [
    "TargetStrategy",
    "SurrogateConfig",
    "DefenseConfig",
    "DefendedOracle",
    "train_surrogate",
    "make_target",
    "defend_query",
    "defend_batch",
    "gz_batch_shared_target",
    "random_interp",
    "topk_truncate",
    "argmax_lowest",
]

TARGET_KINDS = ("all_ones", "min_inner_product", "watermark", "custom")
TRAIN_SOURCES = ("query_set", "defender_train", "random_init")
DEFENSE_METHODS = ("none", "grad2", "random_interp", "topk_truncate")

# Below this sup-norm a min_inner_product target is degenerate (the query's
# posterior already matches the surrogate's); any feasible point is optimal,
# so the clean posterior is returned untouched.
DEGENERATE_TARGET_TOL = 1e-12


def argmax_lowest(values) -> int:
    """Argmax with ties resolved to the lowest index (the tie rule used for
    every argmax in the defense and metrics layers)."""
    return int(np.argmax(np.asarray(values)))


@dataclass(frozen=True)
class TargetStrategy:
    """Where to push the adversary's update gradient.

    * ``all_ones``: the constant all-ones direction; being query-independent
      it makes per-query perturbations combine instead of cancel.
    * ``min_inner_product``: per query, the direction opposite the clean
      update on the surrogate.
    * ``watermark``: the likelihood-ascent direction for a chosen
      (input, label) pair, recomputed against whatever net is passed in so a
      white-box loop can refresh it every training step.
    * ``custom``: a caller-supplied fixed direction.
    """

    kind: str
    watermark_x: np.ndarray | None = None
    watermark_label: int | None = None
    custom_z: ParamVector | None = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.kind == "watermark":
            if self.watermark_x is None or self.watermark_label is None:
                raise ValueError("watermark targets need watermark_x and watermark_label")
            object.__setattr__(
                self, "watermark_x", np.asarray(self.watermark_x, dtype=np.float64)
            )
        if self.kind == "custom" and self.custom_z is None:
            raise ValueError("custom targets need custom_z")


@dataclass(frozen=True)
class SurrogateConfig:
    """How the defender's stand-in for the adversary is built.

    ``early_stop_epoch`` (E) is how many of the ``distill_epochs`` actually
    run; the cosine schedule still anneals over the full horizon.
    ``train_source`` names the feature set the caller should distill on;
    ``random_init`` skips training entirely.
    """

    layer_spec: tuple
    distill_epochs: int = 10
    early_stop_epoch: int = 10
    train_source: str = "query_set"
    seed: int = 0
    trainer: TrainerConfig | None = None

    def __post_init__(self):
        if self.train_source not in TRAIN_SOURCES:
            raise ValueError(f"unknown train_source {self.train_source!r}")
        if not 0 <= self.early_stop_epoch <= self.distill_epochs:
            raise ValueError("need 0 <= early_stop_epoch <= distill_epochs")
        object.__setattr__(
            self, "layer_spec", tuple(tuple(layer) for layer in self.layer_spec)
        )

    def make_trainer(self) -> TrainerConfig:
        if self.trainer is not None:
            return self.trainer
        return TrainerConfig(
            lr=0.1,
            epochs=self.early_stop_epoch,
            batch_size=64,
            seed=self.seed,
            momentum=0.9,
            weight_decay=5e-4,
            lr_schedule="cosine",
            schedule_epochs=max(self.distill_epochs, self.early_stop_epoch),
        )


@dataclass(frozen=True)
class DefenseConfig:
    """One deployable defense; method-specific fields are present exactly
    when the method uses them."""

    method: str
    eps: float | None = None
    k: int | None = None
    surrogate: SurrogateConfig | None = None
    target: TargetStrategy | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in DEFENSE_METHODS:
            raise ValueError(f"unknown defense method {self.method!r}")
        needs_eps = self.method in ("grad2", "random_interp")
        if needs_eps != (self.eps is not None):
            raise ValueError(f"eps must be set iff method needs it ({self.method})")
        if (self.method == "topk_truncate") != (self.k is not None):
            raise ValueError("k must be set iff method is topk_truncate")
        needs_net = self.method == "grad2"
        if needs_net != (self.surrogate is not None):
            raise ValueError("surrogate config must be set iff method is grad2")
        if needs_net != (self.target is not None):
            raise ValueError("target strategy must be set iff method is grad2")
        if self.eps is not None:
            Budget(self.eps)  # range check


def train_surrogate(defender: DiffNet, queries, cfg: SurrogateConfig) -> DiffNet:
    """Distill the defender into a fresh surrogate on the given features.

    Labels are the defender's own posteriors (knowledge distillation); for
    ``random_init`` the seeded initialization is returned untouched.
    """
    init = DiffNet.initialized(cfg.layer_spec, cfg.seed)
    if cfg.train_source == "random_init" or cfg.early_stop_epoch == 0:
        return init
    x = np.asarray(queries, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("surrogate training needs a nonempty (N, features) array")
    labels = forward_batch(defender, x)
    return sgd_train(init, examples_from_arrays(x, labels), cfg.make_trainer())


def make_target(strategy: TargetStrategy, net: DiffNet, x=None, y=None) -> ParamVector:
    """Expand a strategy into a concrete direction of length d for ``net``."""
    if strategy.kind == "all_ones":
        return ParamVector(np.ones(net.n_params))
    if strategy.kind == "min_inner_product":
        if x is None or y is None:
            raise ValueError("min_inner_product targets need the query and posterior")
        return ParamVector(-update_gradient(net, x, y).values)
    if strategy.kind == "watermark":
        label = one_hot(strategy.watermark_label, net.n_classes)
        return update_gradient(net, strategy.watermark_x, label)
    z = strategy.custom_z
    if len(z) != net.n_params:
        raise ValueError(f"custom target has length {len(z)}, net has {net.n_params}")
    return z


def random_interp(y: Posterior, eps: Budget, seed) -> Posterior:
    """Interpolate toward a one-hot posterior at a random non-argmax label.

    The mixing weight exactly exhausts the budget when possible:
    ||out - y||_1 = min(eps, ||e_k - y||_1).
    """
    p = y.probs
    if eps.epsilon == 0.0:
        return Posterior(p)
    top = argmax_lowest(p)
    candidates = np.array([i for i in range(p.size) if i != top])
    rng = np.random.default_rng(seed)
    k = int(candidates[rng.integers(candidates.size)])
    onehot = np.zeros_like(p)
    onehot[k] = 1.0
    dist = float(np.abs(onehot - p).sum())
    alpha = min(eps.epsilon / dist, 1.0) if dist > 0 else 0.0
    return Posterior((1.0 - alpha) * p + alpha * onehot)


def topk_truncate(y: Posterior, k: int) -> Posterior:
    """Keep the k largest entries (ties by ascending index), renormalize."""
    p = y.probs
    if not 1 <= k <= p.size:
        raise ValueError(f"k must lie in [1, {p.size}], got {k}")
    if k == p.size:
        return Posterior(p)
    keep = np.argsort(-p, kind="stable")[:k]
    out = np.zeros_like(p)
    out[keep] = p[keep]
    return Posterior(out / out.sum())


def gz_batch_shared_target(net: DiffNet, x_batch, y_batch, z) -> np.ndarray:
    """Row-wise value vectors for a batch that shares one target direction.

    A single triple traversal: summing the per-example inner products keeps
    each row's posterior gradient separate, so row b equals the per-example
    ``gz_double_backprop`` result up to float accumulation order.  Batched
    serving paths that promise bit-identical responses must loop the
    per-example route instead; this is the fast path for training-time loops
    (watermark reprogramming) where last-ulp drift is irrelevant.
    """
    xb = _as_batch(net, x_batch)
    yb = _check_label(net, y_batch)
    if yb.shape[0] != xb.shape[0]:
        raise ValueError("feature and label batches differ in length")
    z_arr = np.asarray(z, dtype=np.float64)
    if z_arr.shape != (net.n_params,):
        raise ValueError(f"target direction must have length {net.n_params}")
    return _gz_graph(net, xb, yb, z_arr)


def _grad2_value_vector(cfg: DefenseConfig, surrogate: DiffNet, x, y: Posterior):
    """Target expansion + value vector for one query; None means degenerate."""
    z = make_target(cfg.target, surrogate, x, y.probs)
    if (
        cfg.target.kind == "min_inner_product"
        and np.abs(z.values).max() < DEGENERATE_TARGET_TOL
    ):
        return None
    return gz_double_backprop(surrogate, x, y.probs, z.values)


def defend_query(
    cfg: DefenseConfig, surrogate: DiffNet | None, x, y: Posterior, *, query_index: int = 0
) -> Posterior:
    """Produce the defended posterior for one query.

    ``query_index`` feeds the counter-based generator used by
    ``random_interp`` so concurrent serving cannot reorder outcomes; other
    methods ignore it.
    """
    if cfg.method == "none":
        return y
    if cfg.method == "topk_truncate":
        return topk_truncate(y, cfg.k)
    if cfg.method == "random_interp":
        return random_interp(y, Budget(cfg.eps), seed=[cfg.seed, query_index])
    if surrogate is None:
        raise ValueError("grad2 needs a surrogate network")
    if cfg.eps == 0.0:
        return y
    c = _grad2_value_vector(cfg, surrogate, x, y)
    if c is None:
        return y
    return redirect(c, y, Budget(cfg.eps))


def defend_batch(
    cfg: DefenseConfig, surrogate: DiffNet | None, x_batch, y_batch, *, start_index: int = 0
) -> np.ndarray:
    """Defend a batch by independent per-example calls.

    Kept strictly equal to looping ``defend_query`` so batching can never
    change the served posteriors.
    """
    x_arr = np.asarray(x_batch, dtype=np.float64)
    y_arr = np.asarray(y_batch, dtype=np.float64)
    out = np.empty_like(y_arr)
    for i in range(len(x_arr)):
        out[i] = defend_query(
            cfg, surrogate, x_arr[i], Posterior(y_arr[i]), query_index=start_index + i
        ).probs
    return out


@dataclass
class DefendedOracle:
    """The defender's serving endpoint: clean forward plus the defense.

    The surrogate is trained once up front (all queries are assumed
    available in a batch before the attack's training begins); after that
    every response is a pure function of (query, index).
    """

    defender: DiffNet
    cfg: DefenseConfig
    surrogate: DiffNet | None = None
    queries_served: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.cfg.method == "grad2" and self.surrogate is None:
            raise ValueError("grad2 oracle needs a trained surrogate")

    @classmethod
    def build(
        cls, defender: DiffNet, cfg: DefenseConfig, queries=None, defender_train=None
    ) -> "DefendedOracle":
        surrogate = None
        if cfg.method == "grad2":
            source = cfg.surrogate.train_source
            if source == "query_set":
                features = queries
            elif source == "defender_train":
                features = defender_train
            else:
                features = None
            surrogate = train_surrogate(defender, features, cfg.surrogate)
        return cls(defender=defender, cfg=cfg, surrogate=surrogate)

    def respond(self, x, query_index: int = 0) -> Posterior:
        clean = Posterior(forward_batch(self.defender, np.asarray(x)[None, :])[0])
        self.queries_served += 1
        return defend_query(self.cfg, self.surrogate, x, clean, query_index=query_index)

    def respond_batch(self, x_batch, start_index: int = 0) -> np.ndarray:
        # One respond() per query: any batching of calls into this oracle
        # yields bit-identical responses.
        x_arr = np.asarray(x_batch, dtype=np.float64)
        return np.stack(
            [self.respond(x_arr[i], start_index + i).probs for i in range(len(x_arr))]
        )
