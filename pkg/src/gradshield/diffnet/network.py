"""Feed-forward softmax classifier over the autodiff engine.

A ``DiffNet`` is an immutable MLP described by a chain of
``(input_width, output_width, activation)`` layers with activation in
{"relu", "identity"}; the class posterior is the softmax of the final
layer's output.  Parameters live in one flat float64 vector with a fixed
layout: layer-major, each layer contributing its (in x out) weight matrix in
row-major order (rows indexed by input unit) followed by its
``out`` biases, so ``d = sum((in + 1) * out)``.

All computation is 64-bit.  The module offers two differentiation routes for
the value vector ``c`` with ``c_i = <grad_theta log p_i, z>``: the explicit
one (``log_posterior_jacobian``, one backward walk per class, used as the
test oracle) and the double-backward one (``gz_double_backprop``, a constant
number of walks, used in production).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..simplex_redirect import Posterior, ValueVector
from . import autodiff as ad
from .autodiff import Tensor, backward, const

__all__ = [
    "ParamVector",
    "LogPosteriorJacobian",
    "Example",
    "DiffNet",
    "param_count",
    "forward",
    "forward_batch",
    "cross_entropy",
    "update_gradient",
    "log_posterior_jacobian",
    "gz_double_backprop",
    "finite_diff_gradient",
    "one_hot",
]

_ACTIVATIONS = ("relu", "identity")

# Probabilities are clamped here before log; softmax outputs are positive in
# exact arithmetic, so this only guards float underflow.
LOG_CLAMP = 1e-300


@dataclass(frozen=True)
class ParamVector:
    """Flat view of trainable parameters (layout documented in the module)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 1:
            raise ValueError(f"parameter vector must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("parameter vector entries must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class LogPosteriorJacobian:
    """(n, d) matrix; row i is the parameter gradient of log p_i."""

    rows: np.ndarray

    def __post_init__(self):
        r = np.array(self.rows, dtype=np.float64, copy=True)
        if r.ndim != 2:
            raise ValueError(f"jacobian must be 2-D, got shape {r.shape}")
        r.flags.writeable = False
        object.__setattr__(self, "rows", r)


@dataclass(frozen=True)
class Example:
    """One training pair: features and a (possibly soft) label distribution."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(np.asarray(self.y), dtype=np.float64))


def _normalize_spec(layer_spec):
    spec = []
    for entry in layer_spec:
        fan_in, fan_out, act = entry
        fan_in, fan_out = int(fan_in), int(fan_out)
        if fan_in < 1 or fan_out < 1:
            raise ValueError(f"layer widths must be positive, got {entry!r}")
        if act not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}, expected one of {_ACTIVATIONS}")
        spec.append((fan_in, fan_out, act))
    if not spec:
        raise ValueError("layer_spec must not be empty")
    for (_, out_prev, _), (in_next, _, _) in zip(spec, spec[1:]):
        if out_prev != in_next:
            raise ValueError(f"layer widths do not chain: {out_prev} -> {in_next}")
    if spec[-1][1] < 2:
        raise ValueError("final layer must emit at least 2 logits")
    return tuple(spec)


def param_count(layer_spec) -> int:
    return sum((fi + 1) * fo for fi, fo, _ in _normalize_spec(layer_spec))


class DiffNet:
    """Immutable feed-forward classifier; see the module docstring for layout."""

    __slots__ = ("layer_spec", "params", "seed")

    def __init__(self, layer_spec, params, seed=None):
        self.layer_spec = _normalize_spec(layer_spec)
        pv = params if isinstance(params, ParamVector) else ParamVector(np.asarray(params))
        d = param_count(self.layer_spec)
        if len(pv) != d:
            raise ValueError(f"expected {d} parameters for this layer_spec, got {len(pv)}")
        self.params = pv
        self.seed = seed

    @classmethod
    def initialized(cls, layer_spec, seed: int) -> "DiffNet":
        """Seeded init: weights uniform in +-sqrt(6/(in+out)), biases zero."""
        spec = _normalize_spec(layer_spec)
        rng = np.random.default_rng(seed)
        chunks = []
        for fan_in, fan_out, _ in spec:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return cls(spec, np.concatenate(chunks), seed=seed)

    @property
    def input_width(self) -> int:
        return self.layer_spec[0][0]

    @property
    def n_classes(self) -> int:
        return self.layer_spec[-1][1]

    @property
    def n_params(self) -> int:
        return len(self.params)

    def with_params(self, values) -> "DiffNet":
        return DiffNet(self.layer_spec, np.asarray(values), seed=self.seed)

    def param_arrays(self):
        """Per-layer (W, b) views into the flat vector; W has shape (in, out)."""
        flat = self.params.values
        offset = 0
        for fan_in, fan_out, _ in self.layer_spec:
            w = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset : offset + fan_out]
            offset += fan_out
            yield w, b

    def __repr__(self):
        return f"DiffNet(layers={self.layer_spec}, d={self.n_params})"


def one_hot(label: int, n: int) -> np.ndarray:
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    v = np.zeros(n)
    v[label] = 1.0
    return v


def _as_batch(net: DiffNet, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.input_width:
        raise ValueError(
            f"features must have width {net.input_width}, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("features must be finite")
    return arr


# ---------------------------------------------------------------------------
# Plain-numpy forward (no graph).  Used for serving posteriors and as the
# base of the finite-difference oracle, which must stay independent of the
# graph machinery.
# ---------------------------------------------------------------------------


def _numpy_logits(layer_spec, flat_params: np.ndarray, x_batch: np.ndarray) -> np.ndarray:
    h = x_batch
    offset = 0
    for fan_in, fan_out, act in layer_spec:
        w = flat_params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat_params[offset : offset + fan_out]
        offset += fan_out
        h = h @ w + b
        if act == "relu":
            h = np.maximum(h, 0.0)
    return h


def _numpy_log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_batch(net: DiffNet, x_batch) -> np.ndarray:
    """Posterior rows for a (B, in) feature matrix; each row sums to 1."""
    xb = _as_batch(net, x_batch)
    return np.exp(_numpy_log_softmax(_numpy_logits(net.layer_spec, net.params.values, xb)))


def forward(net: DiffNet, x) -> Posterior:
    return Posterior(forward_batch(net, np.asarray(x, dtype=np.float64)[None, :])[0])


def cross_entropy(y, p) -> float:
    """H(y, p) = -sum_i y_i log p_i with probabilities clamped at LOG_CLAMP."""
    y_arr = np.asarray(y, dtype=np.float64)
    p_arr = np.asarray(p, dtype=np.float64)
    if y_arr.shape != p_arr.shape:
        raise ValueError(f"shape mismatch: {y_arr.shape} vs {p_arr.shape}")
    return float(-np.dot(y_arr, np.log(np.maximum(p_arr, LOG_CLAMP))))


# ---------------------------------------------------------------------------
# Graph construction and the differentiation routes.
# ---------------------------------------------------------------------------


def _forward_graph(net: DiffNet, x_batch: np.ndarray):
    """Build the graph for a batch; returns (log_probs, param leaf tensors)."""
    ad.count_traversal()
    param_leaves = []
    h = const(x_batch)
    for w, b in net.param_arrays():
        wt = Tensor(w, requires_grad=True)
        bt = Tensor(b, requires_grad=True)
        param_leaves.append((wt, bt))
    for (wt, bt), (_, _, act) in zip(param_leaves, net.layer_spec):
        h = ad.add(ad.matmul(h, wt), bt)
        if act == "relu":
            h = ad.relu(h)
    log_probs = ad.sub(h, ad.logsumexp_rows(h))
    return log_probs, param_leaves


def _flatten_grads(grad_pairs) -> np.ndarray:
    return np.concatenate([
        np.concatenate([gw.value.ravel(), gb.value.ravel()]) for gw, gb in grad_pairs
    ])


def _split_like_params(net: DiffNet, z: np.ndarray):
    offset = 0
    pairs = []
    for fan_in, fan_out, _ in net.layer_spec:
        zw = z[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        zb = z[offset : offset + fan_out]
        offset += fan_out
        pairs.append((zw, zb))
    return pairs


def _check_label(net: DiffNet, y) -> np.ndarray:
    y_arr = np.asarray(y, dtype=np.float64)
    if y_arr.ndim == 1:
        y_arr = y_arr[None, :]
    if y_arr.shape[1] != net.n_classes:
        raise ValueError(
            f"label width {y_arr.shape[1]} does not match {net.n_classes} classes"
        )
    return y_arr


def update_gradient(net: DiffNet, x, y) -> ParamVector:
    """The likelihood-ascent direction: the negative parameter gradient of
    the cross-entropy H(y, f(x)).
    """
    xb = _as_batch(net, x)
    yb = _check_label(net, y)
    log_probs, leaves = _forward_graph(net, xb)
    loss = ad.neg(ad.tsum(ad.mul(const(yb), log_probs)))
    flat_leaves = [t for pair in leaves for t in pair]
    grads = backward(loss, flat_leaves)
    grad_pairs = list(zip(grads[0::2], grads[1::2]))
    out = -_flatten_grads(grad_pairs)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite update gradient")
    return ParamVector(out)


def log_posterior_jacobian(net: DiffNet, x) -> LogPosteriorJacobian:
    """Explicit (n, d) Jacobian of the log-posteriors: one backward per class.

    This is the reference route; it costs n + 1 graph walks and is intended
    for tests and small white-box studies.
    """
    xb = _as_batch(net, x)
    if xb.shape[0] != 1:
        raise ValueError("jacobian is defined per example")
    log_probs, leaves = _forward_graph(net, xb)
    flat_leaves = [t for pair in leaves for t in pair]
    n = net.n_classes
    rows = np.empty((n, net.n_params))
    for i in range(n):
        pick = np.zeros((1, n))
        pick[0, i] = 1.0
        scalar = ad.tsum(ad.mul(log_probs, const(pick)))
        grads = backward(scalar, flat_leaves)
        rows[i] = _flatten_grads(list(zip(grads[0::2], grads[1::2])))
    return LogPosteriorJacobian(rows)


def _gz_graph(net: DiffNet, xb: np.ndarray, yb: np.ndarray, z: np.ndarray) -> np.ndarray:
    y_leaf = Tensor(yb, requires_grad=True)
    log_probs, leaves = _forward_graph(net, xb)
    loss = ad.neg(ad.tsum(ad.mul(y_leaf, log_probs)))
    flat_leaves = [t for pair in leaves for t in pair]
    grads = backward(loss, flat_leaves)
    inner = None
    for (zw, zb), gw, gb in zip(
        _split_like_params(net, z), grads[0::2], grads[1::2]
    ):
        term = ad.add(ad.tsum(ad.mul(gw, const(zw))), ad.tsum(ad.mul(gb, const(zb))))
        inner = term if inner is None else ad.add(inner, term)
    (gy,) = backward(inner, [y_leaf])
    c = -gy.value
    if not np.all(np.isfinite(c)):
        raise FloatingPointError("non-finite value vector")
    return c


def gz_double_backprop(net: DiffNet, x, y, z) -> ValueVector:
    """Value vector c with c_i = <grad_theta log p_i, z>, via double backward.

    Differentiates the scalar <z, grad_theta H(y, f(x))> with respect to the
    posterior argument.  Because that scalar is linear in y, the result does
    not depend on y's value; y is only the graph entry point.  Costs three
    graph walks regardless of the number of classes.
    """
    xb = _as_batch(net, x)
    if xb.shape[0] != 1:
        raise ValueError("per-example value vectors take a single feature row")
    yb = _check_label(net, y)
    z_arr = np.asarray(z, dtype=np.float64)
    if z_arr.shape != (net.n_params,):
        raise ValueError(f"target direction must have length {net.n_params}")
    return ValueVector(_gz_graph(net, xb, yb, z_arr)[0])


def finite_diff_gradient(net: DiffNet, x, y, step: float) -> ParamVector:
    """Central-difference estimate of the update gradient (test oracle).

    Evaluates the clamped cross-entropy through the plain-numpy forward, so
    the estimate shares no code path with the graph engine.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xb = _as_batch(net, x)
    yb = _check_label(net, y)[0]
    theta = net.params.values
    out = np.empty_like(theta)

    def loss_at(vec):
        logits = _numpy_logits(net.layer_spec, vec, xb)
        probs = np.exp(_numpy_log_softmax(logits))[0]
        return cross_entropy(yb, probs)

    for j in range(theta.size):
        bumped = theta.copy()
        bumped[j] = theta[j] + step
        up = loss_at(bumped)
        bumped[j] = theta[j] - step
        down = loss_at(bumped)
        out[j] = -(up - down) / (2.0 * step)
    return ParamVector(out)
