"""Reverse-mode differentiation on float64 numpy arrays.

Every backward rule is itself composed of ``Tensor`` operations, so the
output of one backward pass is an ordinary graph node that can be
differentiated again.  That second-order capability is what lets the network
layer obtain value vectors by backpropagating through a first backward pass
in a constant number of graph walks.

The module keeps a global traversal counter: one tick per graph build
(charged by the network layer's forward constructor) and one per
``backward`` walk.  Cost-contract tests read it to verify that the
double-backward route stays within a few walks while the explicit
row-by-row route pays one walk per class.  The counter is diagnostic
instrumentation and is not synchronized across threads.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "const",
    "backward",
    "add",
    "sub",
    "neg",
    "mul",
    "div",
    "matmul",
    "transpose",
    "relu",
    "texp",
    "tlog",
    "tsum",
    "reshape",
    "broadcast_to",
    "logsumexp_rows",
    "reset_traversal_count",
    "traversal_count",
    "count_traversal",
]

_TRAVERSALS = 0


def reset_traversal_count() -> None:
    global _TRAVERSALS
    _TRAVERSALS = 0


def traversal_count() -> int:
    return _TRAVERSALS


def count_traversal() -> None:
    global _TRAVERSALS
    _TRAVERSALS += 1


class Tensor:
    """One node of the computation graph.

    ``parents`` and ``vjps`` line up: ``vjps[i]`` maps the upstream gradient
    (a Tensor) to this node's gradient contribution for ``parents[i]``,
    using Tensor operations only.
    """

    __slots__ = ("value", "parents", "vjps", "requires_grad")

    def __init__(self, value, parents=(), vjps=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"


def const(value) -> Tensor:
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sum_to(g: Tensor, shape) -> Tensor:
    """Undo numpy broadcasting: reduce g down to `shape`."""
    while g.value.ndim > len(shape):
        g = tsum(g, axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.value.shape[ax] != 1:
            g = tsum(g, axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value + b.value,
        (a, b),
        (lambda g: _sum_to(g, a.value.shape), lambda g: _sum_to(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value - b.value,
        (a, b),
        (
            lambda g: _sum_to(g, a.value.shape),
            lambda g: _sum_to(neg(g), b.value.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(-a.value, (a,), (lambda g: neg(g),))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value * b.value,
        (a, b),
        (
            lambda g: _sum_to(mul(g, b), a.value.shape),
            lambda g: _sum_to(mul(g, a), b.value.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value / b.value,
        (a, b),
        (
            lambda g: _sum_to(div(g, b), a.value.shape),
            lambda g: _sum_to(neg(div(mul(g, a), mul(b, b))), b.value.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return Tensor(
        a.value @ b.value,
        (a, b),
        (lambda g: matmul(g, transpose(b)), lambda g: matmul(transpose(a), g)),
    )


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.value.ndim != 2:
        raise ValueError("transpose supports 2-D operands only")
    return Tensor(a.value.T, (a,), (lambda g: transpose(g),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = const((a.value > 0.0).astype(np.float64))
    return Tensor(a.value * mask.value, (a,), (lambda g: mul(g, mask),))


def texp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.value), (a,))
    out.vjps = (lambda g: mul(g, out),)
    return out


def tlog(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(np.log(a.value), (a,), (lambda g: div(g, a),))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.value.shape

    def vjp(g: Tensor) -> Tensor:
        if axis is None:
            gg = reshape(g, (1,) * len(in_shape)) if in_shape else g
        elif keepdims:
            gg = g
        else:
            kept = list(in_shape)
            kept[axis] = 1
            gg = reshape(g, tuple(kept))
        return broadcast_to(gg, in_shape)

    return Tensor(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), (vjp,))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.value.shape
    return Tensor(
        np.reshape(a.value, shape), (a,), (lambda g: reshape(g, in_shape),)
    )


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    in_shape = a.value.shape
    return Tensor(
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        (lambda g: _sum_to(g, in_shape),),
    )


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp of a (B, n) tensor, shape (B, 1).

    The row max enters as a detached constant; the identity
    lse(v) = m + log(sum(exp(v - m))) holds exactly for any constant m, so
    values and all derivative orders are unaffected by the stabilization.
    """
    m = const(np.max(a.value, axis=1, keepdims=True))
    return add(tlog(tsum(texp(sub(a, m)), axis=1, keepdims=True)), m)


def _toposort(root: Tensor):
    """Post-order over the requires_grad subgraph reachable from root."""
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return topo


def backward(root: Tensor, wrt) -> list[Tensor]:
    """One reverse walk from ``root``; returns gradients for ``wrt``.

    Gradients are Tensors built from graph operations, so they can be fed
    back into ``backward``.  Nodes in ``wrt`` that ``root`` does not depend
    on get zero gradients.
    """
    count_traversal()
    wrt = list(wrt)
    if not root.requires_grad:
        return [const(np.zeros_like(w.value)) for w in wrt]

    grads: dict[int, Tensor] = {id(root): const(np.ones_like(root.value))}
    topo = _toposort(root)
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            pid = id(parent)
            grads[pid] = contrib if pid not in grads else add(grads[pid], contrib)

    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(g if g is not None else const(np.zeros_like(w.value)))
    return out
