"""Reverse-mode differentiation over dense float64 tensors.

A graph is built eagerly: every op returns a :class:`Node` that remembers its
parents and a closure mapping the output gradient to parent gradients.
:func:`backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from . import _accel


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside an operation's mathematical domain."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf; the optimizer step was refused."""


class Node:
    """A value in the graph plus the gradient accumulated into it."""

    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad", "name", "op")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward: Callable | None = None,
        requires_grad: bool | None = None,
        name: str | None = None,
        op: str = "const",
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        # constant subgraphs are never walked, so drop their references
        self.parents = tuple(parents) if requires_grad else ()
        self._backward = backward if requires_grad else None
        self.name = name
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = g

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, as_node(other))

    def __radd__(self, other):
        return add(as_node(other), self)

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_node(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, as_node(other))


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(x, requires_grad=False)


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def _node(value, parents, backward, op):
    return Node(value, parents, backward, op=op)


def _check_same(op, a: Node, b: Node):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        return g @ bv.T, av.T @ g

    return _node(av @ bv, (a, b), bw, "matmul")


def transpose(a: Node) -> Node:
    return _node(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """``x @ w.T + b`` with ``w`` stored as (out, in)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {w.shape}")
    xv, wv = x.value, w.value
    out = xv @ wv.T
    if b is None:
        return _node(out, (x, w), lambda g: (g @ wv, g.T @ xv), "linear")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    out = out + b.value
    return _node(out, (x, w, b), lambda g: (g @ wv, g.T @ xv, g.sum(axis=0)), "linear")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    _check_same("add", a, b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Node, b: Node) -> Node:
    _check_same("sub", a, b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Node, b: Node) -> Node:
    _check_same("mul", a, b)
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Node, c: float) -> Node:
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Node) -> Node:
    mask = a.value > 0  # relu'(0) := 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return _node(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def sigmoid(a: Node) -> Node:
    s = _accel._sigmoid(np.atleast_1d(a.value)).reshape(a.shape)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(a: Node) -> Node:
    e = np.exp(a.value)
    return _node(e, (a,), lambda g: (g * e,), "exp")


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise DomainError("log: input has non-positive entries")
    v = a.value
    return _node(np.log(v), (a,), lambda g: (g / v,), "log")


# ---------------------------------------------------------------------------
# softmax family (last axis)
# ---------------------------------------------------------------------------


def softmax(s: Node) -> Node:
    z = s.value - s.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node(p, (s,), bw, "softmax")


def log_softmax(s: Node) -> Node:
    z = s.value - s.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, (s,), bw, "log_softmax")


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum(a: Node) -> Node:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Node) -> Node:
    shape, n = a.shape, a.value.size
    return _node(a.value.mean(), (a,), lambda g: (np.full(shape, g / n),), "mean")


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: nothing to concatenate")
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[n.shape for n in nodes]}: {exc}") from None
    bounds = np.cumsum([0] + [n.shape[axis] for n in nodes])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(nodes))
        )

    return _node(out, nodes, bw, "concat")


def reshape(a: Node, shape) -> Node:
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def select_rows(a: Node, idx) -> Node:
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.value[idx], (a,), bw, "select_rows")


def slice_cols(a: Node, start: int, stop: int) -> Node:
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _node(a.value[:, start:stop], (a,), bw, "slice_cols")


def pick(a: Node, rows, cols) -> Node:
    """Gather ``a[rows[i], cols[i]]`` into a vector."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _node(a.value[rows, cols], (a,), bw, "pick")


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------


def squared_euclidean(a: Node, b: Node) -> Node:
    _check_same("squared_euclidean", a, b)
    diff = a.value - b.value
    return _node(np.dot(diff.ravel(), diff.ravel()), (a, b),
                 lambda g: (2 * g * diff, -2 * g * diff), "sqeuclid")


def cosine_distance(a: Node, b: Node) -> Node:
    _check_same("cosine_distance", a, b)
    av, bv = a.value.ravel(), b.value.ravel()
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0 or nb == 0:
        raise DomainError("cosine_distance: zero-norm input")
    cos = av @ bv / (na * nb)
    shape = a.shape

    def bw(g):
        ga = -(bv / (na * nb) - cos * av / na**2)
        gb = -(av / (na * nb) - cos * bv / nb**2)
        return g * ga.reshape(shape), g * gb.reshape(shape)

    return _node(1.0 - cos, (a, b), bw, "cosine")


def pairwise_sqdist(a: Node, b: Node) -> Node:
    """D[q, k] = ||a_q - b_k||^2 for row sets a (Q, h) and b (K, h)."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_sqdist: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        ga = 2.0 * (g.sum(axis=1)[:, None] * av - g @ bv)
        gb = 2.0 * (g.sum(axis=0)[:, None] * bv - g.T @ av)
        return ga, gb

    return _node(_accel.pairwise_sqdist(av, bv), (a, b), bw, "pairwise_sqdist")


def pairwise_cosine_distance(a: Node, b: Node) -> Node:
    """D[q, k] = 1 - cos(a_q, b_k)."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_cosine_distance: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    na = np.linalg.norm(av, axis=1)
    nb = np.linalg.norm(bv, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise DomainError("pairwise_cosine_distance: zero-norm row")
    ua, ub = av / na[:, None], bv / nb[:, None]
    cos = ua @ ub.T

    def bw(g):
        # d(1 - cos)/d a_q = -(ub_k - cos_qk ua_q) / |a_q|
        ga = -((g @ ub) - (g * cos).sum(axis=1)[:, None] * ua) / na[:, None]
        gb = -((g.T @ ua) - (g * cos).sum(axis=0)[:, None] * ub) / nb[:, None]
        return ga, gb

    return _node(1.0 - cos, (a, b), bw, "pairwise_cosine")


# ---------------------------------------------------------------------------
# fused LSTM state update
# ---------------------------------------------------------------------------


def lstm_cell(pre: Node, c_prev: Node) -> Node:
    """Gate nonlinearities + state update; returns ``[h | c]`` of shape (B, 2H)."""
    hd = c_prev.shape[1]
    if pre.value.ndim != 2 or pre.shape != (c_prev.shape[0], 4 * hd):
        raise ShapeError(f"lstm_cell: pre-activation {pre.shape} vs state {c_prev.shape}")
    cp = c_prev.value
    h, c, gates, tc = _accel.lstm_forward(pre.value, cp)

    def bw(g):
        g = np.ascontiguousarray(g)
        return _accel.lstm_backward(
            np.ascontiguousarray(g[:, :hd]), np.ascontiguousarray(g[:, hd:]), gates, tc, cp
        )

    return _node(np.concatenate([h, c], axis=1), (pre, c_prev), bw, "lstm_cell")


# ---------------------------------------------------------------------------
# parameters, backward pass, optimizer
# ---------------------------------------------------------------------------


class ParamStore:
    """Named trainable tensors for one model, iterated in sorted-name order."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self.entries: dict[str, Node] = {}
        self.velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, value, trainable: bool = True) -> Node:
        if name in self.entries:
            raise KeyError(f"parameter {name!r} already exists")
        node = Node(np.array(value, dtype=np.float64), requires_grad=True, name=name, op="param")
        node._grad = np.zeros_like(node.value)
        if not trainable:
            node.requires_grad = False
        self.entries[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return sorted(self.entries)

    def items(self):
        return [(k, self.entries[k]) for k in self.names()]

    def is_trainable(self, name: str) -> bool:
        return self.entries[name].requires_grad

    def set_trainable(self, prefix: str, flag: bool):
        for k, node in self.entries.items():
            if k.startswith(prefix):
                node.requires_grad = flag

    def values(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            if self.entries[k].shape != np.shape(v):
                raise ShapeError(f"{k}: stored {np.shape(v)} vs model {self.entries[k].shape}")
            self.entries[k].value = np.array(v, dtype=np.float64)

    def copy(self) -> "ParamStore":
        out = ParamStore(self.rng_seed)
        for k, node in self.items():
            out.add(k, node.value.copy(), trainable=node.requires_grad)
        return out

    def zero_grad(self):
        for node in self.entries.values():
            node._grad = np.zeros_like(node.value)

    def grad_norms(self, groups: Iterable[str] | None = None) -> dict[str, float]:
        """L2 gradient norm per name prefix (text before the first dot)."""
        acc: dict[str, float] = {}
        for k, node in self.items():
            grp = k.split(".", 1)[0]
            if groups is not None and grp not in groups:
                continue
            acc[grp] = acc.get(grp, 0.0) + float(np.sum(node.grad**2))
        return {k: float(np.sqrt(v)) for k, v in acc.items()}


def _toposort(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node, params: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Accumulate d loss / d node into every node upstream of ``loss``.

    Returns the gradients of the entries of ``params`` (zero for entries the
    loss does not depend on).
    """
    if loss.value.ndim != 0:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if params is not None:
        params.zero_grad()
    order = _toposort(loss) if loss.requires_grad else []
    for node in order:
        node._grad = None
    loss._grad = np.ones_like(loss.value)
    for node in reversed(order):
        g = node._grad
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent._grad is None:
                parent._grad = np.array(pg, dtype=np.float64)
            else:
                parent._grad = parent._grad + pg
    if params is None:
        return {}
    return {k: node.grad.copy() for k, node in params.items()}


def sgd_step(params: ParamStore, lr: float, momentum: float = 0.9) -> ParamStore:
    """SGD with heavy-ball momentum: v <- m v + g; p <- p - lr v. Clears grads."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    bad = [k for k, n in params.items() if n.requires_grad and not np.all(np.isfinite(n.grad))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in {bad}; step refused")
    for k, node in params.items():
        if not node.requires_grad:
            continue
        v = params.velocity.get(k)
        v = node.grad.copy() if v is None else momentum * v + node.grad
        params.velocity[k] = v
        node.value = node.value - lr * v
    params.zero_grad()
    return params
