"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is a tape: nodes are appended in creation order, so the
node list is already a topological order and the backward sweep is a
single reversed pass over it.

    g = Graph()
    w = g.param(np.ones(3), name="w")
    loss = (w * w).sum()
    grads = g.backward(loss)        # {w.id: array([2., 2., 2.])}
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

Tensor = np.ndarray


class GraphError(Exception):
    """Misuse of a graph: bad loss, repeated backward, foreign nodes."""


class ShapeError(GraphError, ValueError):
    pass


class DomainError(GraphError, ValueError):
    """An op was applied outside its domain or produced non-finite values."""


class NonFiniteGradient(GraphError, FloatingPointError):
    pass


def as_tensor(value) -> Tensor:
    arr = np.asarray(value, dtype=np.float64)
    return arr


@dataclass(frozen=True)
class Op:
    forward: Callable
    backward: Optional[Callable]  # None marks a non-differentiable op


_OPS: dict[str, Op] = {}


def register(name: str, backward: Optional[Callable] = None):
    def deco(forward):
        _OPS[name] = Op(forward, backward)
        return forward

    return deco


def unbroadcast(grad: Tensor, shape: tuple) -> Tensor:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {shapes}") from exc


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _log_sum_exp(x, axis, keepdims=False):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def _softmax(x, axis):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# elementwise arithmetic


def _check_binary(a, b):
    _broadcast_shape(a.shape, b.shape)


@register("add", lambda g, n: (unbroadcast(g, n.parents[0].shape), unbroadcast(g, n.parents[1].shape)))
def _add(a, b):
    _check_binary(a, b)
    return a + b


@register("sub", lambda g, n: (unbroadcast(g, n.parents[0].shape), unbroadcast(-g, n.parents[1].shape)))
def _sub(a, b):
    _check_binary(a, b)
    return a - b


def _mul_backward(g, n):
    a, b = n.parents
    return unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)


@register("mul", _mul_backward)
def _mul(a, b):
    _check_binary(a, b)
    return a * b


def _div_backward(g, n):
    a, b = n.parents
    return (
        unbroadcast(g / b.value, a.shape),
        unbroadcast(-g * a.value / (b.value * b.value), b.shape),
    )


@register("div", _div_backward)
def _div(a, b):
    _check_binary(a, b)
    if np.any(b == 0):
        raise DomainError("division by zero")
    return a / b


@register("neg", lambda g, n: (-g,))
def _neg(a):
    return -a


def _matmul_backward(g, n):
    a, b = n.parents
    return g @ b.value.T, a.value.T @ g


@register("matmul", _matmul_backward)
def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (n, m) @ (m, p), got {a.shape} @ {b.shape}")
    return a @ b


# --------------------------------------------------------------------------
# pointwise nonlinearities


@register("sigmoid", lambda g, n: (g * n.value * (1.0 - n.value),))
def _sigmoid(a):
    return _stable_sigmoid(a)


@register("tanh", lambda g, n: (g * (1.0 - n.value * n.value),))
def _tanh(a):
    return np.tanh(a)


@register("relu", lambda g, n: (g * (n.parents[0].value > 0),))
def _relu(a):
    return np.maximum(a, 0.0)


@register("softplus", lambda g, n: (g * _stable_sigmoid(n.parents[0].value),))
def _softplus(a):
    return np.logaddexp(0.0, a)


@register("exp", lambda g, n: (g * n.value,))
def _exp(a):
    return np.exp(a)


@register("log", lambda g, n: (g / n.parents[0].value,))
def _log(a):
    if np.any(a <= 0):
        raise DomainError("log of non-positive value")
    return np.log(a)


@register("square", lambda g, n: (2.0 * g * n.parents[0].value,))
def _square(a):
    return a * a


def _clip_backward(g, n):
    x = n.parents[0].value
    lo, hi = n.attrs["lo"], n.attrs["hi"]
    return (g * ((x >= lo) & (x <= hi)),)


@register("clip", _clip_backward)
def _clip(a, lo, hi):
    return np.clip(a, lo, hi)


# --------------------------------------------------------------------------
# reductions and normalizers


def _expand(g, n, axis):
    """Re-insert a reduced axis so ``g`` broadcasts against the input."""
    if axis is None or n.attrs.get("keepdims"):
        return g
    return np.expand_dims(g, axis)


@register("sum", lambda g, n: (np.broadcast_to(_expand(g, n, n.attrs["axis"]), n.parents[0].shape).copy(),))
def _sum(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _mean_backward(g, n):
    shape = n.parents[0].shape
    axis = n.attrs["axis"]
    count = np.prod(shape) if axis is None else shape[axis]
    return (np.broadcast_to(_expand(g, n, axis), shape) / count,)


@register("mean", _mean_backward)
def _mean(a, axis=None, keepdims=False):
    return np.mean(a, axis=axis, keepdims=keepdims)


def _lse_backward(g, n):
    axis = n.attrs["axis"]
    x = n.parents[0].value
    out = _expand(n.value, n, axis)
    return (_expand(g, n, axis) * np.exp(x - out),)


@register("log_sum_exp", _lse_backward)
def _lse(a, axis=-1, keepdims=False):
    return _log_sum_exp(a, axis, keepdims)


def _softmax_backward(g, n):
    axis = n.attrs["axis"]
    y = n.value
    inner = np.sum(g * y, axis=axis, keepdims=True)
    grad = y * (g - inner)
    tau = n.attrs.get("tau")
    return (grad / tau if tau is not None else grad,)


@register("softmax", _softmax_backward)
def _softmax_op(a, axis=-1):
    return _softmax(a, axis)


@register("tempered_softmax", _softmax_backward)
def _tempered_softmax(a, axis=-1, tau=1.0):
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    return _softmax(a / tau, axis)


def _log_softmax_backward(g, n):
    axis = n.attrs["axis"]
    sm = np.exp(n.value)
    return (g - sm * np.sum(g, axis=axis, keepdims=True),)


@register("log_softmax", _log_softmax_backward)
def _log_softmax(a, axis=-1):
    return a - _log_sum_exp(a, axis, keepdims=True)


# --------------------------------------------------------------------------
# structural


def _concat_backward(g, n):
    axis = n.attrs["axis"]
    sizes = [p.shape[axis] for p in n.parents]
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


@register("concat", _concat_backward)
def _concat(*arrays, axis=-1):
    try:
        return np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _slice_backward(g, n):
    out = np.zeros(n.parents[0].shape)
    out[n.attrs["index"]] = g
    return (out,)


@register("slice", _slice_backward)
def _slice(a, index):
    return a[index].copy()


@register("reshape", lambda g, n: (g.reshape(n.parents[0].shape),))
def _reshape(a, shape):
    try:
        return a.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


@register("argmax_one_hot")
def _argmax_one_hot(a, axis=-1):
    idx = np.argmax(a, axis=axis)  # first maximal index wins ties
    out = np.zeros_like(a)
    np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis=axis)
    return out


@register("stop_gradient")
def _stop_gradient(a):
    return a.copy()


@register("straight_through", lambda g, n: (None, g))
def _straight_through(hard, soft):
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through shapes differ: {hard.shape} vs {soft.shape}")
    return hard.copy()


@register("sample", lambda g, n: (g,))
def _sample(a):
    return a


# --------------------------------------------------------------------------


class Node:
    """One value on the tape.

    ``adjoint`` is populated by :meth:`Graph.backward`; before that (or for
    nodes the sweep never reached) it reads as zeros of the value's shape.
    """

    __array_priority__ = 1000  # ndarray <op> Node defers to Node

    def __init__(self, graph, id, op, parents, value, attrs=None, name=None, requires_grad=False):
        self.graph = graph
        self.id = id
        self.op = op
        self.parents = tuple(parents)
        self.value = value
        self.attrs = attrs or {}
        self.name = name
        self.requires_grad = requires_grad
        self._adjoint = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def adjoint(self) -> Tensor:
        if self._adjoint is None:
            return np.zeros_like(self.value)
        return self._adjoint

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__} #{self.id} {self.op}{label} shape={self.shape}>"

    # operator sugar; scalars and arrays become constants
    def _lift(self, other):
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.apply("add", [self, self._lift(other)])

    def __radd__(self, other):
        return self.graph.apply("add", [self._lift(other), self])

    def __sub__(self, other):
        return self.graph.apply("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.graph.apply("sub", [self._lift(other), self])

    def __mul__(self, other):
        return self.graph.apply("mul", [self, self._lift(other)])

    def __rmul__(self, other):
        return self.graph.apply("mul", [self._lift(other), self])

    def __truediv__(self, other):
        return self.graph.apply("div", [self, self._lift(other)])

    def __rtruediv__(self, other):
        return self.graph.apply("div", [self._lift(other), self])

    def __neg__(self):
        return self.graph.apply("neg", [self])

    def __matmul__(self, other):
        return self.graph.apply("matmul", [self, self._lift(other)])

    def __getitem__(self, index):
        return self.graph.apply("slice", [self], index=index)

    def sum(self, axis=None, keepdims=False):
        return self.graph.apply("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return self.graph.apply("mean", [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.graph.apply("reshape", [self], shape=shape)


class StochasticNode(Node):
    """A sample. Its single parent is the transform that produced the value.

    When ``reparameterized`` is false the backward sweep stops here and the
    gradient for the distribution parameters has to come from an estimator.
    """

    def __init__(self, *args, distribution, noise, reparameterized, **kwargs):
        super().__init__(*args, **kwargs)
        self.distribution = distribution
        self.noise = noise
        self.reparameterized = reparameterized


class Graph:
    """Single-use tape. ``backward`` may be called once per instance."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Node] = []
        self._backward_done = False

    def __len__(self):
        return len(self.nodes)

    def _add(self, node):
        self.nodes.append(node)
        return node

    def param(self, value, name: Optional[str] = None) -> Node:
        node = Node(self, len(self.nodes), "param", (), as_tensor(value).copy(), name=name, requires_grad=True)
        self.params.append(node)
        return self._add(node)

    def constant(self, value, name: Optional[str] = None) -> Node:
        return self._add(Node(self, len(self.nodes), "constant", (), as_tensor(value), name=name))

    def _check_inputs(self, inputs):
        for p in inputs:
            if not isinstance(p, Node):
                raise TypeError(f"expected Node, got {type(p).__name__}")
            if p.graph is not self or p.id >= len(self.nodes) or self.nodes[p.id] is not p:
                raise GraphError(f"{p!r} does not belong to this graph")

    def apply(self, op_tag: str, inputs: Sequence[Node], **attrs) -> Node:
        """Run ``op_tag`` forward on ``inputs`` and record the result."""
        try:
            op = _OPS[op_tag]
        except KeyError:
            raise GraphError(f"unknown op {op_tag!r}") from None
        self._check_inputs(inputs)
        if self._backward_done:
            raise GraphError("graph is finalized; build a new Graph")
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value = as_tensor(op.forward(*(p.value for p in inputs), **attrs))
        if not np.all(np.isfinite(value)):
            raise DomainError(f"{op_tag} produced non-finite values")
        if op_tag in ("sum", "mean", "log_sum_exp") and "axis" not in attrs:
            attrs["axis"] = None if op_tag != "log_sum_exp" else -1
        if op_tag in ("softmax", "log_softmax", "tempered_softmax", "argmax_one_hot", "concat") and "axis" not in attrs:
            attrs["axis"] = -1
        requires_grad = op.backward is not None and any(p.requires_grad for p in inputs)
        node = Node(self, len(self.nodes), op_tag, inputs, value, attrs, requires_grad=requires_grad)
        return self._add(node)

    def stochastic(
        self,
        transform: Node,
        distribution: str,
        noise: Optional[Tensor] = None,
        reparameterized: bool = True,
    ) -> StochasticNode:
        """Mark ``transform`` as a sample of ``distribution``."""
        self._check_inputs([transform])
        node = StochasticNode(
            self,
            len(self.nodes),
            "sample",
            (transform,),
            transform.value,
            name=distribution,
            requires_grad=reparameterized and transform.requires_grad,
            distribution=distribution,
            noise=noise,
            reparameterized=reparameterized,
        )
        return self._add(node)

    def backward(self, loss: Node) -> dict[int, Tensor]:
        """Populate adjoints and return ``{param id: d loss / d param}``."""
        self._check_inputs([loss])
        if self._backward_done:
            raise GraphError("backward already ran on this graph")
        if loss.value.size != 1:
            raise GraphError(f"loss must be scalar, got shape {loss.shape}")
        self._backward_done = True

        for node in self.nodes:
            node._adjoint = None
        loss._adjoint = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            adj = node._adjoint
            if adj is None or not node.requires_grad or not node.parents:
                continue
            for parent in node.parents:
                if parent.id >= node.id:
                    raise GraphError("cycle detected")
            grads = _OPS[node.op].backward(adj, node)
            for parent, grad in zip(node.parents, grads):
                if grad is None or not parent.requires_grad:
                    continue
                if grad.shape != parent.shape:
                    raise ShapeError(f"{node.op} backward produced {grad.shape}, expected {parent.shape}")
                if parent._adjoint is None:
                    parent._adjoint = np.array(grad, dtype=np.float64)
                else:
                    parent._adjoint = parent._adjoint + grad
        return {p.id: p.adjoint for p in self.params}

    def grads_by_name(self, grads: dict[int, Tensor]) -> dict[str, Tensor]:
        return {p.name: grads[p.id] for p in self.params if p.name is not None}

    # convenience wrappers for the op table
    def sigmoid(self, x):
        return self.apply("sigmoid", [x])

    def tanh(self, x):
        return self.apply("tanh", [x])

    def relu(self, x):
        return self.apply("relu", [x])

    def softplus(self, x):
        return self.apply("softplus", [x])

    def exp(self, x):
        return self.apply("exp", [x])

    def log(self, x):
        return self.apply("log", [x])

    def square(self, x):
        return self.apply("square", [x])

    def clip(self, x, lo, hi):
        return self.apply("clip", [x], lo=lo, hi=hi)

    def softmax(self, x, axis=-1):
        return self.apply("softmax", [x], axis=axis)

    def log_softmax(self, x, axis=-1):
        return self.apply("log_softmax", [x], axis=axis)

    def tempered_softmax(self, x, tau, axis=-1):
        return self.apply("tempered_softmax", [x], axis=axis, tau=float(tau))

    def log_sum_exp(self, x, axis=-1, keepdims=False):
        return self.apply("log_sum_exp", [x], axis=axis, keepdims=keepdims)

    def concat(self, xs, axis=-1):
        return self.apply("concat", list(xs), axis=axis)

    def argmax_one_hot(self, x, axis=-1):
        return self.apply("argmax_one_hot", [x], axis=axis)

    def stop_gradient(self, x):
        return self.apply("stop_gradient", [x])

    def straight_through(self, hard, soft):
        """Forward ``hard``, backward as if the output were ``soft``."""
        return self.apply("straight_through", [hard, soft])


def sgd_momentum_step(params, grads, lr, momentum_state, momentum=0.9):
    """Classical momentum: ``v <- momentum*v + grad; param <- param - lr*v``.

    All arguments are ``{name: array}`` dicts; ``momentum_state`` may be
    empty (zero velocity). Returns ``(new_params, new_state)`` and leaves the
    inputs untouched. A non-finite gradient raises before anything changes.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient for {name!r}")
    new_params, new_state = dict(params), dict(momentum_state)
    for name, grad in grads.items():
        if name not in params:
            continue
        if np.shape(grad) != np.shape(params[name]):
            raise ShapeError(f"gradient for {name!r} has shape {np.shape(grad)}, param {np.shape(params[name])}")
        v = momentum * momentum_state.get(name, 0.0) + grad
        new_state[name] = v
        new_params[name] = params[name] - lr * v
    return new_params, new_state
