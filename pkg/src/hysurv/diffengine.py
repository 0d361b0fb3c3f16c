"""Small reverse-mode differentiation engine over dense float64 arrays.

Every primitive below accepts either plain arrays or :class:`Tensor` nodes.
With plain inputs it simply evaluates with numpy; as soon as one argument is
a ``Tensor`` the result is recorded on that tensor's :class:`Graph`.  Both
paths share the same forward kernel, so the value computed through a graph is
bitwise identical to the plain evaluation.  This lets the geometry and loss
code be written once and reused for fast evaluation, for training and for
finite-difference auditing.

Example
-------
>>> g = Graph(lambda v: v["x"] * v["y"])
>>> float(g.evaluate({"x": 2.0, "y": 3.0}))
6.0
>>> g.backward()["x"]
array(3.)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "Tensor", "Graph", "GraphError", "NonFiniteError", "GradientReport",
    "finite_diff_check", "sgd_step", "Adam", "value_of",
    "add", "sub", "mul", "div", "neg", "square", "matmul", "tanh", "artanh",
    "cosh", "arcosh", "asin", "acos", "sin", "sqrt", "exp", "log", "sigmoid",
    "abs", "relu", "clamp", "sum", "mean", "norm", "logsumexp", "where",
    "concat", "stack", "reshape", "transpose",
]


class GraphError(RuntimeError):
    """Misuse of a computation graph (wrong call order, mixed graphs, shapes)."""


class NonFiniteError(FloatingPointError):
    """A recorded node produced NaN or infinity."""

    def __init__(self, node_id: int, op: str):
        super().__init__(f"node {node_id} ({op}) produced a non-finite value")
        self.node_id = node_id
        self.op = op


class Tensor:
    """A node in a :class:`Graph`: a cached forward value plus its provenance."""

    __slots__ = ("value", "graph", "id", "op", "parents", "backward_fn", "name")
    __array_priority__ = 1000

    def __init__(self, value, graph, op, parents=(), backward_fn=None, name=None):
        self.value = value
        self.graph = graph
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.id = graph._register(self)

    def __repr__(self):
        return f"Tensor(id={self.id}, op={self.op!r}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __len__(self):
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        if exponent != 2:
            raise GraphError("only squaring is supported")
        return square(self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value_of(x):
    """Forward value of ``x`` whether it is a Tensor or a plain array."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class Graph:
    """Recorded forward trace of ``fn`` supporting reverse-mode gradients.

    ``fn`` receives a dict mapping leaf names to tensors and returns the
    output.  Nodes are appended in creation order, which is a topological
    order, and gradients are accumulated by walking that list backwards.
    """

    def __init__(self, fn: Callable[[dict], object] | None = None):
        self.fn = fn
        self.nodes: list[Tensor] = []
        self.leaves: dict[str, Tensor] = {}
        self.output = None
        self._evaluated = False

    def _register(self, node: Tensor) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def leaf(self, name: str, value) -> Tensor:
        if name in self.leaves:
            raise GraphError(f"leaf {name!r} bound twice")
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(len(self.nodes), f"leaf {name}")
        node = Tensor(arr, self, "leaf", name=name)
        self.leaves[name] = node
        return node

    def evaluate(self, inputs: Mapping[str, object]):
        """Run ``fn`` on fresh leaves bound to ``inputs`` and cache the trace."""
        if self.fn is None:
            raise GraphError("graph has no function to evaluate")
        self.nodes = []
        self.leaves = {}
        leaves = {name: self.leaf(name, value) for name, value in inputs.items()}
        self.output = self.fn(leaves)
        self._evaluated = True
        return value_of(self.output)

    def backward(self, seed=1.0, output=None) -> dict[str, np.ndarray]:
        """Gradients of the output with respect to every leaf.

        Leaves the output does not depend on receive zero arrays.
        """
        if output is None:
            if not self._evaluated:
                raise GraphError("backward called before evaluate")
            output = self.output
        grads = {name: np.zeros_like(leaf.value) for name, leaf in self.leaves.items()}
        if not isinstance(output, Tensor):
            return grads
        if output.graph is not self:
            raise GraphError("output belongs to a different graph")
        seed = np.broadcast_to(np.asarray(seed, dtype=np.float64), output.value.shape)
        acc: dict[int, np.ndarray] = {output.id: np.array(seed)}
        for node in reversed(self.nodes[: output.id + 1]):
            g = acc.pop(node.id, None)
            if g is None or node.backward_fn is None:
                if g is not None and node.op == "leaf":
                    grads[node.name] = grads[node.name] + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if parent is None or pg is None:
                    continue
                pg = _unbroadcast(pg, parent.value.shape)
                if parent.id in acc:
                    acc[parent.id] = acc[parent.id] + pg
                else:
                    acc[parent.id] = pg
        return grads


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _graph_of(args):
    graph = None
    for a in args:
        if isinstance(a, Tensor):
            if graph is None:
                graph = a.graph
            elif a.graph is not graph:
                raise GraphError("operands belong to different graphs")
    return graph


def _record(graph, value, op, parents, backward_fn):
    node = Tensor(value, graph, op, tuple(p if isinstance(p, Tensor) else None for p in parents),
                  backward_fn)
    if not np.isfinite(value).all():
        raise NonFiniteError(node.id, op)
    return node


def _apply(op, forward, backward, *args):
    """Evaluate ``forward`` on raw values; record on a graph if any arg is a Tensor.

    ``backward(g, out, *raw_args)`` returns one gradient per argument.
    """
    graph = _graph_of(args)
    raw = [value_of(a) for a in args]
    out = np.asarray(forward(*raw), dtype=np.float64)
    if graph is None:
        return out
    return _record(graph, out, op, args, lambda g: backward(g, out, *raw))


# -- arithmetic ------------------------------------------------------------

def add(a, b):
    return _apply("add", np.add, lambda g, y, a, b: (g, g), a, b)


def sub(a, b):
    return _apply("sub", np.subtract, lambda g, y, a, b: (g, -g), a, b)


def mul(a, b):
    return _apply("mul", np.multiply, lambda g, y, a, b: (g * b, g * a), a, b)


def div(a, b):
    return _apply("div", np.divide, lambda g, y, a, b: (g / b, -g * a / (b * b)), a, b)


def neg(a):
    return _apply("neg", np.negative, lambda g, y, a: (-g,), a)


def square(a):
    return _apply("square", np.square, lambda g, y, a: (2.0 * a * g,), a)


def _matmul_backward(g, y, a, b):
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = g2 @ np.swapaxes(b2, -1, -2)
    gb = np.swapaxes(a2, -1, -2) @ g2
    if a.ndim == 1:
        ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:])
    if b.ndim == 1:
        gb = gb[..., 0]
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def matmul(a, b):
    return _apply("matmul", np.matmul, _matmul_backward, a, b)


# -- elementwise functions -------------------------------------------------

def tanh(x):
    return _apply("tanh", np.tanh, lambda g, y, x: (g * (1.0 - y * y),), x)


def artanh(x):
    return _apply("artanh", np.arctanh, lambda g, y, x: (g / (1.0 - x * x),), x)


def cosh(x):
    return _apply("cosh", np.cosh, lambda g, y, x: (g * np.sinh(x),), x)


def _inv_sqrt_or_zero(a):
    # derivative convention at domain endpoints (reached only through a clamp): 0
    ok = a > 0
    return np.where(ok, 1.0 / np.sqrt(np.where(ok, a, 1.0)), 0.0)


def arcosh(x):
    return _apply("arcosh", np.arccosh, lambda g, y, x: (g * _inv_sqrt_or_zero(x * x - 1.0),), x)


def asin(x):
    return _apply("asin", np.arcsin, lambda g, y, x: (g * _inv_sqrt_or_zero(1.0 - x * x),), x)


def acos(x):
    return _apply("acos", np.arccos, lambda g, y, x: (-g * _inv_sqrt_or_zero(1.0 - x * x),), x)


def sin(x):
    return _apply("sin", np.sin, lambda g, y, x: (g * np.cos(x),), x)


def sqrt(x):
    return _apply("sqrt", np.sqrt, lambda g, y, x: (g / (2.0 * y),), x)


def exp(x):
    return _apply("exp", np.exp, lambda g, y, x: (g * y,), x)


def log(x):
    return _apply("log", np.log, lambda g, y, x: (g / x,), x)


def _sigmoid(x):
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    return _apply("sigmoid", _sigmoid, lambda g, y, x: (g * y * (1.0 - y),), x)


def abs(x):  # noqa: A001 - mirrors numpy naming
    return _apply("abs", np.abs, lambda g, y, x: (g * np.sign(x),), x)


def relu(x):
    """``max(0, x)`` with subgradient 0 at the kink."""
    return _apply("relu", lambda x: np.maximum(x, 0.0), lambda g, y, x: (g * (x > 0),), x)


def clamp(x, lo=None, hi=None):
    """Clip to ``[lo, hi]``; the gradient is zero wherever the bound is active."""
    lo_ = -np.inf if lo is None else lo
    hi_ = np.inf if hi is None else hi

    def backward(g, y, x):
        return (g * ((x >= lo_) & (x <= hi_)),)

    return _apply("clamp", lambda x: np.clip(x, lo_, hi_), backward, x)


def where(cond, a, b):
    """Select from ``a`` where ``cond`` holds, else ``b``. ``cond`` is a constant mask."""
    cond = np.asarray(value_of(cond), dtype=bool)
    return _apply("where", lambda a, b: np.where(cond, a, b),
                  lambda g, y, a, b: (g * cond, g * ~cond), a, b)


# -- reductions ------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return _apply("sum", lambda x: np.sum(x, axis=axis, keepdims=keepdims),
                  lambda g, y, x: (_expand(g, x.shape, axis, keepdims),), x)


def mean(x, axis=None, keepdims=False):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return div(sum(x, axis=axis, keepdims=keepdims), float(n))


def _norm(x, axis, keepdims):
    return np.sqrt(np.sum(x * x, axis=axis, keepdims=keepdims))


def norm(x, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; gradient at the zero vector is defined as 0."""

    def backward(g, y, x):
        y_ = y if keepdims else np.expand_dims(y, axis)
        g_ = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(y_ > 0, y_, 1.0)
        return (np.where(y_ > 0, g_ * x / safe, 0.0),)

    return _apply("norm", lambda x: _norm(x, axis, keepdims), backward, x)


def _logsumexp(x, axis, keepdims):
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def logsumexp(x, axis=-1, keepdims=False):
    def backward(g, y, x):
        y_ = y if keepdims else np.expand_dims(y, axis)
        g_ = g if keepdims else np.expand_dims(g, axis)
        return (g_ * np.exp(x - y_),)

    return _apply("logsumexp", lambda x: _logsumexp(x, axis, keepdims), backward, x)


# -- shape manipulation ----------------------------------------------------

def _getitem(x, index):
    def backward(g, y, x):
        out = np.zeros_like(x)
        np.add.at(out, index, g)
        return (out,)

    return _apply("getitem", lambda x: x[index], backward, x)


def reshape(x, shape):
    return _apply("reshape", lambda x: np.reshape(x, shape),
                  lambda g, y, x: (np.reshape(g, x.shape),), x)


def transpose(x):
    return _apply("transpose", lambda x: np.transpose(x), lambda g, y, x: (np.transpose(g),), x)


def concat(xs, axis=0):
    xs = list(xs)

    def backward(g, y, *raw):
        splits = np.cumsum([r.shape[axis] for r in raw])[:-1]
        return tuple(np.split(g, splits, axis=axis))

    return _apply("concat", lambda *raw: np.concatenate(raw, axis=axis), backward, *xs)


def stack(xs, axis=0):
    xs = list(xs)

    def backward(g, y, *raw):
        return tuple(np.take(g, i, axis=axis) for i in range(len(raw)))

    return _apply("stack", lambda *raw: np.stack(raw, axis=axis), backward, *xs)


# -- gradient auditing and updates -----------------------------------------

@dataclass
class GradientReport:
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]
    max_rel_error: float

    @property
    def worst_leaf(self) -> str | None:
        worst, name = -1.0, None
        for key in self.analytic:
            err = _rel_error(self.analytic[key], self.numeric[key])
            if err > worst:
                worst, name = err, key
        return name


def _rel_error(a, n):
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def finite_diff_check(f, point: Mapping[str, object], step: float = 1e-5) -> GradientReport:
    """Compare reverse-mode gradients of scalar ``f`` with central differences.

    ``f`` takes a dict of leaf values.  The numeric side calls it with plain
    arrays, so no graph is built for the perturbed evaluations.
    """
    point = {k: np.array(v, dtype=np.float64) for k, v in point.items()}
    graph = Graph(f)
    value = graph.evaluate(point)
    if np.ndim(value) != 0:
        raise GraphError(f"finite_diff_check needs a scalar function, got shape {np.shape(value)}")
    analytic = graph.backward()

    numeric = {}
    for name, arr in point.items():
        est = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sign in (1.0, -1.0):
                shifted = dict(point)
                bumped = arr.copy()
                bumped[idx] += sign * step
                shifted[name] = bumped
                fv = float(value_of(f(shifted)))
                if not np.isfinite(fv):
                    raise NonFiniteError(-1, f"f at perturbed {name}{list(idx)}")
                vals.append(fv)
            est[idx] = (vals[0] - vals[1]) / (2.0 * step)
        numeric[name] = est

    err = max((_rel_error(analytic[k], numeric[k]) for k in point), default=0.0)
    return GradientReport(analytic, numeric, err)


def sgd_step(params, grads, learning_rate, ball_params=(), c=1.0):
    """Plain gradient step; parameters named in ``ball_params`` are re-projected."""
    from .geometry import project_to_ball

    out = {}
    for name, p in params.items():
        g = grads.get(name)
        new = p if g is None else p - learning_rate * g
        if name in ball_params:
            new = project_to_ball(new, c)
        out[name] = new
    return out


class Adam:
    """Adam optimizer state over a dict of parameter arrays."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name in params:  # dict order is fixed, so updates are deterministic
            p, g = params[name], grads[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.get(name, np.zeros_like(p))
            v = self.v.get(name, np.zeros_like(p))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            out[name] = p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
        return out
