"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is an append-only tape. Every op evaluates eagerly and, when
the graph records, stores a vector-Jacobian closure. Node ids increase
monotonically, so iterating the tape backwards is a valid reverse
topological order.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, DegenerateVectorError, DimensionError, ParameterError


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Node:
    __slots__ = ("graph", "id", "op", "inputs", "value", "vjp", "requires_grad")

    def __init__(self, graph, id, op, inputs, value, vjp, requires_grad):
        self.graph = graph
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Graph:
    """Tape of operations.

    ``trainable`` lists model objects whose parameters become trainable leaves
    when bound through :meth:`params_of`; every other bound model contributes
    constants. With ``record=False`` no closures are kept (inference mode).
    """

    def __init__(self, trainable=(), record=True):
        self.record = record
        self.nodes: list[Node] = []
        self.params: dict[int, str | None] = {}
        self._trainable = {id(m) for m in trainable}
        self._bound: dict[int, dict[str, Node]] = {}
        self._next = 0

    def _push(self, op, inputs, value, vjp=None) -> Node:
        if not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite output from op {op!r}")
        needs = self.record and any(i.requires_grad for i in inputs)
        node = Node(self, self._next, op, inputs if needs else (), value,
                    vjp if needs else None, needs)
        self._next += 1
        if self.record:
            self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._push("const", (), as_tensor(value))

    def param(self, value, name=None) -> Node:
        node = self._push("param", (), as_tensor(value))
        if self.record:
            node.requires_grad = True
            self.params[node.id] = name
        return node

    def params_of(self, model) -> dict[str, Node]:
        """Bind ``model.parameters()`` into this graph once, returning name -> node."""
        key = id(model)
        if key not in self._bound:
            make = self.param if key in self._trainable else (lambda v, name=None: self.constant(v))
            self._bound[key] = {name: make(v, name) for name, v in model.parameters().items()}
        return self._bound[key]

    def bind(self, model, nodes: dict) -> None:
        """Use existing ``nodes`` (name -> node) as the parameters of ``model``."""
        self._bound[id(model)] = dict(nodes)

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` for every parameter node in this graph."""
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        if not self.record:
            raise ContractError("graph was built without recording")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
        by_id = {n.id: n for n in self.nodes}
        for nid in range(loss.id, -1, -1):
            g = grads.get(nid)
            node = by_id.get(nid)
            if g is None or node is None or node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                prev = grads.get(inp.id)
                grads[inp.id] = gi if prev is None else prev + gi
        return {pid: grads.get(pid, np.zeros_like(by_id[pid].value)) for pid in self.params}

    def grads_for(self, model, grads: dict[int, np.ndarray]) -> dict[str, np.ndarray]:
        """Re-key a gradient map by the parameter names of ``model``."""
        bound = self._bound.get(id(model), {})
        return {name: grads[node.id] for name, node in bound.items() if node.id in grads}


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise ContractError("at least one operand must be a graph node")


def _lift(g, x):
    return x if isinstance(x, Node) else g.constant(x)


# ---------------------------------------------------------------- linear ops


def matmul(a, b) -> Node:
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    av, bv = a.value, b.value
    return g._push("matmul", (a, b), av @ bv, lambda gr: (gr @ bv.T, av.T @ gr))


def add(a, b) -> Node:
    """Elementwise sum; ``b`` may also be a bias row broadcast over the rows of ``a``."""
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if a.shape == b.shape:
        return g._push("add", (a, b), a.value + b.value, lambda gr: (gr, gr))
    if a.value.ndim == 2 and b.value.ndim == 1 and a.shape[1] == b.shape[0]:
        return g._push("add", (a, b), a.value + b.value, lambda gr: (gr, gr.sum(axis=0)))
    raise DimensionError(f"add: incompatible shapes {list(a.shape)} and {list(b.shape)}")


def sub(a, b) -> Node:
    g = _graph_of(a, b)
    return add(a, scale(_lift(g, b), -1.0))


def mul(a, b) -> Node:
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: incompatible shapes {list(a.shape)} and {list(b.shape)}")
    av, bv = a.value, b.value
    return g._push("mul", (a, b), av * bv, lambda gr: (gr * bv, gr * av))


def scale(x: Node, factor: float) -> Node:
    factor = float(factor)
    return x.graph._push("scale", (x,), x.value * factor, lambda gr: (gr * factor,))


def transpose(x: Node) -> Node:
    if x.value.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {list(x.shape)}")
    return x.graph._push("transpose", (x,), x.value.T.copy(), lambda gr: (gr.T,))


def reshape(x: Node, shape) -> Node:
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {list(old)} -> {list(shape)}") from exc
    return x.graph._push("reshape", (x,), out, lambda gr: (gr.reshape(old),))


def concat(xs, axis=1) -> Node:
    g = _graph_of(*xs)
    xs = [_lift(g, x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: shapes {[list(x.shape) for x in xs]}") from exc
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return g._push("concat", tuple(xs), out, lambda gr: tuple(np.split(gr, cuts, axis=axis)))


def sum_(x: Node) -> Node:
    shape = x.shape
    return x.graph._push("sum", (x,), np.array(x.value.sum()), lambda gr: (np.full(shape, float(gr)),))


def take_rows(x: Node, index) -> Node:
    """Row gather ``x[index]``; gradients scatter-add back (embedding lookup)."""
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def vjp(gr):
        out = np.zeros(shape)
        np.add.at(out, index, gr)
        return (out,)

    return x.graph._push("take_rows", (x,), x.value[index], vjp)


def segment_mean(x: Node, lengths) -> Node:
    """Mean over each contiguous row segment, broadcast back to every row of it.

    ``lengths`` gives the segment sizes in order; they must sum to ``x.shape[0]``.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.sum() != x.shape[0] or np.any(lengths < 1):
        raise DimensionError(f"segment_mean: lengths {lengths.tolist()} do not tile {x.shape[0]} rows")
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    inv = (1.0 / lengths)[:, None]
    means = np.add.reduceat(x.value, starts, axis=0) * inv

    def vjp(gr):
        return (np.repeat(np.add.reduceat(gr, starts, axis=0) * inv, lengths, axis=0),)

    return x.graph._push("segment_mean", (x,), np.repeat(means, lengths, axis=0), vjp)


def row_mean(x: Node) -> Node:
    """Mean over rows of a matrix, broadcast back to every row."""
    return segment_mean(x, [x.shape[0]])


# ----------------------------------------------------------- pointwise ops


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return x.graph._push("tanh", (x,), y, lambda gr: (gr * (1.0 - y * y),))


def sigmoid(x: Node) -> Node:
    v = x.value
    y = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return x.graph._push("sigmoid", (x,), y, lambda gr: (gr * y * (1.0 - y),))


def log(x: Node) -> Node:
    v = x.value
    if np.any(v <= 0):
        raise ParameterError("log of a non-positive value")
    return x.graph._push("log", (x,), np.log(v), lambda gr: (gr / v,))


def abs_(x: Node) -> Node:
    """|x| with the subgradient at 0 taken as 0."""
    s = np.sign(x.value)
    return x.graph._push("abs", (x,), np.abs(x.value), lambda gr: (gr * s,))


def clip(x: Node, lo: float, hi: float) -> Node:
    v = x.value
    inside = (v >= lo) & (v <= hi)
    return x.graph._push("clip", (x,), np.clip(v, lo, hi), lambda gr: (gr * inside,))


def dropout_mask(shape, rate: float, seed: int) -> np.ndarray:
    """Inverted-dropout multiplier; element k depends only on (seed, k)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    size = int(np.prod(shape))
    if rate == 0.0:
        return np.ones(shape)
    u = np.random.Generator(np.random.Philox(key=int(seed))).random(size)
    return ((u >= rate) / (1.0 - rate)).reshape(shape)


def dropout(x: Node, rate: float, seed: int | None) -> Node:
    """Inverted dropout. ``seed=None`` means inference mode (identity)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if seed is None or rate == 0.0:
        return x
    m = dropout_mask(x.shape, rate, seed)
    return x.graph._push("dropout", (x,), x.value * m, lambda gr: (gr * m,))


# ----------------------------------------------------- similarity + softmax


def _rowdot(a, b):
    return np.sum(a * b, axis=-1)


def cosine_rows(a: Node, b: Node) -> Node:
    """Row-wise cosine similarity of two equally shaped matrices (or vectors).

    Computed as ``a.b / sqrt(|a|^2 |b|^2)`` so identical rows give exactly 1.
    """
    g = _graph_of(a, b)
    a, b = _lift(g, a), _lift(g, b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine: shapes {list(a.shape)} and {list(b.shape)} differ")
    av, bv = a.value, b.value
    dot, na, nb = _rowdot(av, bv), _rowdot(av, av), _rowdot(bv, bv)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateVectorError("cosine of a zero-norm vector")
    denom = np.sqrt(na * nb)
    cos = dot / denom

    def vjp(gr):
        gr = np.asarray(gr)[..., None]
        c = cos[..., None]
        inv = (1.0 / denom)[..., None]
        ga = gr * (bv * inv - c * av / na[..., None])
        gb = gr * (av * inv - c * bv / nb[..., None])
        return ga, gb

    return g._push("cosine", (a, b), cos, vjp)


def l2_normalize(x: Node) -> Node:
    """Scale each row to unit Euclidean norm."""
    v = x.value
    n = np.sqrt(_rowdot(v, v))[..., None]
    if np.any(n == 0):
        raise DegenerateVectorError("cannot normalize a zero-norm row")
    y = v / n

    def vjp(gr):
        return ((gr - y * _rowdot(gr, y)[..., None]) / n,)

    return x.graph._push("l2_normalize", (x,), y, vjp)


def cosine_matrix(a: Node, b: Node) -> Node:
    """All-pairs cosine: entry (i, j) compares row i of ``a`` with row j of ``b``."""
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


def logsumexp_rows(x: Node, mask) -> Node:
    """Per-row log-sum-exp over the entries where ``mask`` is true (max-shifted)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask shape {list(mask.shape)} != {list(x.shape)}")
    if not mask.any(axis=1).all():
        raise ParameterError("log-sum-exp over an empty row")
    v = np.where(mask, x.value, -np.inf)
    top = v.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(v - top), 0.0)
    s = e.sum(axis=1, keepdims=True)
    out = (np.log(s) + top)[:, 0]
    soft = e / s
    return x.graph._push("logsumexp", (x,), out, lambda gr: (soft * np.asarray(gr)[:, None],))


# ------------------------------------------------------------ conveniences


def cosine(u, v) -> float:
    """Cosine similarity of two plain vectors."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"cosine: shapes {list(u.shape)} and {list(v.shape)}")
    g = Graph(record=False)
    return float(cosine_rows(g.constant(u), g.constant(v)).value)


def gradcheck(fn, arrays, h=1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn(graph, nodes)`` must return a scalar node. Relative error per input is
    ``|a - n| / max(|a|, |n|, 1e-8)`` in the Euclidean norm.
    """
    arrays = [as_tensor(a).copy() for a in arrays]
    g = Graph()
    leaves = [g.param(a) for a in arrays]
    grads = g.backward(fn(g, leaves))
    worst = 0.0
    for leaf, base in zip(leaves, arrays):
        analytic = grads[leaf.id]
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            vals = []
            for step in (h, -h):
                flat[k] = orig + step
                gg = Graph(record=False)
                vals.append(float(fn(gg, [gg.constant(a) for a in arrays]).value))
            flat[k] = orig
            numeric.reshape(-1)[k] = (vals[0] - vals[1]) / (2 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / denom))
    return worst
