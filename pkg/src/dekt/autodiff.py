"""Eager reverse-mode automatic differentiation over dense float64 arrays.

Every op is evaluated as soon as it is appended to a :class:`Graph`, so
values are always available (the T-DEKT self-loop relies on this to read
predicted emotions mid-sequence). ``backward`` walks the node list in
reverse insertion order, which is a valid reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

OP_KINDS = frozenset(
    {
        "constant",
        "parameter",
        "matmul",
        "add",
        "add_bias",
        "mul",
        "concat",
        "stack",
        "reshape",
        "expand",
        "sigmoid",
        "tanh",
        "softmax",
        "log",
        "gather",
        "take",
        "select",
        "reduce_sum",
        "reduce_mean",
        "scale",
        "dropout",
    }
)


class ShapeError(ValueError):
    pass


class GatherRangeError(IndexError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class BackwardError(ValueError):
    pass


class NonDeterministicBuildError(RuntimeError):
    pass


@dataclass
class Node:
    id: int
    kind: str
    operands: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    name: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def _is_scalar(x: np.ndarray) -> bool:
    return x.size == 1 and x.ndim <= 1


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _unbroadcast_scalar(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum())


class Graph:
    """A single-use computation tape.

    Parameters are registered by name; their node values alias the arrays
    passed in, so build a fresh graph after every optimizer update.
    """

    def __init__(self, rng: np.random.Generator | None = None, checked: bool = True):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self.rng = rng
        self.checked = checked

    # -- leaves -----------------------------------------------------------
    def constant(self, value) -> Node:
        arr = np.asarray(value, dtype=np.float64)
        return self._append("constant", (), arr, {})

    def parameter(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        arr = np.asarray(value, dtype=np.float64)
        node = self._append("parameter", (), arr, {})
        node.name = name
        self.params[name] = node.id
        return node

    def parameters(self, values: Mapping[str, np.ndarray]) -> dict[str, Node]:
        return {name: self.parameter(name, arr) for name, arr in values.items()}

    # -- generic entry point ---------------------------------------------
    def apply(self, kind: str, operands: Sequence[Node], **attrs) -> Node:
        if kind not in OP_KINDS or kind in ("constant", "parameter"):
            raise ValueError(f"unknown op kind {kind!r}")
        for op in operands:
            if op.id >= len(self.nodes) or self.nodes[op.id] is not op:
                raise ValueError(f"operand node {op.id} does not belong to this graph")
        vals = [op.value for op in operands]
        value, saved = _FORWARD[kind](vals, attrs)
        attrs = {**attrs, **saved}
        return self._append(kind, tuple(op.id for op in operands), value, attrs)

    def _append(self, kind, operands, value, attrs) -> Node:
        if self.checked and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {kind} (node {len(self.nodes)})")
        node = Node(len(self.nodes), kind, operands, value, attrs)
        self.nodes.append(node)
        return node

    # -- convenience wrappers --------------------------------------------
    def matmul(self, a, b):
        return self.apply("matmul", [a, b])

    def add(self, a, b):
        return self.apply("add", [a, b])

    def add_bias(self, x, b):
        return self.apply("add_bias", [x, b])

    def mul(self, a, b):
        return self.apply("mul", [a, b])

    def concat(self, xs, axis: int = -1):
        return self.apply("concat", list(xs), axis=axis)

    def stack(self, xs, axis: int = -1):
        return self.apply("stack", list(xs), axis=axis)

    def reshape(self, x, shape):
        return self.apply("reshape", [x], shape=tuple(shape))

    def expand(self, x, axis: int, size: int):
        return self.apply("expand", [x], axis=axis, size=size)

    def sigmoid(self, x):
        return self.apply("sigmoid", [x])

    def tanh(self, x):
        return self.apply("tanh", [x])

    def softmax(self, x):
        return self.apply("softmax", [x])

    def log(self, x, clip: tuple[float, float] | None = None):
        return self.apply("log", [x], clip=clip)

    def gather(self, table, index, padding_idx: int | None = None):
        return self.apply("gather", [table], index=np.asarray(index), padding_idx=padding_idx)

    def take(self, x, flat_index):
        return self.apply("take", [x], index=np.asarray(flat_index, dtype=np.intp))

    def select(self, cond, a, b):
        return self.apply("select", [a, b], cond=np.asarray(cond, dtype=bool))

    def reduce_sum(self, x, axis=None):
        return self.apply("reduce_sum", [x], axis=axis)

    def reduce_mean(self, x, axis=None):
        return self.apply("reduce_mean", [x], axis=axis)

    def scale(self, x, factor: float):
        return self.apply("scale", [x], factor=float(factor))

    def dropout(self, x, rate: float):
        """Inverted dropout with a mask drawn from the graph's seeded source."""
        if rate <= 0.0:
            return x
        if self.rng is None:
            raise ValueError("dropout needs a graph constructed with an rng")
        keep = 1.0 - rate
        mask = (self.rng.random(x.shape) < keep).astype(np.float64) / keep
        return self.apply("dropout", [x], mask=mask)

    def linear(self, x, w, b):
        return self.add_bias(self.matmul(x, w), b)

    def __getitem__(self, node_id: int) -> Node:
        return self.nodes[node_id]


# ---------------------------------------------------------------------------
# forward rules: (values, attrs) -> (value, saved attrs)


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim == 0 or b.ndim not in (2, 3):
        raise ShapeError(f"matmul needs a>=1-D and 2-D/3-D b, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape[-1]} vs {b.shape[-2]}")
    if b.ndim == 3 and (a.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeError(f"batched matmul needs matching 3-D operands, got {a.shape} and {b.shape}")
    return a @ b, {}


def _fwd_add(vals, attrs):
    a, b = vals
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = a + b
    if a.shape != b.shape:
        out = out.reshape(b.shape if _is_scalar(a) else a.shape)
    return out, {}


def _fwd_add_bias(vals, attrs):
    x, b = vals
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"bias of shape {b.shape} does not match trailing dim of {x.shape}")
    return x + b, {}


def _fwd_mul(vals, attrs):
    a, b = vals
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = a * b
    if a.shape != b.shape:
        out = out.reshape(b.shape if _is_scalar(a) else a.shape)
    return out, {}


def _fwd_concat(vals, attrs):
    axis = attrs["axis"]
    lead = [tuple(np.delete(v.shape, axis)) for v in vals]
    if any(s != lead[0] for s in lead):
        raise ShapeError(f"concat leading dims differ: {[v.shape for v in vals]}")
    return np.concatenate(vals, axis=axis), {"sizes": [v.shape[axis] for v in vals]}


def _fwd_stack(vals, attrs):
    if any(v.shape != vals[0].shape for v in vals):
        raise ShapeError(f"stack shapes differ: {[v.shape for v in vals]}")
    return np.stack(vals, axis=attrs["axis"]), {}


def _fwd_reshape(vals, attrs):
    (x,) = vals
    shape = attrs["shape"]
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape), {}


def _fwd_expand(vals, attrs):
    (x,) = vals
    out = np.expand_dims(x, attrs["axis"])
    reps = [1] * out.ndim
    reps[attrs["axis"]] = attrs["size"]
    return np.tile(out, reps), {}


def _fwd_log(vals, attrs):
    (x,) = vals
    clip = attrs.get("clip")
    if clip is not None:
        x = np.clip(x, *clip)
    elif np.any(x <= 0):
        raise FloatingPointError("log of non-positive value")
    return np.log(x), {}


def _fwd_gather(vals, attrs):
    (table,) = vals
    idx = attrs["index"]
    if table.ndim != 2:
        raise ShapeError(f"gather table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        bad = int(idx.max()) if idx.max() >= table.shape[0] else int(idx.min())
        raise GatherRangeError(f"gather index {bad} outside table of {table.shape[0]} rows")
    out = table[idx]
    pad = attrs.get("padding_idx")
    if pad is not None:
        out[idx == pad] = 0.0
    return out, {}


def _fwd_take(vals, attrs):
    (x,) = vals
    idx = attrs["index"]
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise GatherRangeError(f"take index outside array of size {x.size}")
    return x.reshape(-1)[idx], {}


def _fwd_select(vals, attrs):
    a, b = vals
    if a.shape != b.shape:
        raise ShapeError(f"select branch shapes differ: {a.shape} vs {b.shape}")
    cond = attrs["cond"]
    cond = cond.reshape(cond.shape + (1,) * (a.ndim - cond.ndim))
    cond = np.broadcast_to(cond, a.shape)
    return np.where(cond, a, b), {"cond": cond}


def _fwd_reduce(fn):
    def fwd(vals, attrs):
        (x,) = vals
        return np.asarray(fn(x, axis=attrs.get("axis"))), {}

    return fwd


def _fwd_dropout(vals, attrs):
    (x,) = vals
    if attrs["mask"].shape != x.shape:
        raise ShapeError("dropout mask shape mismatch")
    return x * attrs["mask"], {}


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "add_bias": _fwd_add_bias,
    "mul": _fwd_mul,
    "concat": _fwd_concat,
    "stack": _fwd_stack,
    "reshape": _fwd_reshape,
    "expand": _fwd_expand,
    "sigmoid": lambda v, a: (_sigmoid(v[0]), {}),
    "tanh": lambda v, a: (np.tanh(v[0]), {}),
    "softmax": lambda v, a: (_softmax(v[0]), {}),
    "log": _fwd_log,
    "gather": _fwd_gather,
    "take": _fwd_take,
    "select": _fwd_select,
    "reduce_sum": _fwd_reduce(np.sum),
    "reduce_mean": _fwd_reduce(np.mean),
    "scale": lambda v, a: (v[0] * a["factor"], {}),
    "dropout": _fwd_dropout,
}


# ---------------------------------------------------------------------------
# vector-Jacobian products: (grad_out, node, operand values) -> operand grads


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _vjp_matmul(g, node, vals):
    a, b = vals
    if b.ndim == 3:
        return [g @ _swap(b), _swap(a) @ g]
    if a.ndim == 1:
        return [g @ b.T, np.outer(a, g)]
    k, m = b.shape
    return [g @ b.T, a.reshape(-1, k).T @ g.reshape(-1, m)]


def _vjp_add(g, node, vals):
    return [_unbroadcast_scalar(g, v.shape) for v in vals]


def _vjp_add_bias(g, node, vals):
    return [g, g.reshape(-1, g.shape[-1]).sum(axis=0)]


def _vjp_mul(g, node, vals):
    a, b = vals
    return [_unbroadcast_scalar(g * b, a.shape), _unbroadcast_scalar(g * a, b.shape)]


def _vjp_concat(g, node, vals):
    splits = np.cumsum(node.attrs["sizes"])[:-1]
    return np.split(g, splits, axis=node.attrs["axis"])


def _vjp_stack(g, node, vals):
    axis = node.attrs["axis"]
    return [np.take(g, i, axis=axis) for i in range(len(vals))]


def _vjp_expand(g, node, vals):
    return [g.sum(axis=node.attrs["axis"])]


def _vjp_log(g, node, vals):
    (x,) = vals
    clip = node.attrs.get("clip")
    if clip is None:
        return [g / x]
    inside = (x >= clip[0]) & (x <= clip[1])
    return [np.where(inside, g / np.clip(x, *clip), 0.0)]


def _vjp_softmax(g, node, vals):
    s = node.value
    return [s * (g - (g * s).sum(axis=-1, keepdims=True))]


def _vjp_gather(g, node, vals):
    (table,) = vals
    idx = node.attrs["index"]
    out = np.zeros_like(table)
    np.add.at(out, idx.reshape(-1), g.reshape(-1, table.shape[1]))
    pad = node.attrs.get("padding_idx")
    if pad is not None:
        out[pad] = 0.0
    return [out]


def _vjp_take(g, node, vals):
    (x,) = vals
    out = np.zeros(x.size)
    np.add.at(out, node.attrs["index"], g)
    return [out.reshape(x.shape)]


def _vjp_select(g, node, vals):
    cond = node.attrs["cond"]
    return [np.where(cond, g, 0.0), np.where(cond, 0.0, g)]


def _vjp_reduce_sum(g, node, vals):
    (x,) = vals
    axis = node.attrs.get("axis")
    if axis is None:
        return [np.full(x.shape, float(g))]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape).copy()]


def _vjp_reduce_mean(g, node, vals):
    (x,) = vals
    axis = node.attrs.get("axis")
    n = x.size if axis is None else x.shape[axis]
    (gs,) = _vjp_reduce_sum(g, node, vals)
    return [gs / n]


_VJP: dict[str, Callable] = {
    "matmul": _vjp_matmul,
    "add": _vjp_add,
    "add_bias": _vjp_add_bias,
    "mul": _vjp_mul,
    "concat": _vjp_concat,
    "stack": _vjp_stack,
    "reshape": lambda g, n, v: [g.reshape(v[0].shape)],
    "expand": _vjp_expand,
    "sigmoid": lambda g, n, v: [g * n.value * (1.0 - n.value)],
    "tanh": lambda g, n, v: [g * (1.0 - n.value**2)],
    "softmax": _vjp_softmax,
    "log": _vjp_log,
    "gather": _vjp_gather,
    "take": _vjp_take,
    "select": _vjp_select,
    "reduce_sum": _vjp_reduce_sum,
    "reduce_mean": _vjp_reduce_mean,
    "scale": lambda g, n, v: [g * n.attrs["factor"]],
    "dropout": lambda g, n, v: [g * n.attrs["mask"]],
}


def backward(graph: Graph, root: Node) -> dict[str, np.ndarray]:
    """Gradient of a scalar ``root`` with respect to every registered parameter."""
    if root.id >= len(graph.nodes) or graph.nodes[root.id] is not root:
        raise BackwardError("root is not a node of this graph")
    if root.value.size != 1 or root.value.ndim > 1:
        raise BackwardError(f"backward needs a scalar root, got shape {root.value.shape}")

    grads: list[np.ndarray | None] = [None] * len(graph.nodes)
    grads[root.id] = np.ones_like(root.value)
    for node in reversed(graph.nodes[: root.id + 1]):
        g = grads[node.id]
        if g is None or not node.operands:
            continue
        vals = [graph.nodes[i].value for i in node.operands]
        for op_id, og in zip(node.operands, _VJP[node.kind](g, node, vals)):
            kind = graph.nodes[op_id].kind
            if kind == "constant":
                continue
            og = np.asarray(og, dtype=np.float64).reshape(graph.nodes[op_id].value.shape)
            if grads[op_id] is None:
                grads[op_id] = og.copy()
            else:
                grads[op_id] += og
    out = {}
    for name, nid in graph.params.items():
        g = grads[nid]
        out[name] = np.zeros_like(graph.nodes[nid].value) if g is None else g
    return out


def seeded_init(shape: Sequence[int], bound: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform samples in ``[-bound, bound]``."""
    shape = tuple(int(s) for s in shape)
    if bound <= 0:
        raise ValueError("bound must be positive")
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"zero-sized shape {shape}")
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    n_checked: int


def grad_check(
    build: Callable[[Graph, dict[str, Node]], Node],
    point: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate-wise.

    ``build`` receives a fresh graph plus the registered parameter nodes and
    must return a scalar root. It is evaluated on copies of ``point``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in point.items()}

    def evaluate(values):
        g = Graph()
        return g, build(g, g.parameters(values))

    g, root = evaluate(base)
    _, root2 = evaluate(base)
    if root.value.tobytes() != root2.value.tobytes():
        raise NonDeterministicBuildError("two forward evaluations at the same point disagree")
    analytic = backward(g, root)

    worst_err, worst, count = 0.0, None, 0
    for name in names or list(base):
        arr = base[name]
        for coord in np.ndindex(arr.shape):
            orig = arr[coord]
            arr[coord] = orig + epsilon
            fp = float(evaluate(base)[1].value)
            arr[coord] = orig - epsilon
            fm = float(evaluate(base)[1].value)
            arr[coord] = orig
            num = (fp - fm) / (2 * epsilon)
            ana = float(analytic[name][coord])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            count += 1
            if worst is None or err > worst_err:
                worst_err, worst = err, (name, coord)
    return GradCheckReport(worst_err, worst, count)
