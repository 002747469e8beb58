"""Taped reverse-mode automatic differentiation over dense float64 arrays.

Every operation is evaluated eagerly when it is recorded, and its output is
cached on the tape. ``Graph.backward`` walks the tape in reverse and
accumulates gradients into one slot per node.

Broadcasting is deliberately absent: binary elementwise kinds require equal
shapes, and the only mixed-shape product is ``scale`` (constant scalar times
tensor). A bias row is broadcast across a batch with an explicit ``matmul``
against a ones row instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

import numpy as np

NORM_EPS = 1e-12

Tensor = np.ndarray

KINDS = frozenset(
    {
        "leaf",
        "matmul",
        "add",
        "subtract",
        "hadamard",
        "concat",
        "slice",
        "sigmoid",
        "tanh",
        "relu",
        "scale",
        "sum",
        "smoothed_l2_norm",
    }
)


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an operation kind."""


def as_tensor(value) -> Tensor:
    """Return a read-only, C-contiguous float64 copy of ``value``."""
    arr = np.array(value, dtype=np.float64, order="C", copy=True)
    arr.flags.writeable = False
    return arr


def _freeze(arr: np.ndarray) -> Tensor:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    arr = np.asarray(arr, dtype=np.float64)
    if not arr.flags.c_contiguous or not arr.flags.writeable:
        arr = np.array(arr, order="C")
    arr.flags.writeable = False
    return arr


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    output: Tensor
    attrs: dict = field(default_factory=dict)


class Graph:
    """Append-only tape of eagerly evaluated operations.

    A graph is owned by one forward/backward pass and is not thread-safe.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.grads: list[Tensor | None] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def value(self, node_id: int) -> Tensor:
        return self.nodes[node_id].output

    def shape(self, node_id: int) -> tuple[int, ...]:
        return self.nodes[node_id].output.shape

    # ------------------------------------------------------------------
    # recording

    def leaf(self, value) -> int:
        """Append an input node holding ``value``."""
        return self._append("leaf", (), as_tensor(value), {})

    def record(self, kind: str, inputs, **attrs) -> int:
        """Evaluate ``kind`` on the outputs of ``inputs`` and append the result.

        Parameters
        ----------
        kind : str
            One of the supported operation kinds (see ``KINDS``).
        inputs : sequence of int
            Ids of earlier nodes.
        **attrs
            ``axis`` for concat, ``key`` for slice, ``factor`` for scale.

        Returns
        -------
        int
            Id of the appended node.
        """
        if kind not in KINDS or kind == "leaf":
            raise ValueError(f"unsupported operation kind {kind!r}")
        inputs = tuple(int(i) for i in inputs)
        n = len(self.nodes)
        for i in inputs:
            if not 0 <= i < n:
                raise ValueError(f"{kind}: input node {i} does not exist")
        vals = [self.nodes[i].output for i in inputs]
        out = _FORWARD[kind](vals, attrs)
        return self._append(kind, inputs, _freeze(out), attrs)

    def _append(self, kind, inputs, out, attrs) -> int:
        self.nodes.append(Node(kind, inputs, out, attrs))
        self.grads.append(None)
        return len(self.nodes) - 1

    # convenience wrappers -------------------------------------------------

    def matmul(self, a: int, b: int) -> int:
        return self.record("matmul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self.record("add", (a, b))

    def subtract(self, a: int, b: int) -> int:
        return self.record("subtract", (a, b))

    def hadamard(self, a: int, b: int) -> int:
        return self.record("hadamard", (a, b))

    def concat(self, inputs, axis: int = 0) -> int:
        return self.record("concat", inputs, axis=axis)

    def slice(self, a: int, key) -> int:
        return self.record("slice", (a,), key=key)

    def sigmoid(self, a: int) -> int:
        return self.record("sigmoid", (a,))

    def tanh(self, a: int) -> int:
        return self.record("tanh", (a,))

    def relu(self, a: int) -> int:
        return self.record("relu", (a,))

    def scale(self, a: int, factor: float) -> int:
        return self.record("scale", (a,), factor=float(factor))

    def sum(self, a: int) -> int:
        return self.record("sum", (a,))

    def smoothed_l2_norm(self, a: int) -> int:
        return self.record("smoothed_l2_norm", (a,))

    # ------------------------------------------------------------------
    # reverse pass

    def backward(self, root: int) -> dict[int, Tensor]:
        """Accumulate d(root)/d(node) for every node reachable from ``root``.

        Returns
        -------
        dict
            Gradient per reachable node id, each shaped like that node's output.
        """
        out = self.nodes[root].output
        if out.size != 1 or out.ndim > 1:
            raise ShapeError(f"backward: root must be scalar, got shape {out.shape}")

        reachable = np.zeros(root + 1, dtype=bool)
        reachable[root] = True
        for i in range(root, -1, -1):
            if reachable[i]:
                for j in self.nodes[i].inputs:
                    reachable[j] = True

        acc: list[np.ndarray | None] = [None] * (root + 1)
        acc[root] = np.ones_like(out)
        for i in range(root, -1, -1):
            if not reachable[i]:
                continue
            node = self.nodes[i]
            g = acc[i]
            if g is None:
                g = np.zeros_like(node.output)
                acc[i] = g
            if not node.inputs:
                continue
            vals = [self.nodes[j].output for j in node.inputs]
            parts = _BACKWARD[node.kind](g, vals, node.output, node.attrs)
            for j, gj in zip(node.inputs, parts):
                if acc[j] is None:
                    acc[j] = np.array(gj, dtype=np.float64)
                else:
                    acc[j] = acc[j] + gj

        grads: dict[int, Tensor] = {}
        for i in range(root + 1):
            if reachable[i]:
                t = _freeze(acc[i])
                grads[i] = t
                self.grads[i] = t
        return grads


# ----------------------------------------------------------------------
# forward rules


def _check_same(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _fwd_matmul(vals, attrs):
    a, b = vals
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return np.matmul(a, b)


def _fwd_binary(kind, fn):
    def rule(vals, attrs):
        a, b = vals
        _check_same(kind, a, b)
        return fn(a, b)

    return rule


def _fwd_concat(vals, attrs):
    axis = attrs.get("axis", 0)
    if not vals:
        raise ShapeError("concat: no inputs")
    nd = vals[0].ndim
    if nd == 0:
        raise ShapeError("concat: cannot concatenate scalars")
    ax = axis % nd
    for v in vals:
        other = [s for k, s in enumerate(v.shape) if k != ax]
        ref = [s for k, s in enumerate(vals[0].shape) if k != ax]
        if v.ndim != nd or other != ref:
            raise ShapeError(
                f"concat(axis={axis}): incompatible shapes {[x.shape for x in vals]}"
            )
    attrs["axis"] = ax
    attrs["sizes"] = [v.shape[ax] for v in vals]
    return np.concatenate(vals, axis=ax)


def _fwd_slice(vals, attrs):
    (a,) = vals
    try:
        return np.array(a[attrs["key"]], dtype=np.float64)
    except IndexError as exc:
        raise ShapeError(f"slice: key {attrs['key']!r} invalid for shape {a.shape}") from exc


def _fwd_scale(vals, attrs):
    return vals[0] * attrs["factor"]


def _fwd_sum(vals, attrs):
    return np.array(vals[0].sum())


def _fwd_norm(vals, attrs):
    return np.array(np.sqrt(np.sum(vals[0] * vals[0])))


_FORWARD: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_binary("add", np.add),
    "subtract": _fwd_binary("subtract", np.subtract),
    "hadamard": _fwd_binary("hadamard", np.multiply),
    "concat": _fwd_concat,
    "slice": _fwd_slice,
    "sigmoid": lambda vals, attrs: _sigmoid(vals[0]),
    "tanh": lambda vals, attrs: np.tanh(vals[0]),
    "relu": lambda vals, attrs: np.maximum(vals[0], 0.0),
    "scale": _fwd_scale,
    "sum": _fwd_sum,
    "smoothed_l2_norm": _fwd_norm,
}


# ----------------------------------------------------------------------
# backward rules: (upstream grad, input values, output, attrs) -> input grads


def _bwd_matmul(g, vals, out, attrs):
    a, b = vals
    if a.ndim == 2 and b.ndim == 2:
        return g @ b.T, a.T @ g
    if a.ndim == 2:
        return np.outer(g, b), a.T @ g
    if b.ndim == 2:
        return b @ g, np.outer(a, g)
    return g * b, g * a


def _bwd_concat(g, vals, out, attrs):
    ax = attrs["axis"]
    splits = np.cumsum(attrs["sizes"])[:-1]
    return np.split(g, splits, axis=ax)


def _bwd_slice(g, vals, out, attrs):
    full = np.zeros_like(vals[0])
    full[attrs["key"]] = g
    return (full,)


def _bwd_norm(g, vals, out, attrs):
    n = float(out)
    if n < NORM_EPS:
        return (np.zeros_like(vals[0]),)
    return (g * vals[0] / n,)


_BACKWARD: dict[str, Callable] = {
    "matmul": _bwd_matmul,
    "add": lambda g, vals, out, attrs: (g, g),
    "subtract": lambda g, vals, out, attrs: (g, -g),
    "hadamard": lambda g, vals, out, attrs: (g * vals[1], g * vals[0]),
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "sigmoid": lambda g, vals, out, attrs: (g * out * (1.0 - out),),
    "tanh": lambda g, vals, out, attrs: (g * (1.0 - out * out),),
    "relu": lambda g, vals, out, attrs: (g * (vals[0] > 0.0),),
    "scale": lambda g, vals, out, attrs: (g * attrs["factor"],),
    "sum": lambda g, vals, out, attrs: (np.full_like(vals[0], float(g)),),
    "smoothed_l2_norm": _bwd_norm,
}


# ----------------------------------------------------------------------
# finite-difference oracle

ArrayOrDict = Union[np.ndarray, Mapping[str, np.ndarray]]


def _bind(graph: Graph, x: ArrayOrDict):
    if isinstance(x, Mapping):
        return {k: graph.leaf(v) for k, v in x.items()}
    return graph.leaf(x)


def _eval(f, x) -> float:
    g = Graph()
    return float(g.value(f(g, _bind(g, x))))


def finite_diff_check(f: Callable, x: ArrayOrDict, h: float = 1e-5) -> float:
    """Compare the taped gradient of ``f`` with central differences.

    Parameters
    ----------
    f : callable
        ``f(graph, node)`` records a scalar function of its input and returns
        the root node id. When ``x`` is a mapping, ``node`` is a mapping of
        node ids with the same keys.
    x : ndarray or mapping of ndarrays
        Point of evaluation.
    h : float
        Central-difference step.

    Returns
    -------
    float
        ``max_i |fd_i - g_i| / (|g_i| + 1e-8)`` over every coordinate.
    """
    items = dict(x) if isinstance(x, Mapping) else {None: x}
    items = {k: np.array(v, dtype=np.float64) for k, v in items.items()}

    def pack(d):
        return d if isinstance(x, Mapping) else d[None]

    graph = Graph()
    nodes = {k: graph.leaf(v) for k, v in items.items()}
    root = f(graph, pack(nodes))
    grads = graph.backward(root)

    worst = 0.0
    for k, base in items.items():
        ga = grads.get(nodes[k], np.zeros_like(base))
        flat = base.reshape(-1)
        for i in range(flat.size):
            plus = {kk: vv.copy() for kk, vv in items.items()}
            minus = {kk: vv.copy() for kk, vv in items.items()}
            plus[k].reshape(-1)[i] += h
            minus[k].reshape(-1)[i] -= h
            fd = (_eval(f, pack(plus)) - _eval(f, pack(minus))) / (2.0 * h)
            gi = float(ga.reshape(-1)[i])
            worst = max(worst, abs(fd - gi) / (abs(gi) + 1e-8))
    return worst
