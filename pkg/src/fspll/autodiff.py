"""Minimal reverse-mode automatic differentiation over dense 2-D float64 arrays.

A :class:`Graph` owns an ordered list of nodes. Nodes are created through the
graph's op methods and evaluated eagerly, so construction order is already a
topological order; ``backward`` walks it in reverse. Leaf values may be
rebound (``Tensor.set_values``) and the whole graph re-evaluated with
``forward`` -- that is what finite-difference checking relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT_EPS = 1e-12  # arguments below this get sqrt(x + SQRT_EPS); keeps gradients finite


class Tensor:
    """One node of a computation graph: a 2-D float64 value with a gradient slot."""

    __slots__ = ("graph", "node_id", "op", "parents", "values", "grad", "cache")

    def __init__(self, graph: "Graph", node_id: int, op: str | None,
                 parents: tuple[int, ...], values: np.ndarray):
        self.graph = graph
        self.node_id = node_id
        self.op = op
        self.parents = parents
        self.values = values
        self.grad = np.zeros_like(values)
        self.cache: dict = {}

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def is_leaf(self) -> bool:
        return self.op is None

    def set_values(self, values) -> None:
        """Rebind a leaf's values. The graph needs a forward() pass afterwards."""
        if not self.is_leaf():
            raise ValueError("set_values is only allowed on leaf tensors")
        arr = _as_matrix(values)
        if arr.shape != self.values.shape:
            raise ValueError(
                f"set_values: shape {arr.shape} does not match leaf shape {self.values.shape}")
        self.values = arr
        self.grad = np.zeros_like(arr)
        self.graph._stale = True

    def __repr__(self):
        return f"Tensor(id={self.node_id}, op={self.op!r}, shape={self.shape})"


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"only 2-D tensors are supported, got ndim={arr.ndim}")
    return arr.copy()


class Graph:
    """Computation graph. Single-writer: forward/backward must not run concurrently."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._stale = False  # True after a leaf rebind, until forward() runs

    # -- construction -----------------------------------------------------

    def _new(self, op: str | None, parents: tuple[Tensor, ...], values: np.ndarray) -> Tensor:
        node = Tensor(self, len(self.nodes), op, tuple(p.node_id for p in parents), values)
        self.nodes.append(node)
        return node

    def leaf(self, values) -> Tensor:
        """Create an input node holding the given values."""
        return self._new(None, (), _as_matrix(values))

    def _parent_values(self, node: Tensor) -> list[np.ndarray]:
        return [self.nodes[i].values for i in node.parents]

    def _check_same_shape(self, op, a: Tensor, b: Tensor):
        if a.shape != b.shape:
            raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("add", a, b)
        return self._new("add", (a, b), a.values + b.values)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("sub", a, b)
        return self._new("sub", (a, b), a.values - b.values)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("mul", a, b)
        return self._new("mul", (a, b), a.values * b.values)

    def scale(self, x: Tensor, c: float) -> Tensor:
        node = self._new("scale", (x,), float(c) * x.values)
        node.cache["c"] = float(c)
        return node

    def add_scalar(self, x: Tensor, c: float) -> Tensor:
        node = self._new("add_scalar", (x,), x.values + float(c))
        node.cache["c"] = float(c)
        return node

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
        return self._new("matmul", (a, b), a.values @ b.values)

    def add_bias(self, x: Tensor, bias: Tensor) -> Tensor:
        """x + bias, with bias a column vector broadcast across x's columns."""
        if bias.shape != (x.shape[0], 1):
            raise ValueError(f"add_bias: shape mismatch {x.shape} vs {bias.shape}")
        return self._new("add_bias", (x, bias), x.values + bias.values)

    def sub_row(self, x: Tensor, row: Tensor) -> Tensor:
        """x - row, with row a 1-row vector broadcast down x's rows."""
        if row.shape != (1, x.shape[1]):
            raise ValueError(f"sub_row: shape mismatch {x.shape} vs {row.shape}")
        return self._new("sub_row", (x, row), x.values - row.values)

    def relu(self, x: Tensor) -> Tensor:
        return self._new("relu", (x,), np.maximum(x.values, 0.0))

    def exp(self, x: Tensor) -> Tensor:
        return self._new("exp", (x,), np.exp(x.values))

    def log(self, x: Tensor) -> Tensor:
        return self._new("log", (x,), np.log(x.values))

    def sqrt(self, x: Tensor) -> Tensor:
        """Elementwise square root; arguments below SQRT_EPS are shifted by it."""
        return self._new("sqrt", (x,), sqrt_eps(x.values))

    def pairwise_sqdist(self, a: Tensor, b: Tensor) -> Tensor:
        """Squared Euclidean distances between columns of a (m,p) and b (m,q) -> (p,q)."""
        if a.shape[0] != b.shape[0]:
            raise ValueError(f"pairwise_sqdist: shape mismatch {a.shape} vs {b.shape}")
        return self._new("pairwise_sqdist", (a, b), sqdist(a.values, b.values))

    def row_sum(self, x: Tensor) -> Tensor:
        return self._new("row_sum", (x,), x.values.sum(axis=1, keepdims=True))

    def col_sum(self, x: Tensor) -> Tensor:
        return self._new("col_sum", (x,), x.values.sum(axis=0, keepdims=True))

    def sum_all(self, x: Tensor) -> Tensor:
        return self._new("sum_all", (x,), x.values.sum().reshape(1, 1))

    def logsumexp_cols(self, x: Tensor) -> Tensor:
        """Column-wise log-sum-exp, max-shifted: (r,c) -> (1,c)."""
        node = self._new("logsumexp_cols", (x,), lse_cols(x.values))
        node.cache["softmax"] = np.exp(x.values - node.values)
        return node

    def col_max(self, x: Tensor) -> Tensor:
        """Column-wise maximum (1,c); subgradient routed to the first argmax per column."""
        node = self._new("col_max", (x,), x.values.max(axis=0, keepdims=True))
        node.cache["argmax"] = x.values.argmax(axis=0)
        return node

    # -- evaluation --------------------------------------------------------

    def forward(self) -> None:
        """Recompute every non-leaf node, in order, from current leaf values."""
        for node in self.nodes:
            if not node.is_leaf():
                node.values = self._eval(node)
        self._stale = False
        self._ran_forward = True

    def _eval(self, node: Tensor) -> np.ndarray:
        op = node.op
        pv = self._parent_values(node)
        if op == "add":
            return pv[0] + pv[1]
        if op == "sub":
            return pv[0] - pv[1]
        if op == "mul":
            return pv[0] * pv[1]
        if op == "scale":
            return node.cache["c"] * pv[0]
        if op == "add_scalar":
            return pv[0] + node.cache["c"]
        if op == "matmul":
            return pv[0] @ pv[1]
        if op == "add_bias":
            return pv[0] + pv[1]
        if op == "sub_row":
            return pv[0] - pv[1]
        if op == "relu":
            return np.maximum(pv[0], 0.0)
        if op == "exp":
            return np.exp(pv[0])
        if op == "log":
            return np.log(pv[0])
        if op == "sqrt":
            return sqrt_eps(pv[0])
        if op == "pairwise_sqdist":
            return sqdist(pv[0], pv[1])
        if op == "row_sum":
            return pv[0].sum(axis=1, keepdims=True)
        if op == "col_sum":
            return pv[0].sum(axis=0, keepdims=True)
        if op == "sum_all":
            return pv[0].sum().reshape(1, 1)
        if op == "logsumexp_cols":
            out = lse_cols(pv[0])
            node.cache["softmax"] = np.exp(pv[0] - out)
            return out
        if op == "col_max":
            node.cache["argmax"] = pv[0].argmax(axis=0)
            return pv[0].max(axis=0, keepdims=True)
        raise ValueError(f"unknown op {op!r}")

    # -- differentiation ---------------------------------------------------

    def reset_grads(self) -> None:
        for node in self.nodes:
            node.grad = np.zeros_like(node.values)

    def backward(self, sink: Tensor) -> None:
        """Accumulate d(sink)/d(node) into every node's grad.

        Repeated calls without reset_grads accumulate. The sink must be 1x1
        and the graph must not be stale (forward after any leaf rebind).
        """
        if sink.graph is not self:
            raise ValueError("sink belongs to a different graph")
        if sink.shape != (1, 1):
            raise ValueError(f"backward requires a scalar (1x1) sink, got shape {sink.shape}")
        if self._stale:
            raise RuntimeError("graph has rebound leaves; run forward() before backward()")
        seed = {sink.node_id: np.ones((1, 1))}
        for node in reversed(self.nodes[: sink.node_id + 1]):
            g = seed.pop(node.node_id, None)
            if g is None:
                continue
            node.grad = node.grad + g
            if not node.is_leaf():
                for pid, pg in zip(node.parents, self._vjp(node, g)):
                    if pid in seed:
                        seed[pid] = seed[pid] + pg
                    else:
                        seed[pid] = pg

    def _vjp(self, node: Tensor, g: np.ndarray) -> list[np.ndarray]:
        op = node.op
        pv = self._parent_values(node)
        if op == "add":
            return [g, g]
        if op == "sub":
            return [g, -g]
        if op == "mul":
            return [g * pv[1], g * pv[0]]
        if op == "scale":
            return [node.cache["c"] * g]
        if op == "add_scalar":
            return [g]
        if op == "matmul":
            return [g @ pv[1].T, pv[0].T @ g]
        if op == "add_bias":
            return [g, g.sum(axis=1, keepdims=True)]
        if op == "sub_row":
            return [g, -g.sum(axis=0, keepdims=True)]
        if op == "relu":
            return [g * (pv[0] > 0.0)]  # subgradient 0 at the kink
        if op == "exp":
            return [g * node.values]
        if op == "log":
            return [g / pv[0]]
        if op == "sqrt":
            return [g * 0.5 / node.values]
        if op == "pairwise_sqdist":
            a, b = pv
            ga = 2.0 * (a * g.sum(axis=1)[None, :] - b @ g.T)
            gb = 2.0 * (b * g.sum(axis=0)[None, :] - a @ g)
            return [ga, gb]
        if op == "row_sum":
            return [np.broadcast_to(g, pv[0].shape).copy()]
        if op == "col_sum":
            return [np.broadcast_to(g, pv[0].shape).copy()]
        if op == "sum_all":
            return [np.full(pv[0].shape, g[0, 0])]
        if op == "logsumexp_cols":
            return [g * node.cache["softmax"]]
        if op == "col_max":
            gx = np.zeros_like(pv[0])
            gx[node.cache["argmax"], np.arange(pv[0].shape[1])] = g[0]
            return [gx]
        raise ValueError(f"unknown op {op!r}")

    # -- kink signature (finite-difference validity) ------------------------

    def _kink_signature(self) -> list[np.ndarray]:
        """Discrete state of every non-smooth node; a finite-difference step is
        only trusted when the signature is identical on both sides."""
        sig = []
        for node in self.nodes:
            if node.op == "relu":
                sig.append(self._parent_values(node)[0] > 0.0)
            elif node.op == "sqrt":
                sig.append(self._parent_values(node)[0] < SQRT_EPS)
            elif node.op == "col_max":
                sig.append(node.cache["argmax"].copy())
        return sig


def sqrt_eps(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.where(x < SQRT_EPS, x + SQRT_EPS, x))


def sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, :, None] - b[:, None, :]
    return np.einsum("mpq,mpq->pq", diff, diff)


def lse_cols(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=0, keepdims=True)
    return np.log(np.exp(x - m).sum(axis=0, keepdims=True)) + m


@dataclass
class GradCheckResult:
    """Outcome of a central finite-difference check on one leaf."""

    max_rel_error: float
    checked: int
    excluded: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_rel_error < tol


def grad_check(graph: Graph, sink: Tensor, leaf: Tensor,
               step: float = 1e-5) -> GradCheckResult:
    """Compare backward() gradients of `sink` w.r.t. `leaf` against central
    finite differences with the given step.

    Relative error per entry is |analytic - numeric| / max(1, |analytic|).
    Entries whose perturbation flips a relu/sqrt/argmax regime between the
    two one-sided evaluations are excluded (the difference quotient spans a
    kink there) and reported in the result.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if graph._stale:
        graph.forward()
    graph.reset_grads()
    graph.backward(sink)
    analytic = leaf.grad.copy()

    base = leaf.values.copy()
    rows, cols = base.shape
    max_err = 0.0
    excluded = 0
    for i in range(rows):
        for j in range(cols):
            pert = base.copy()
            pert[i, j] = base[i, j] + step
            leaf.set_values(pert)
            graph.forward()
            f_plus = sink.values[0, 0]
            sig_plus = graph._kink_signature()

            pert[i, j] = base[i, j] - step
            leaf.set_values(pert)
            graph.forward()
            f_minus = sink.values[0, 0]
            sig_minus = graph._kink_signature()

            if any(not np.array_equal(p, q) for p, q in zip(sig_plus, sig_minus)):
                excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[i, j] - numeric) / max(1.0, abs(analytic[i, j]))
            max_err = max(max_err, err)

    leaf.set_values(base)
    graph.forward()
    graph.reset_grads()
    return GradCheckResult(max_err, rows * cols - excluded, excluded)
