"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Record`` is a define-by-run tape: every operation appends one node and
``backward`` replays the tape in reverse to accumulate exact gradients.
Records are cheap and meant to be rebuilt for every forward/backward pass.
Tensors belong to exactly one record and must not be mixed across records.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable, Sequence

import numpy as np


class OpKind(Enum):
    LEAF = "leaf"
    CONSTANT = "constant"
    MATMUL = "matmul"
    ADD = "add"
    MUL = "mul"
    DIV = "div"
    RECIPROCAL = "reciprocal"
    SQUARE = "square"
    ABS = "abs"
    SUM = "sum"
    RELU = "relu"
    SOFTPLUS = "softplus"
    SIGMOID = "sigmoid"
    EXP = "exp"
    LOGSUMEXP = "logsumexp"
    SCALE = "scale"
    CONCAT = "concat"
    GATHER_ROWS = "gather_rows"


class Tensor:
    """Dense float64 array registered as one node of a Record."""

    __slots__ = ("values", "node_id", "record", "requires_grad", "grad")

    def __init__(self, values: np.ndarray, node_id: int, record: "Record",
                 requires_grad: bool):
        self.values = values
        self.node_id = node_id
        self.record = record
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"


class _Node:
    __slots__ = ("kind", "input_ids", "requires_grad", "saved")

    def __init__(self, kind: OpKind, input_ids: tuple[int, ...],
                 requires_grad: bool, saved: dict):
        self.kind = kind
        self.input_ids = input_ids
        self.requires_grad = requires_grad
        self.saved = saved


def _as_array(values) -> np.ndarray:
    # ascontiguousarray promotes 0-d to 1-d, so guard scalars.
    arr = np.asarray(values, dtype=np.float64)
    return np.ascontiguousarray(arr) if arr.ndim else arr


class Record:
    """Ordered log of executed operations plus the intermediates needed to
    differentiate them.  Nodes are appended at execution time, so the list is
    topologically ordered by construction."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tensors: list[Tensor] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def _register(self, kind: OpKind, values: np.ndarray,
                  input_ids: tuple[int, ...], requires_grad: bool,
                  saved: dict) -> Tensor:
        node_id = len(self._nodes)
        self._nodes.append(_Node(kind, input_ids, requires_grad, saved))
        t = Tensor(values, node_id, self, requires_grad)
        self._tensors.append(t)
        return t

    def leaf(self, values, requires_grad: bool = True) -> Tensor:
        """Register an input array (a parameter when requires_grad)."""
        kind = OpKind.LEAF if requires_grad else OpKind.CONSTANT
        return self._register(kind, _as_array(values), (), requires_grad, {})

    def constant(self, values) -> Tensor:
        """Register data that never receives a gradient."""
        return self.leaf(values, requires_grad=False)


def _fail(kind: OpKind, message: str):
    raise ValueError(f"{kind.value}: {message}")


def _check_record(kind: OpKind, inputs: Sequence[Tensor]) -> Record:
    if not inputs:
        _fail(kind, "no inputs")
    rec = inputs[0].record
    for t in inputs:
        if t.record is not rec:
            _fail(kind, "inputs belong to different records")
    return rec


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _stable_softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def apply(kind: OpKind, inputs: Sequence[Tensor], *, axis: int | None = None,
          factor: float | None = None, indices: np.ndarray | None = None) -> Tensor:
    """Execute one operation, register it, and return the output tensor.

    Forward values follow the mathematical definition of ``kind`` in double
    precision.  Shape problems raise ValueError naming the operation.
    """
    rec = _check_record(kind, inputs)
    requires_grad = any(t.requires_grad for t in inputs)
    saved: dict = {}

    if kind is OpKind.MATMUL:
        a, b = _expect(kind, inputs, 2)
        if a.values.ndim != 2 or b.values.ndim != 2:
            _fail(kind, f"expects 2-d operands, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            _fail(kind, f"incompatible shapes {a.shape} and {b.shape}")
        out = a.values @ b.values
        saved = {"a": a.values, "b": b.values}
    elif kind is OpKind.ADD:
        a, b = _expect(kind, inputs, 2)
        if a.shape == b.shape:
            broadcast = False
        elif a.values.ndim == 2 and b.values.ndim == 1 and a.shape[1] == b.shape[0]:
            broadcast = True
        else:
            _fail(kind, f"incompatible shapes {a.shape} and {b.shape}")
        out = a.values + b.values
        saved = {"broadcast": broadcast}
    elif kind is OpKind.MUL:
        a, b = _expect(kind, inputs, 2)
        if a.shape != b.shape:
            _fail(kind, f"shape mismatch {a.shape} vs {b.shape}")
        out = a.values * b.values
        saved = {"a": a.values, "b": b.values}
    elif kind is OpKind.DIV:
        a, b = _expect(kind, inputs, 2)
        if a.shape != b.shape:
            _fail(kind, f"shape mismatch {a.shape} vs {b.shape}")
        if np.any(b.values == 0.0):
            _fail(kind, "zero element in denominator")
        out = a.values / b.values
        saved = {"a": a.values, "b": b.values}
    elif kind is OpKind.RECIPROCAL:
        (a,) = _expect(kind, inputs, 1)
        if np.any(a.values == 0.0):
            _fail(kind, "zero element")
        out = 1.0 / a.values
        saved = {"y": out}
    elif kind is OpKind.SQUARE:
        (a,) = _expect(kind, inputs, 1)
        out = a.values * a.values
        saved = {"x": a.values}
    elif kind is OpKind.ABS:
        (a,) = _expect(kind, inputs, 1)
        out = np.abs(a.values)
        saved = {"x": a.values}
    elif kind is OpKind.SUM:
        (a,) = _expect(kind, inputs, 1)
        if axis is not None and not (0 <= axis < a.values.ndim):
            _fail(kind, f"axis {axis} out of range for shape {a.shape}")
        out = np.sum(a.values, axis=axis)
        saved = {"shape": a.shape, "axis": axis}
    elif kind is OpKind.RELU:
        (a,) = _expect(kind, inputs, 1)
        out = np.maximum(a.values, 0.0)
        saved = {"x": a.values}
    elif kind is OpKind.SOFTPLUS:
        (a,) = _expect(kind, inputs, 1)
        out = _stable_softplus(a.values)
        saved = {"x": a.values}
    elif kind is OpKind.SIGMOID:
        (a,) = _expect(kind, inputs, 1)
        out = _stable_sigmoid(a.values)
        saved = {"y": out}
    elif kind is OpKind.EXP:
        (a,) = _expect(kind, inputs, 1)
        out = np.exp(a.values)
        saved = {"y": out}
    elif kind is OpKind.LOGSUMEXP:
        (a,) = _expect(kind, inputs, 1)
        if a.values.ndim not in (1, 2):
            _fail(kind, f"expects 1-d or 2-d input, got {a.shape}")
        x = a.values
        mx = np.max(x, axis=-1, keepdims=True)
        out = np.squeeze(mx, axis=-1) + np.log(np.sum(np.exp(x - mx), axis=-1))
        saved = {"x": x, "lse": out}
    elif kind is OpKind.SCALE:
        (a,) = _expect(kind, inputs, 1)
        if factor is None:
            _fail(kind, "missing scale factor")
        out = a.values * float(factor)
        saved = {"factor": float(factor)}
    elif kind is OpKind.CONCAT:
        if len(inputs) < 1:
            _fail(kind, "needs at least one input")
        rows = inputs[0].values.shape[:-1]
        for t in inputs:
            if t.values.ndim != inputs[0].values.ndim or t.values.shape[:-1] != rows:
                _fail(kind, f"row shapes differ: {[t.shape for t in inputs]}")
        out = np.concatenate([t.values for t in inputs], axis=-1)
        saved = {"widths": [t.shape[-1] for t in inputs]}
    elif kind is OpKind.GATHER_ROWS:
        (a,) = _expect(kind, inputs, 1)
        if indices is None:
            _fail(kind, "missing row indices")
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            _fail(kind, f"indices must be 1-d, got shape {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            _fail(kind, f"index out of range for {a.shape[0]} rows")
        out = a.values[idx]
        saved = {"indices": idx, "shape": a.shape}
    else:
        _fail(kind, "not an executable operation")

    return rec._register(kind, _as_array(out), tuple(t.node_id for t in inputs),
                         requires_grad, saved)


def _expect(kind: OpKind, inputs: Sequence[Tensor], n: int):
    if len(inputs) != n:
        _fail(kind, f"expects {n} input(s), got {len(inputs)}")
    return inputs


def _backward_node(node: _Node, inputs: list[Tensor], g: np.ndarray) -> list[np.ndarray | None]:
    """Gradient of one node w.r.t. each input (None where not required)."""
    kind = node.kind
    s = node.saved
    need = [t.requires_grad for t in inputs]
    grads: list[np.ndarray | None] = [None] * len(inputs)

    if kind is OpKind.MATMUL:
        if need[0]:
            grads[0] = g @ s["b"].T
        if need[1]:
            grads[1] = s["a"].T @ g
    elif kind is OpKind.ADD:
        if need[0]:
            grads[0] = g
        if need[1]:
            grads[1] = g.sum(axis=0) if s["broadcast"] else g
    elif kind is OpKind.MUL:
        if need[0]:
            grads[0] = g * s["b"]
        if need[1]:
            grads[1] = g * s["a"]
    elif kind is OpKind.DIV:
        if need[0]:
            grads[0] = g / s["b"]
        if need[1]:
            grads[1] = -g * s["a"] / (s["b"] * s["b"])
    elif kind is OpKind.RECIPROCAL:
        if need[0]:
            grads[0] = -g * s["y"] * s["y"]
    elif kind is OpKind.SQUARE:
        if need[0]:
            grads[0] = 2.0 * g * s["x"]
    elif kind is OpKind.ABS:
        if need[0]:
            grads[0] = g * np.sign(s["x"])
    elif kind is OpKind.SUM:
        if need[0]:
            if s["axis"] is None:
                grads[0] = np.broadcast_to(g, s["shape"]).copy()
            else:
                grads[0] = np.broadcast_to(np.expand_dims(g, s["axis"]), s["shape"]).copy()
    elif kind is OpKind.RELU:
        if need[0]:
            grads[0] = g * (s["x"] > 0.0)
    elif kind is OpKind.SOFTPLUS:
        if need[0]:
            grads[0] = g * _stable_sigmoid(s["x"])
    elif kind is OpKind.SIGMOID:
        if need[0]:
            grads[0] = g * s["y"] * (1.0 - s["y"])
    elif kind is OpKind.EXP:
        if need[0]:
            grads[0] = g * s["y"]
    elif kind is OpKind.LOGSUMEXP:
        if need[0]:
            softmax = np.exp(s["x"] - np.expand_dims(s["lse"], -1))
            grads[0] = np.expand_dims(g, -1) * softmax
    elif kind is OpKind.SCALE:
        if need[0]:
            grads[0] = g * s["factor"]
    elif kind is OpKind.CONCAT:
        offset = 0
        for i, w in enumerate(s["widths"]):
            if need[i]:
                grads[i] = g[..., offset:offset + w]
            offset += w
    elif kind is OpKind.GATHER_ROWS:
        if need[0]:
            acc = np.zeros(s["shape"], dtype=np.float64)
            np.add.at(acc, s["indices"], g)
            grads[0] = acc
    return grads


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Returns a map node_id -> gradient array for every node the gradient
    reached, and stores the gradient on each tensor's ``grad``.  A record can
    be differentiated only once.
    """
    if loss.shape != ():
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    rec = loss.record
    if rec._consumed:
        raise ValueError("backward: record already consumed")
    rec._consumed = True

    grads: dict[int, np.ndarray] = {loss.node_id: np.array(1.0)}
    for node_id in range(loss.node_id, -1, -1):
        g = grads.get(node_id)
        node = rec._nodes[node_id]
        if g is None or not node.requires_grad or not node.input_ids:
            continue
        inputs = [rec._tensors[i] for i in node.input_ids]
        for inp, gi in zip(inputs, _backward_node(node, inputs, g)):
            if gi is None:
                continue
            prev = grads.get(inp.node_id)
            grads[inp.node_id] = gi if prev is None else prev + gi
    for node_id, g in grads.items():
        rec._tensors[node_id].grad = np.asarray(g, dtype=np.float64)
    return grads


# Thin wrappers so formulas read naturally.

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.MATMUL, (a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.ADD, (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.MUL, (a, b))


def div(a: Tensor, b: Tensor) -> Tensor:
    return apply(OpKind.DIV, (a, b))


def reciprocal(a: Tensor) -> Tensor:
    return apply(OpKind.RECIPROCAL, (a,))


def square(a: Tensor) -> Tensor:
    return apply(OpKind.SQUARE, (a,))


def absolute(a: Tensor) -> Tensor:
    return apply(OpKind.ABS, (a,))


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    return apply(OpKind.SUM, (a,), axis=axis)


def relu(a: Tensor) -> Tensor:
    return apply(OpKind.RELU, (a,))


def softplus(a: Tensor) -> Tensor:
    return apply(OpKind.SOFTPLUS, (a,))


def sigmoid(a: Tensor) -> Tensor:
    return apply(OpKind.SIGMOID, (a,))


def exp(a: Tensor) -> Tensor:
    return apply(OpKind.EXP, (a,))


def logsumexp(a: Tensor) -> Tensor:
    return apply(OpKind.LOGSUMEXP, (a,))


def scale(a: Tensor, factor: float) -> Tensor:
    return apply(OpKind.SCALE, (a,), factor=factor)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    return apply(OpKind.CONCAT, tuple(parts))


def gather_rows(a: Tensor, indices) -> Tensor:
    return apply(OpKind.GATHER_ROWS, (a,), indices=np.asarray(indices))


def add_chain(parts: Sequence[Tensor]) -> Tensor:
    """Left-to-right sum of same-shape tensors."""
    out = parts[0]
    for t in parts[1:]:
        out = add(out, t)
    return out


def finite_difference_check(f: Callable[[list[Tensor]], Tensor],
                            params: Sequence[np.ndarray | Tensor],
                            step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must deterministically build a scalar loss from fresh leaf tensors;
    it is re-evaluated twice per parameter coordinate, so keep inputs small.
    Relative error per coordinate is |analytic - numeric| divided by
    max(1e-12, |analytic| + |numeric|).
    """
    if step <= 0:
        raise ValueError("finite_difference_check: step must be positive")
    arrays = [np.array(p.values if isinstance(p, Tensor) else p, dtype=np.float64)
              for p in params]

    def evaluate(values: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
        rec = Record()
        leaves = [rec.leaf(v.copy()) for v in values]
        out = f(leaves)
        if out.shape != ():
            raise ValueError("finite_difference_check: f must return a scalar")
        if not np.isfinite(out.values):
            raise ValueError("finite_difference_check: f returned a non-finite value")
        backward(out)
        grads = [leaf.grad if leaf.grad is not None else np.zeros_like(v)
                 for leaf, v in zip(leaves, values)]
        return float(out.values), grads

    _, analytic = evaluate(arrays)

    def scalar(values: list[np.ndarray]) -> float:
        rec = Record()
        leaves = [rec.leaf(v) for v in values]
        out = f(leaves)
        val = float(out.values)
        if not np.isfinite(val):
            raise ValueError("finite_difference_check: f returned a non-finite value")
        return val

    worst = 0.0
    for k, base in enumerate(arrays):
        flat = base.ravel()
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = scalar(arrays)
            flat[j] = orig - step
            lo = scalar(arrays)
            flat[j] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[k].ravel()[j]
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
