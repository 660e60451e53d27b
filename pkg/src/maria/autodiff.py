"""Reverse-mode automatic differentiation over dense float64 tensors.

A :class:`Graph` owns an append-only arena of :class:`Value` nodes. Nodes are
appended in creation order, so the arena index is a valid topological order
and :func:`backward` is a single reverse sweep over it. All buffers are numpy
float64. The graph also owns the random source used for Gumbel noise, so runs
are reproducible bit for bit and noise can be recorded and replayed
(finite-difference checks need the same noise on every perturbed pass).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with a primitive."""


def _shape_error(op: str, *shapes: tuple) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class Value:
    """One node of the computation: a float64 buffer plus its backward recipe."""

    __slots__ = ("graph", "index", "data", "grad", "op", "parents", "requires_grad", "_backward")

    def __init__(
        self,
        graph: "Graph",
        data: Array,
        parents: tuple["Value", ...] = (),
        op: str = "leaf",
        requires_grad: bool = False,
        backward: Callable[[Array], None] | None = None,
    ):
        self.graph = graph
        self.data = data
        self.grad = np.zeros_like(data)
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward
        self.index = graph._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Value(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars go through scale/shift so the tape stays lean.
    def __add__(self, other: "Value | float") -> "Value":
        if isinstance(other, Value):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other: "Value | float") -> "Value":
        if isinstance(other, Value):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other: "Value | float") -> "Value":
        if isinstance(other, Value):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Value":
        return scale(self, -1.0)

    def __matmul__(self, other: "Value") -> "Value":
        return matmul(self, other)


class Graph:
    """Arena of Values plus the seeded noise source for one model build."""

    def __init__(self, seed: int | Sequence[int] = 0):
        self.nodes: list[Value] = []
        self.rng = np.random.default_rng(seed)
        self.clamp_events = 0
        # "context" = everything a forward pass consumes besides node data:
        # sampled noise and gradient-frozen views. Recording it and replaying
        # it bit for bit lets finite differences probe exactly the partial
        # derivative the backward pass computes.
        self._context_mode = "live"  # live | record | replay
        self._noise_tape: list[Array] = []
        self._noise_cursor = 0
        self._frozen_tape: list[Array] = []
        self._frozen_cursor = 0

    def _register(self, value: Value) -> int:
        self.nodes.append(value)
        return len(self.nodes) - 1

    def __len__(self) -> int:
        return len(self.nodes)

    # -- arena bookkeeping ------------------------------------------------
    def mark(self) -> int:
        """Current arena length; pass to :meth:`truncate` to free intermediates."""
        return len(self.nodes)

    def truncate(self, mark: int) -> None:
        """Drop every node created at or after ``mark`` (parameters stay if older)."""
        del self.nodes[mark:]

    def zero_grads(self) -> None:
        for node in self.nodes:
            node.grad[...] = 0.0

    # -- noise source and frozen views --------------------------------------
    def uniform(self, shape: tuple[int, ...]) -> Array:
        """Uniform[0,1) draw that honors the record/replay mode."""
        shape = tuple(shape)
        if self._context_mode == "replay":
            if self._noise_cursor >= len(self._noise_tape):
                raise RuntimeError("noise replay exhausted: more draws than were recorded")
            draw = self._noise_tape[self._noise_cursor]
            if draw.shape != shape:
                raise RuntimeError(f"noise replay shape mismatch: recorded {draw.shape}, requested {shape}")
            self._noise_cursor += 1
            return draw
        draw = self.rng.random(size=shape)
        if self._context_mode == "record":
            self._noise_tape.append(draw)
        return draw

    def frozen_view(self, data: Array) -> Array:
        """Buffer for a stop_gradient node, pinned to the recorded pass on replay."""
        if self._context_mode == "replay":
            if self._frozen_cursor >= len(self._frozen_tape):
                raise RuntimeError("frozen-view replay exhausted")
            view = self._frozen_tape[self._frozen_cursor]
            if view.shape != data.shape:
                raise RuntimeError(f"frozen-view shape mismatch: recorded {view.shape}, got {data.shape}")
            self._frozen_cursor += 1
            return view
        if self._context_mode == "record":
            data = data.copy()
            self._frozen_tape.append(data)
        return data

    def record_context(self) -> None:
        """Record all noise draws and frozen views for bit-identical replay."""
        self._context_mode = "record"
        self._noise_tape = []
        self._noise_cursor = 0
        self._frozen_tape = []
        self._frozen_cursor = 0

    def replay_context(self) -> None:
        """Rewind: subsequent draws and frozen views replay the recorded tapes."""
        if self._context_mode == "live":
            raise RuntimeError("no recorded context to replay")
        self._context_mode = "replay"
        self._noise_cursor = 0
        self._frozen_cursor = 0

    def live_context(self) -> None:
        """Back to fresh sampling and live frozen views; clears the tapes."""
        self._context_mode = "live"
        self._noise_tape = []
        self._noise_cursor = 0
        self._frozen_tape = []
        self._frozen_cursor = 0

    # -- node constructors --------------------------------------------------
    def constant(self, data) -> Value:
        arr = np.asarray(data, dtype=np.float64)
        return Value(self, arr, op="constant")

    def parameter(self, data) -> Value:
        arr = np.array(data, dtype=np.float64)
        return Value(self, arr, op="parameter", requires_grad=True)


def _node(
    graph: Graph,
    data: Array,
    parents: tuple[Value, ...],
    op: str,
    backward: Callable[[Array], None],
) -> Value:
    requires = any(p.requires_grad for p in parents)
    return Value(graph, data, parents, op, requires, backward if requires else None)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcastable(a: tuple, b: tuple) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Value, b: Value) -> Value:
    if not _broadcastable(a.shape, b.shape):
        raise _shape_error("add", a.shape, b.shape)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _node(a.graph, a.data + b.data, (a, b), "add", backward)


def sub(a: Value, b: Value) -> Value:
    if not _broadcastable(a.shape, b.shape):
        raise _shape_error("sub", a.shape, b.shape)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)

    return _node(a.graph, a.data - b.data, (a, b), "sub", backward)


def mul(a: Value, b: Value) -> Value:
    if not _broadcastable(a.shape, b.shape):
        raise _shape_error("mul", a.shape, b.shape)

    def backward(g: Array) -> None:
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _node(a.graph, a.data * b.data, (a, b), "mul", backward)


def matmul(a: Value, b: Value) -> Value:
    """numpy matmul semantics: 2-d or stacked 3-d operands, broadcasting batch dims."""
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise _shape_error("matmul", a.shape, b.shape) from exc

    def backward(g: Array) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.grad += _unbroadcast(ga, a.shape)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.grad += _unbroadcast(gb, b.shape)

    return _node(a.graph, out, (a, b), "matmul", backward)


def concat(parts: Sequence[Value], axis: int = -1) -> Value:
    if not parts:
        raise ValueError("concat: need at least one part")
    if axis not in (-1, 0):
        raise ValueError("concat: only the last axis and axis 0 are supported")
    base = parts[0].shape
    for p in parts[1:]:
        pa, pb = list(base), list(p.shape)
        if len(pa) != len(pb):
            raise _shape_error("concat", base, p.shape)
        pa[axis] = pb[axis] = 0
        if pa != pb:
            raise _shape_error("concat", base, p.shape)
    widths = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g: Array) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                if axis == -1:
                    p.grad += g[..., lo:hi]
                else:
                    p.grad += g[lo:hi]

    out = np.concatenate([p.data for p in parts], axis=axis)
    return _node(parts[0].graph, out, tuple(parts), "concat", backward)


def slice_last(x: Value, start: int, stop: int) -> Value:
    width = x.shape[-1]
    if not (0 <= start <= stop <= width):
        raise _shape_error("slice_last", x.shape, (start, stop))

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad[..., start:stop] += g

    return _node(x.graph, x.data[..., start:stop].copy(), (x,), "slice_last", backward)


def take_rows(x: Value, indices) -> Value:
    """Gather rows of a 2-d Value; ``indices`` may have any shape.

    Output shape is ``indices.shape + (row_width,)``. The backward pass
    scatter-adds into the source rows, so repeated indices accumulate.
    """
    if x.data.ndim != 2:
        raise _shape_error("take_rows", x.shape, ())
    idx = np.asarray(indices)
    if idx.dtype.kind not in "iu":
        raise TypeError("take_rows: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"take_rows: index out of range for {x.shape[0]} rows")

    def backward(g: Array) -> None:
        if x.requires_grad:
            np.add.at(x.grad, idx.reshape(-1), g.reshape(-1, x.shape[1]))

    out = x.data[idx.reshape(-1)].reshape(idx.shape + (x.shape[1],))
    return _node(x.graph, out, (x,), "take_rows", backward)


def reshape(x: Value, shape: tuple[int, ...]) -> Value:
    try:
        out = x.data.reshape(shape).copy()
    except ValueError as exc:
        raise _shape_error("reshape", x.shape, tuple(shape)) from exc

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g.reshape(x.shape)

    return _node(x.graph, out, (x,), "reshape", backward)


def transpose_last2(x: Value) -> Value:
    if x.data.ndim < 2:
        raise _shape_error("transpose_last2", x.shape)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += np.swapaxes(g, -1, -2)

    return _node(x.graph, np.swapaxes(x.data, -1, -2).copy(), (x,), "transpose_last2", backward)


def sigmoid(x: Value) -> Value:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g * out * (1.0 - out)

    return _node(x.graph, out, (x,), "sigmoid", backward)


def relu(x: Value) -> Value:
    out = np.maximum(x.data, 0.0)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g * (x.data > 0.0)

    return _node(x.graph, out, (x,), "relu", backward)


def softmax_last(x: Value) -> Value:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g: Array) -> None:
        if x.requires_grad:
            inner = (g * out).sum(axis=-1, keepdims=True)
            x.grad += out * (g - inner)

    return _node(x.graph, out, (x,), "softmax_last", backward)


def log(x: Value) -> Value:
    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g / x.data

    return _node(x.graph, np.log(x.data), (x,), "log", backward)


def sqrt(x: Value) -> Value:
    out = np.sqrt(x.data)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g / (2.0 * out)

    return _node(x.graph, out, (x,), "sqrt", backward)


def power(x: Value, exponent: float) -> Value:
    out = x.data ** exponent

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g * exponent * x.data ** (exponent - 1.0)

    return _node(x.graph, out, (x,), "power", backward)


def scale(x: Value, c: float) -> Value:
    c = float(c)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g * c

    return _node(x.graph, x.data * c, (x,), "scale", backward)


def shift(x: Value, c: float) -> Value:
    c = float(c)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g

    return _node(x.graph, x.data + c, (x,), "shift", backward)


def clamp(x: Value, lo: float, hi: float) -> Value:
    """Clip into [lo, hi]; gradient passes only where x lies strictly inside."""
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g * inside

    return _node(x.graph, out, (x,), "clamp", backward)


def sum_all(x: Value) -> Value:
    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g

    return _node(x.graph, np.asarray(x.data.sum()), (x,), "sum_all", backward)


def mean_all(x: Value) -> Value:
    n = x.data.size

    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g / n

    return _node(x.graph, np.asarray(x.data.mean()), (x,), "mean_all", backward)


def sum_last(x: Value, keepdims: bool = False) -> Value:
    def backward(g: Array) -> None:
        if x.requires_grad:
            x.grad += g if keepdims else np.expand_dims(g, -1)

    return _node(x.graph, x.data.sum(axis=-1, keepdims=keepdims), (x,), "sum_last", backward)


def mean_last(x: Value, keepdims: bool = False) -> Value:
    n = x.shape[-1]

    def backward(g: Array) -> None:
        gg = g if keepdims else np.expand_dims(g, -1)
        if x.requires_grad:
            x.grad += gg / n

    return _node(x.graph, x.data.mean(axis=-1, keepdims=keepdims), (x,), "mean_last", backward)


def dot_last(a: Value, b: Value) -> Value:
    """Row-wise dot product over the last axis, keepdims (…×1)."""
    if a.shape != b.shape:
        raise _shape_error("dot_last", a.shape, b.shape)
    return sum_last(mul(a, b), keepdims=True)


def stop_gradient(x: Value) -> Value:
    """Leaf copy sharing x's data: identical values, no gradient path at all."""
    return Value(x.graph, x.graph.frozen_view(x.data), parents=(), op="stop_gradient", requires_grad=False)


def gumbel_softmax(logits: Value, temperature: float) -> Value:
    """Softmax((logits + g) / temperature) with g = -log(-log u), u ~ U(0,1).

    The noise comes from the owning graph's seeded source (so it honors
    record/replay) and is treated as a constant: gradients flow only through
    ``logits``. The argmax of the output is an exact categorical sample with
    probabilities softmax(logits) when logits are log-probabilities.
    """
    if temperature <= 0.0:
        raise ValueError(f"gumbel_softmax: temperature must be positive, got {temperature}")
    u = np.clip(logits.graph.uniform(logits.shape), 1e-12, 1.0 - 1e-12)
    noise = logits.graph.constant(-np.log(-np.log(u)))
    return softmax_last(scale(add(logits, noise), 1.0 / temperature))


def argmax_one_hot(logits: Value) -> Value:
    """Deterministic one-hot over the last axis; a constant (no gradient)."""
    k = logits.shape[-1]
    idx = logits.data.argmax(axis=-1)
    out = np.zeros(logits.shape, dtype=np.float64)
    np.put_along_axis(out.reshape(-1, k), idx.reshape(-1, 1), 1.0, axis=-1)
    return logits.graph.constant(out)


def backward(loss: Value) -> None:
    """Accumulate d loss / d node into every reachable node's grad buffer.

    Single reverse sweep over the arena: creation order is topological, so by
    the time a node's recipe runs, every consumer has already added its
    contribution to that node's grad.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    nodes = loss.graph.nodes
    needed = np.zeros(loss.index + 1, dtype=bool)
    needed[loss.index] = True
    for i in range(loss.index, -1, -1):
        if needed[i]:
            for p in nodes[i].parents:
                needed[p.index] = True
    loss.grad[...] = 1.0
    for i in range(loss.index, -1, -1):
        node = nodes[i]
        if needed[i] and node.requires_grad and node._backward is not None:
            node._backward(node.grad)


def parameters_of(values: Iterable[Value]) -> list[Value]:
    return [v for v in values if v.requires_grad]
