"""
Dense tensors and reverse-mode differentiation.

Every operation that touches a tensor requiring gradients appends one node to
the active OpGraph. backward() walks that tape in reverse, so the recording
order is the topological order and each node is visited exactly once.

Graphs are activated with a context manager and kept per thread:

    with OpGraph() as graph:
        loss = model_loss(batch)
    backward(graph, loss)

Outside of a graph nothing is recorded (inference mode).
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import PolypNetError, ShapeError

logger = logging.getLogger(__name__)

PRECISIONS = {"single": np.float32, "double": np.float64}

_local = threading.local()


def get_dtype():
    return getattr(_local, "dtype", np.float32)


def set_precision(mode: str):
    if mode not in PRECISIONS:
        raise PolypNetError(f"unknown precision '{mode}', expected one of {sorted(PRECISIONS)}")
    _local.dtype = PRECISIONS[mode]


@contextmanager
def precision(mode: str):
    """Temporarily switch the dtype used for new tensors ("single" or "double")"""
    previous = get_dtype()
    set_precision(mode)
    try:
        yield
    finally:
        _local.dtype = previous


class Tensor:
    """N-dimensional real array with an optional gradient slot"""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=get_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = requires_grad
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"

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

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class OpNode:
    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name: str, inputs: Tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class OpGraph:
    """Tape of primitive operations recorded during one forward pass"""

    def __init__(self):
        self.nodes: List[OpNode] = []

    def record(self, name, inputs, output, backward_fn):
        self.nodes.append(OpNode(name, tuple(inputs), output, backward_fn))

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        stack = getattr(_local, "graphs", None)
        if stack is None:
            stack = _local.graphs = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _local.graphs.pop()
        return False


def current_graph() -> Optional[OpGraph]:
    stack = getattr(_local, "graphs", None)
    return stack[-1] if stack else None


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def make_result(name: str, inputs: Sequence[Tensor], data: np.ndarray, backward_fn) -> Tensor:
    """Wrap an op's output and record it when a graph is active"""
    graph = current_graph()
    requires = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires)
    if requires:
        graph.record(name, inputs, out, backward_fn)
    return out


def backward(graph: OpGraph, loss: Tensor):
    """Populate .grad on every tensor the graph touched, starting from a scalar loss.

    Gradients are recomputed from scratch for that graph (not accumulated into
    values left over from previous graphs).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(node.output is loss for node in graph.nodes):
        raise PolypNetError("loss was not produced by an operation recorded in this graph")

    for node in graph.nodes:
        node.output.grad = None
        for t in node.inputs:
            t.grad = None

    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        grad_out = node.output.grad
        if grad_out is None:
            continue
        grads = node.backward(grad_out)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            t.grad = g if t.grad is None else t.grad + g


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`"""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result("add", (a, b), a.data + b.data, grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result("sub", (a, b), a.data - b.data, grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result("mul", (a, b), a.data * b.data, grad_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        ga = unbroadcast(g / b.data, a.shape)
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_result("div", (a, b), a.data / b.data, grad_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result("neg", (a,), -a.data, lambda g: (-g,))


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.data.dtype)
    return make_result("sum", (a,), data, grad_fn)


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}: {e}") from e
    return make_result("reshape", (a,), data, lambda g: (g.reshape(a.shape),))


def getitem(a, key) -> Tensor:
    """Basic (slice/int) indexing; advanced indexing is not supported"""
    a = as_tensor(a)
    parts = key if isinstance(key, tuple) else (key,)
    for part in parts:
        if not (part is None or part is Ellipsis or isinstance(part, (int, slice))):
            raise ShapeError(f"only basic indexing is supported, got {type(part).__name__}")

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return make_result("getitem", (a,), a.data[key], grad_fn)
