"""Dense float64 tensors with tape-based reverse-mode gradients.

Every value in the learned pipeline is a :class:`Tensor`. Operations build a
DAG of tensors; :meth:`Tensor.backward` walks it in reverse topological order
and accumulates adjoints into ``grad``. Leaves (parameters, constants) keep
accumulating across calls until :meth:`Tensor.zero_grad`; intermediate nodes
are reset at the start of every backward pass.
"""
from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

NORM_EPS = 1e-12

BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    """A dense array that records how it was computed."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(
        self,
        value,
        parents: Sequence["Tensor"] = (),
        backward_fn: Optional[BackwardFn] = None,
        name: Optional[str] = None,
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy(), name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __truediv__(self, other: float) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a scalar constant")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def backward(self, adjoint=None) -> None:
        """Propagate ``adjoint`` (ones for scalar outputs) to every ancestor."""

        if adjoint is None:
            if self.value.size != 1:
                raise ValueError(f"backward() needs an explicit adjoint for shape {self.shape}")
            adjoint = np.ones_like(self.value)
        adjoint = np.asarray(adjoint, dtype=np.float64)
        if adjoint.shape != self.shape:
            raise ValueError(f"adjoint shape {adjoint.shape} does not match output {self.shape}")

        order = _topological_order(self)
        for node in order:
            if not node.is_leaf:
                node.grad = np.zeros_like(node.value)
        self.grad = self.grad + adjoint
        for node in order:
            if not node.is_leaf:
                node.backward_fn(node.grad)
        LOGGER.debug("backward through %d nodes", len(order))


def _topological_order(root: Tensor) -> list[Tensor]:
    """Nodes ordered from ``root`` back to the leaves (iterative DFS)."""

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def backward(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g, a.shape)
        b.grad += _unbroadcast(g, b.shape)

    return Tensor(a.value + b.value, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def backward(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g, a.shape)
        b.grad -= _unbroadcast(g, b.shape)

    return Tensor(a.value - b.value, (a, b), backward)


def mul(a, b) -> Tensor:
    """Element-wise product (with broadcasting)."""

    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def backward(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g * b.value, a.shape)
        b.grad += _unbroadcast(g * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g: np.ndarray) -> None:
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), backward)


def spmm(operator, x) -> Tensor:
    """Constant (sparse or dense) matrix times a tensor: ``operator @ x``."""

    x = as_tensor(x)
    if operator.shape[1] != x.shape[0]:
        raise ValueError(f"spmm: incompatible shapes {operator.shape} and {x.shape}")
    transposed = operator.T.tocsr() if sp.issparse(operator) else np.asarray(operator).T

    def backward(g: np.ndarray) -> None:
        x.grad += np.asarray(transposed @ g)

    return Tensor(np.asarray(operator @ x.value), (x,), backward)


# --- nonlinearities


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0.0

    def backward(g: np.ndarray) -> None:
        x.grad += g * mask

    return Tensor(np.where(mask, x.value, 0.0), (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.value)

    def backward(g: np.ndarray) -> None:
        x.grad += g * (1.0 - out * out)

    return Tensor(out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))

    def backward(g: np.ndarray) -> None:
        x.grad += g * out * (1.0 - out)

    return Tensor(out, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.value)

    def backward(g: np.ndarray) -> None:
        x.grad += g * out

    return Tensor(out, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g: np.ndarray) -> None:
        x.grad += g / x.value

    return Tensor(np.log(x.value), (x,), backward)


def absolute(x) -> Tensor:
    """``|x|`` with subgradient 0 at the kink."""

    x = as_tensor(x)
    sign = np.sign(x.value)

    def backward(g: np.ndarray) -> None:
        x.grad += g * sign

    return Tensor(np.abs(x.value), (x,), backward)


# --- reductions and shape plumbing


def sum_(x, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.grad += np.broadcast_to(g, x.shape)

    return Tensor(out, (x,), backward)


def max_(x, axis: int) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the first maximal index."""

    x = as_tensor(x)
    arg = np.argmax(x.value, axis=axis)
    out = np.take_along_axis(x.value, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g: np.ndarray) -> None:
        scatter = np.zeros_like(x.value)
        np.put_along_axis(scatter, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        x.grad += scatter

    return Tensor(out, (x,), backward)


def logsumexp(x, axis: int, keepdims: bool = True) -> Tensor:
    x = as_tensor(x)
    peak = x.value.max(axis=axis, keepdims=True)
    shifted = np.exp(x.value - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = peak + np.log(total)
    softmax = shifted / total

    def backward(g: np.ndarray) -> None:
        if not keepdims:
            g = np.expand_dims(g, axis)
        x.grad += g * softmax

    return Tensor(out if keepdims else out.squeeze(axis), (x,), backward)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)

    def backward(g: np.ndarray) -> None:
        x.grad += g.reshape(x.shape)

    return Tensor(x.value.reshape(shape), (x,), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def backward(g: np.ndarray) -> None:
        x.grad += g.T

    return Tensor(x.value.T, (x,), backward)


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ValueError(f"concatenate: incompatible shapes {shapes}") from None
    bounds = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for tensor, part in zip(tensors, np.split(g, bounds, axis=axis)):
            tensor.grad += part

    return Tensor(out, tensors, backward)


def gather_rows(x, index) -> Tensor:
    """Rows of ``x`` selected by ``index`` (repeats allowed)."""

    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        np.add.at(x.grad, index, g)

    return Tensor(x.value[index], (x,), backward)


def max_pool(x) -> Tensor:
    """Global max over rows: ``(n, d) -> (1, d)``; ties route to the first row."""

    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"max_pool: expected a non-empty 2-D tensor, got {x.shape}")
    return reshape(max_(x, axis=0), (1, x.shape[1]))


def segment_max(x, segments: Sequence[np.ndarray], n_segments: Optional[int] = None) -> Tensor:
    """Column-wise max over each row group; empty groups give a zero row.

    ``segments[s]`` lists the row indices of group ``s`` in ascending order so
    that ties route the gradient to the first (lowest) row.
    """

    x = as_tensor(x)
    n_segments = len(segments) if n_segments is None else n_segments
    out = np.zeros((n_segments, x.shape[1]))
    winners = np.full((n_segments, x.shape[1]), -1, dtype=np.int64)
    for s, rows in enumerate(segments):
        if len(rows) == 0:
            continue
        block = x.value[rows]
        arg = np.argmax(block, axis=0)
        winners[s] = np.asarray(rows)[arg]
        out[s] = block[arg, np.arange(x.shape[1])]

    def backward(g: np.ndarray) -> None:
        seg, col = np.nonzero(winners >= 0)
        np.add.at(x.grad, (winners[seg, col], col), g[seg, col])

    return Tensor(out, (x,), backward)


def row_norm(x) -> Tensor:
    """Euclidean norm of each row: ``(n, d) -> (n,)``; zero rows get zero gradient."""

    x = as_tensor(x)
    norms = np.sqrt((x.value * x.value).sum(axis=1))

    def backward(g: np.ndarray) -> None:
        safe = np.where(norms > 0.0, norms, 1.0)
        x.grad += np.where(norms[:, None] > 0.0, x.value * (g / safe)[:, None], 0.0)

    return Tensor(norms, (x,), backward)


def l2_normalize(x) -> Tensor:
    """Scale every row to unit length, ``x / (||x|| + 1e-12)``."""

    x = as_tensor(x)
    norms = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))
    denom = norms + NORM_EPS
    out = x.value / denom

    def backward(g: np.ndarray) -> None:
        dot = (x.value * g).sum(axis=1, keepdims=True)
        safe = np.where(norms > 0.0, norms, 1.0)
        radial = np.where(norms > 0.0, dot / (safe * denom * denom), 0.0)
        x.grad += g / denom - x.value * radial

    return Tensor(out, (x,), backward)


def segment_index(owner: np.ndarray, n_segments: int) -> list[np.ndarray]:
    """Group row indices by ``owner`` id, keeping ascending row order."""

    owner = np.asarray(owner, dtype=np.int64)
    order = np.argsort(owner, kind="stable")
    counts = np.bincount(owner, minlength=n_segments)
    return np.split(order, np.cumsum(counts)[:-1])


# --- gradient checking


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
    floor: float = 1e-3,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` rebuilds the computation from the current parameter values and must
    return a scalar tensor. Relative error uses ``max(|analytic|, |numeric|,
    floor)`` as denominator so that vanishing gradients compare absolutely.
    """

    params = list(params)
    for param in params:
        if not param.value.flags.c_contiguous:
            param.value = np.ascontiguousarray(param.value)
        param.zero_grad()
    f().backward()
    analytic = [param.grad.copy() for param in params]

    worst = 0.0
    for param, grad in zip(params, analytic):
        flat = param.value.reshape(-1)
        for k in range(flat.size):
            original = flat[k]
            flat[k] = original + h
            upper = f().item()
            flat[k] = original - h
            lower = f().item()
            flat[k] = original
            numeric = (upper - lower) / (2.0 * h)
            exact = grad.reshape(-1)[k]
            err = abs(numeric - exact) / max(abs(numeric), abs(exact), floor)
            worst = max(worst, err)
    for param in params:
        param.zero_grad()
    return worst


__all__ = [
    "Tensor",
    "absolute",
    "add",
    "as_tensor",
    "concatenate",
    "exp",
    "finite_difference_check",
    "gather_rows",
    "l2_normalize",
    "log",
    "logsumexp",
    "matmul",
    "max_",
    "max_pool",
    "mul",
    "relu",
    "reshape",
    "row_norm",
    "segment_index",
    "segment_max",
    "sigmoid",
    "spmm",
    "sub",
    "sum_",
    "tanh",
    "transpose",
]
