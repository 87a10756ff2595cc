"""Dense float64 tensors with reverse-mode gradient accumulation.

Every differentiable operation builds a node that remembers its input
tensors and a local gradient rule. ``backward`` on a scalar walks the
recorded operations once each, in reverse topological order, and adds
the resulting gradients into the ``grad`` buffer of every reachable
parameter. Accumulation is additive: calling ``backward`` twice without
``zero_grad`` doubles the gradients, matching the usual training-loop
semantics.

``finite_diff_grad`` is the independent oracle used to validate the
reverse-mode rules.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

try:
    from scipy.special import expit as _expit
except ImportError:  # pragma: no cover
    _expit = None


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite, got NaN or Inf")
    return arr


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients.

    Construction rejects NaN/Inf. ``grad`` is lazily allocated and
    persists across backward passes until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_grad_fn")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], grad_fn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out.name = None
        out._parents = parents if out.requires_grad else ()
        out._grad_fn = grad_fn if out.requires_grad else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; constants (floats, ndarrays) stay outside the graph
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def parameter(values, name: str | None = None) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(values, requires_grad=True, name=name)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitive operations


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._from_op(data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._from_op(data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D/1-D operands with the usual gradient rules."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def grad_fn(g):
        ad, bd = a.data, b.data
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return g @ bd.T, np.outer(ad, g)
        return g * bd, g * ad  # 1-D dot product, g is scalar

    return Tensor._from_op(data, (a, b), grad_fn)


def matvec(w, x) -> Tensor:
    """Product of an (m, n) matrix and a length-n vector."""
    w, x = _wrap(w), _wrap(x)
    if w.data.ndim != 2 or x.data.ndim != 1:
        raise ShapeError(f"matvec expects matrix and vector, got {w.data.shape} and {x.data.shape}")
    if w.data.shape[1] != x.data.shape[0]:
        raise ShapeError(
            f"matvec dimension mismatch: matrix {w.data.shape} vs vector {x.data.shape}")
    return matmul(w, x)


def linear(x, w, b=None) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``w`` stored output-major (k, d).

    ``x`` may be a single vector (d,) or a batch (B, d); the bias
    broadcasts over the batch.
    """
    x, w = _wrap(x), _wrap(w)
    if w.data.ndim != 2:
        raise ShapeError(f"linear expects a 2-D weight, got {w.data.shape}")
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"linear dimension mismatch: input {x.data.shape} vs weight {w.data.shape}")
    data = x.data @ w.data.T
    if b is None:
        def grad_fn(g):
            if x.data.ndim == 1:
                return g @ w.data, np.outer(g, x.data)
            return g @ w.data, g.T @ x.data

        return Tensor._from_op(data, (x, w), grad_fn)

    b = _wrap(b)
    data = data + b.data

    def grad_fn(g):
        if x.data.ndim == 1:
            return g @ w.data, np.outer(g, x.data), g
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return Tensor._from_op(data, (x, w, b), grad_fn)


def linear2(x, wx, h, wh, b) -> Tensor:
    """Fused two-input affine ``x @ wx.T + h @ wh.T + b``.

    One graph node instead of four; this is the hot path of the
    recurrent cell, where ``x`` is usually a constant input slice and
    ``h`` the previous hidden state.
    """
    x, wx, h, wh, b = _wrap(x), _wrap(wx), _wrap(h), _wrap(wh), _wrap(b)
    if x.data.shape[-1] != wx.data.shape[1] or h.data.shape[-1] != wh.data.shape[1]:
        raise ShapeError(
            f"linear2 dimension mismatch: {x.data.shape}@{wx.data.shape}, "
            f"{h.data.shape}@{wh.data.shape}")
    data = x.data @ wx.data.T + h.data @ wh.data.T + b.data

    def grad_fn(g):
        batched = x.data.ndim == 2
        gwx = g.T @ x.data if batched else np.outer(g, x.data)
        gwh = g.T @ h.data if batched else np.outer(g, h.data)
        gb = g.sum(axis=0) if batched else g
        return g @ wx.data, gwx, g @ wh.data, gwh, gb

    return Tensor._from_op(data, (x, wx, h, wh, b), grad_fn)


def sigmoid(x) -> Tensor:
    """Elementwise logistic function, branch-stable for large |x|."""
    x = _wrap(x)
    data = _sigmoid_values(x.data)

    def grad_fn(g):
        return (g * data * (1.0 - data),)

    return Tensor._from_op(data, (x,), grad_fn)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    if _expit is not None:
        return _expit(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x) -> Tensor:
    x = _wrap(x)
    data = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - data * data),)

    return Tensor._from_op(data, (x,), grad_fn)


def relu(x) -> Tensor:
    x = _wrap(x)
    data = np.maximum(x.data, 0.0)

    def grad_fn(g):
        return (g * (x.data > 0.0),)

    return Tensor._from_op(data, (x,), grad_fn)


def softmax(x, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``, max-subtracted for stability."""
    x = _wrap(x)
    if x.data.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return Tensor._from_op(data, (x,), grad_fn)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    if not parts:
        raise ValueError("concat needs at least one tensor")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(data, tuple(parts), grad_fn)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Slice [start, stop) along the last axis."""
    x = _wrap(x)
    data = x.data[..., start:stop]

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return Tensor._from_op(data, (x,), grad_fn)


def mean(x) -> Tensor:
    """Mean over all entries, returned as a scalar tensor."""
    x = _wrap(x)
    data = np.asarray(x.data.mean())
    n = x.data.size

    def grad_fn(g):
        return (np.full_like(x.data, float(g) / n),)

    return Tensor._from_op(data, (x,), grad_fn)


def sum_all(x) -> Tensor:
    x = _wrap(x)
    data = np.asarray(x.data.sum())

    def grad_fn(g):
        return (np.full_like(x.data, float(g)),)

    return Tensor._from_op(data, (x,), grad_fn)


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable parameter's grad.

    The loss must be a scalar produced by recorded operations (or a
    parameter itself); each recorded operation is visited exactly once.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor loss")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any recorded operation or parameter")

    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = {id(loss)}
    for node in order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._grad_fn is None:
            # leaf parameter: accumulate
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            acc = grads.get(key)
            if acc is None:
                # grad rules may alias their input; defer copying until a
                # second contribution actually needs to accumulate
                grads[key] = pg
            elif key in owned:
                acc += pg
            else:
                grads[key] = acc + pg
                owned.add(key)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the grad-requiring subgraph (iterative)."""
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)  # private contiguous copy, mutated in place
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def gradient_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case relative disagreement between two gradient estimates.

    Entries where both gradients are essentially zero compare by
    absolute difference so untouched parameters do not divide by zero.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    rel = np.where(scale < 1e-8, diff, diff / np.maximum(scale, 1e-300))
    return float(rel.max()) if rel.size else 0.0
