"""Reverse-mode automatic differentiation over dense float64 arrays.

A small dynamic-graph engine: every operation wraps its output in a new
:class:`Tensor` that remembers its inputs and a local backward rule, and
``Tensor.backward()`` replays the recorded graph in reverse topological
order. The graph is rebuilt on every forward pass, which keeps unrolled
recurrences over variable-length sequences simple.

Everything is float64 and single-threaded by design: the models in this
package are desk-scale and the test suite leans on finite-difference
gradient checks, so precision and determinism outrank throughput. When
NaN checks are enabled (the default), every op output is scanned for
NaN/Inf and a :class:`NonFiniteError` is raised on the first hit.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "no_grad",
    "set_nan_checks",
    "nan_checks_enabled",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "absolute",
    "concat",
    "stack",
    "softmax",
    "cross_entropy",
    "embedding_lookup",
    "pick",
    "slice_axis",
    "Adam",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf while NaN checks were enabled."""


_grad_enabled = True
_nan_checks = True


def set_nan_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection on op outputs (on by default)."""
    global _nan_checks
    _nan_checks = bool(enabled)


def nan_checks_enabled() -> bool:
    return _nan_checks


@contextlib.contextmanager
def no_grad():
    """Context manager that suspends graph recording (for inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


def _check_finite(arr: np.ndarray, where: str) -> None:
    if _nan_checks and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value produced by {where}")


class Tensor:
    """Dense float64 array participating in the gradient graph.

    ``grad`` is populated (and accumulated across repeated backward calls)
    only for tensors with ``requires_grad=True`` or tensors on a path from
    such a leaf to the loss.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        _check_finite(self.data, "Tensor()")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------------

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the gradient graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad leaf.

        Repeated calls without a reset keep accumulating into leaf grads;
        grads of recorded intermediates are rebuilt from scratch each pass
        so one pass never re-propagates another's contribution.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        # Iterative post-order walk; recursion would overflow on long
        # unrolled sequences.
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        for node in topo:
            if node._backward is not None:
                node.grad = None
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _reduce_mean(self, axis, keepdims)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        return _reduce_max(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)

    def argmax(self, axis: int = -1) -> np.ndarray:
        return np.argmax(self.data, axis=axis)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, opname: str) -> Tensor:
    _check_finite(data, opname)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


# -- elementwise arithmetic --------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def neg(a: Tensor) -> Tensor:
    data = -a.data

    def backward(g):
        _accumulate(a, -g)

    return _make(data, (a,), backward, "neg")


def absolute(a: Tensor) -> Tensor:
    data = np.abs(a.data)
    sign = np.sign(a.data)

    def backward(g):
        _accumulate(a, g * sign)

    return _make(data, (a,), backward, "abs")


# -- matrix product ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. ``a`` may be 2-D or 3-D (leading batch axis), ``b`` 2-D."""
    a, b = _lift(a), _lift(b)
    if b.ndim != 2 or a.ndim not in (2, 3):
        raise ShapeError(f"matmul supports (m,k)@(k,n) or (b,m,k)@(k,n), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            k = a.shape[-1]
            n = g.shape[-1]
            _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    return _make(data, (a, b), backward, "matmul")


# -- nonlinearities ----------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), backward, "relu")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * data)

    return _make(data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(data, (a,), backward, "log")


# -- shape manipulation ------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, cuts, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accumulate(t, piece)

    return _make(data, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = _lift(t)
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
        expanded.append(_reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def _reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)
    old_shape = a.shape

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return _make(data, (a,), backward, "reshape")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; gradient scatters back zero-padded."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _make(data, (a,), backward, "slice_axis")


# -- reductions --------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape) if keepdims else np.full(shape, g)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _reduce_sum(a: Tensor, axis, keepdims: bool) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims).copy())

    return _make(np.asarray(data), (a,), backward, "sum")


def _reduce_mean(a: Tensor, axis, keepdims: bool) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in ((axis,) if isinstance(axis, int) else axis)]
    )

    def backward(g):
        _accumulate(a, _expand_reduced(g, a.shape, axis, keepdims) / count)

    return _make(np.asarray(data), (a,), backward, "mean")


def _reduce_max(a: Tensor, axis: int, keepdims: bool) -> Tensor:
    data = a.data.max(axis=axis, keepdims=keepdims)
    # First occurrence wins on ties, which keeps backward deterministic.
    arg = np.expand_dims(np.argmax(a.data, axis=axis), axis)

    def backward(g):
        full = np.zeros_like(a.data)
        g_arr = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(full, arg, g_arr, axis)
        _accumulate(a, full)

    return _make(np.asarray(data), (a,), backward, "max")


# -- softmax / losses --------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - inner))

    return _make(data, (a,), backward, "softmax")


def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer ``targets`` under softmax(logits).

    ``logits`` is (batch, classes); ``targets`` an int array of class
    indices. ``reduction`` is "mean" for a scalar or "none" for the
    per-example vector.
    """
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2-D logits, got {logits.shape}")
    batch, n_classes = logits.shape
    if targets.shape != (batch,):
        raise ShapeError(f"targets shape {targets.shape} does not match batch {batch}")
    if targets.min() < 0 or targets.max() >= n_classes:
        raise IndexError(f"target out of range [0, {n_classes})")
    if reduction not in ("mean", "none"):
        raise ValueError(f"unknown reduction {reduction!r}")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=1)) + m[:, 0]
    losses = lse - x[np.arange(batch), targets]
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    if reduction == "mean":
        data = np.asarray(losses.mean())

        def backward(g):
            d = probs.copy()
            d[np.arange(batch), targets] -= 1.0
            _accumulate(logits, d * (g / batch))

    else:
        data = losses

        def backward(g):
            d = probs.copy()
            d[np.arange(batch), targets] -= 1.0
            _accumulate(logits, d * g[:, None])

    return _make(data, (logits,), backward, "cross_entropy")


# -- lookups -----------------------------------------------------------------


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer ``ids``; grads scatter-add back."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")
    data = table.data[ids]

    def backward(g):
        # scatter straight into the table's grad to avoid a dense temporary
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))

    return _make(data, (table,), backward, "embedding_lookup")


def pick(a: Tensor, idx) -> Tensor:
    """Gather one entry per row: out[i] = a[i, idx[i]]."""
    idx = np.asarray(idx)
    batch = a.shape[0]
    if idx.shape != (batch,):
        raise ShapeError(f"pick index shape {idx.shape} does not match batch {batch}")
    if idx.min() < 0 or idx.max() >= a.shape[1]:
        raise IndexError(f"pick index out of range [0, {a.shape[1]})")
    rows = np.arange(batch)
    data = a.data[rows, idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        _accumulate(a, full)

    return _make(data, (a,), backward, "pick")


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named parameter dict.

    Moment arrays mirror each parameter's shape; the shared step counter
    strictly increases with every :meth:`step`. Parameters named in
    :meth:`set_frozen` are skipped entirely, leaving their values (and
    moments) bitwise unchanged.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._frozen: set[str] = set()

    def set_frozen(self, names: Iterable[str]) -> None:
        """Permanently exclude parameters from future updates."""
        self._frozen.update(names)

    @property
    def frozen(self) -> frozenset[str]:
        return frozenset(self._frozen)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if name in self._frozen or p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    # Checkpoint support: moments and counter as plain arrays/ints.

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self._m[name]
            out[f"adam.v.{name}"] = self._v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self._m[name] = np.array(arrays[f"adam.m.{name}"], dtype=np.float64)
            self._v[name] = np.array(arrays[f"adam.v.{name}"], dtype=np.float64)
        self.step_count = int(step_count)
