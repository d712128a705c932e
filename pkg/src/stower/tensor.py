"""Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array and records the operation that produced it.
Calling `backward()` on a scalar walks the recorded graph in reverse
topological order and accumulates gradients into every leaf created with
``requires_grad=True``.

Compute happens in float32 by default; reductions accumulate in float64.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for newly created tensors."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, evaluation)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = ""):
        if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- properties -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for all reachable leaves."""
        if self.data.size != 1 and grad is None:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data) if grad is None
                 else np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = g.astype(node.data.dtype, copy=True)
                else:
                    node.grad += g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating):
        return Tensor(x)
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)


def _make(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, False, (), None, op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64).astype(grad.dtype)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64).astype(grad.dtype)
    return grad.reshape(shape)


def _reduce_sum(x: np.ndarray, axis=None, keepdims=False) -> np.ndarray:
    return np.sum(x, axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.dtype)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(out, (a, b), backward, "div")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)
    return _make(out, (a,), backward, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _np_sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    """Numerically stable log(sigmoid(a))."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0) - np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _np_sigmoid(-x),), "log_sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    return _make(out, (a,), lambda g: (g * (a.data > 0),), "relu")


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)
    return _make(out, (a,), backward, "gelu")


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = _reduce_sum(a.data, axis, keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)
    return _make(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing (slices, integers, integer arrays)."""
    a = as_tensor(a)
    out = a.data[index]

    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return _make(np.array(out), (a,), backward, "getitem")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))
    return _make(out, tensors, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _make(out, tensors, backward, "stack")


def stop_gradient(a) -> Tensor:
    """Same values, no gradient flows back through the result."""
    a = as_tensor(a)
    return Tensor(a.data, requires_grad=False, op="stop_gradient")


# ---------------------------------------------------------------------------
# linear algebra and neural-net primitives
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            bd = b.data if b.ndim > 1 else b.data[:, None]
            gg = g if b.ndim > 1 else g[..., None]
            ga = _unbroadcast(np.matmul(gg, np.swapaxes(bd, -1, -2)), a.shape)
        if b.requires_grad and b.ndim == 2 and a.ndim > 2:
            # shared weight: fold the batch axes into one GEMM
            gb = np.matmul(a.data.reshape(-1, a.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        elif b.requires_grad:
            ad = a.data if a.ndim > 1 else a.data[None, :]
            gg = g if a.ndim > 1 else g[..., None, :]
            if b.ndim == 1:
                gg = gg[..., None]
            gb = np.matmul(np.swapaxes(ad, -1, -2), gg)
            if b.ndim == 1:
                gb = gb[..., 0]
            gb = _unbroadcast(gb, b.shape)
        return ga, gb
    return _make(out, (a, b), backward, "matmul")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} out of range for {a.ndim}-d tensor")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / _reduce_sum(e, axis, True)

    def backward(g):
        return (out * (g - _reduce_sum(g * out, axis, True)),)
    return _make(out, (a,), backward, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"log_softmax axis {axis} out of range for {a.ndim}-d tensor")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(_reduce_sum(np.exp(shifted), axis, True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * _reduce_sum(g, axis, True),)
    return _make(out, (a,), backward, "log_softmax")


def layer_norm(x, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the optional affine map."""
    x = as_tensor(x)
    xd = x.data
    mu = np.mean(xd, axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
    centred = xd - mu
    var = np.mean(centred * centred, axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv_std
    parents = [x]
    out = xhat
    if weight is not None:
        weight = as_tensor(weight)
        bias = as_tensor(bias)
        parents += [weight, bias]
        out = xhat * weight.data + bias.data
    def backward(g):
        gw = gb = None
        if weight is not None:
            gw = _unbroadcast(g * xhat, weight.shape) if weight.requires_grad else None
            gb = _unbroadcast(g, bias.shape) if bias.requires_grad else None
            g = g * weight.data
        gx = None
        if x.requires_grad:
            m1 = np.mean(g, axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
            m2 = np.mean(g * xhat, axis=-1, keepdims=True, dtype=np.float64).astype(xd.dtype)
            gx = inv_std * (g - m1 - xhat * m2)
        return (gx, gw, gb) if weight is not None else (gx,)
    return _make(out, parents, backward, "layer_norm")


def embedding(weight, ids) -> Tensor:
    """Row lookup ``weight[ids]``."""
    weight = as_tensor(weight)
    ids = np.asarray(ids, dtype=np.int64)
    out = weight.data[ids]

    def backward(g):
        full = np.zeros_like(weight.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
        return (full,)
    return _make(out, (weight,), backward, "embedding")


def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` has shape [..., V]; ``targets`` the leading shape. ``weights``
    (same shape as targets) masks positions out of the mean, e.g. padding.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape[:-1]}")
    if targets.size == 0:
        raise ValueError("cross_entropy needs at least one position")
    if targets.min() < 0 or targets.max() >= vocab:
        raise ValueError(f"target ids must lie in [0, {vocab})")
    flat = logits.data.reshape(-1, vocab)
    t = targets.reshape(-1)
    w = np.ones(t.shape, dtype=flat.dtype) if weights is None else \
        np.asarray(weights, dtype=flat.dtype).reshape(-1)
    total = float(w.sum(dtype=np.float64))
    if total <= 0:
        raise ValueError("cross_entropy: all positions are masked out")
    shifted = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, dtype=np.float64)).astype(flat.dtype)
    nll = lse - shifted[np.arange(t.size), t]
    out = np.asarray(np.sum(nll * w, dtype=np.float64) / total, dtype=flat.dtype)

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(t.size), t] -= 1.0
        probs *= (w / total)[:, None] * g
        return (probs.reshape(logits.shape),)
    return _make(out, (logits,), backward, "cross_entropy")


def mean_pool(x, mask) -> Tensor:
    """Average over axis 1 of [B, L, D] using a [B, L] 0/1 mask."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=x.dtype)[:, :, None]
    counts = np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return sum_(x * (m / counts), axis=1)


def cosine_similarity(a, b, axis: int = -1, eps: float = 1e-8) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    dot = sum_(a * b, axis=axis)
    na = sum_(a * a, axis=axis) ** 0.5
    nb = sum_(b * b, axis=axis) ** 0.5
    return dot / (na * nb + eps)


# ---------------------------------------------------------------------------
# gradient utilities
# ---------------------------------------------------------------------------

def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    params = [p for p in params if p.grad is not None]
    total = float(np.sqrt(sum(np.sum(p.grad.astype(np.float64) ** 2) for p in params)))
    if total > max_norm and total > 0:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total
