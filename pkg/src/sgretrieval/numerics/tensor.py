"""Dense float tensors with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (float32 by default, float64 for gradient
checking). Each op records a backward closure on its output; calling
``backward()`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that
requires them. A backward tape is single-use: the closures are dropped
after the walk and a second ``backward()`` raises.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import BackwardWithoutForward, ShapeMismatch

_DEBUG_CHECK_FINITE = False


def set_debug(flag: bool) -> None:
    """Enable per-op finiteness checks (slow; for tests)."""
    global _DEBUG_CHECK_FINITE
    _DEBUG_CHECK_FINITE = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        if isinstance(data, np.ndarray):
            self.data = data if data.dtype == dtype else data.astype(dtype)
        else:
            self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from a scalar (size-1) tensor."""
        if self.data.size != 1:
            raise ShapeMismatch(f"backward() requires a scalar loss, got shape {self.shape}")
        if self._done:
            raise BackwardWithoutForward("backward tape already consumed; rerun the forward pass")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
        # drop closures so intermediate buffers free up and reuse is an error
        for node in order:
            node._backward = None
            node._parents = ()
        self._done = True


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # grads are never mutated in place, so sharing/views are safe here
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if g.dtype == t.data.dtype else g.astype(t.data.dtype)
    else:
        t.grad = t.grad + g


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if _DEBUG_CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._done = False
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast(a, b, "add")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast(a, b, "sub")

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    _check_broadcast(a, b, "mul")

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dims broadcast numpy-style."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul operands must have ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims {a.shape} @ {b.shape}")

    def backward(g):
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} to {shape}") from None

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))

    return _make(np.ascontiguousarray(data), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        count = a.data.size

        def backward(g):
            _accumulate(a, np.full_like(a.data, g / count))

        return _make(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), backward)

    count = a.shape[axis]

    def backward(g):
        _accumulate(a, np.repeat(np.expand_dims(g, axis), count, axis=axis) / count)

    return _make(a.data.mean(axis=axis), (a,), backward)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        def backward(g):
            _accumulate(a, np.full_like(a.data, g))

        return _make(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), backward)

    count = a.shape[axis]

    def backward(g):
        _accumulate(a, np.repeat(np.expand_dims(g, axis), count, axis=axis))

    return _make(a.data.sum(axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalizations


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)

    def backward(g):
        _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    # tanh approximation; smooth, so finite differences stay well behaved
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner))

    return _make(0.5 * x * (1.0 + t), (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _make(y, (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def backward(g):
        n = a.shape[-1]
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * y).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (g - g_mean - y * gy_mean))

    return _make(y.astype(a.data.dtype), (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def backward(g):
        _accumulate(a, g * keep)

    return _make(a.data * keep, (a,), backward)


# ---------------------------------------------------------------------------
# indexed ops used by graph attention


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """out[k] = a[index[k]] along axis 0."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, index, g)
        _accumulate(a, acc)

    return _make(a.data[index], (a,), backward)


def scatter_add_rows(a: Tensor, index: np.ndarray, num_rows: int) -> Tensor:
    """out[i] = sum of a[k] over k with index[k] == i."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((num_rows,) + a.shape[1:], dtype=a.data.dtype)
    np.add.at(out, index, a.data)

    def backward(g):
        _accumulate(a, g[index])

    return _make(out, (a,), backward)


def segment_softmax(a: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over axis-0 groups given by ``segments``, per trailing index."""
    segments = np.asarray(segments, dtype=np.int64)
    tail = a.shape[1:]
    seg_max = np.full((num_segments,) + tail, -np.inf, dtype=a.data.dtype)
    np.maximum.at(seg_max, segments, a.data)
    e = np.exp(a.data - seg_max[segments])
    denom = np.zeros((num_segments,) + tail, dtype=a.data.dtype)
    np.add.at(denom, segments, e)
    y = e / denom[segments]

    def backward(g):
        gy = g * y
        seg_dot = np.zeros((num_segments,) + tail, dtype=a.data.dtype)
        np.add.at(seg_dot, segments, gy)
        _accumulate(a, gy - y * seg_dot[segments])

    return _make(y, (a,), backward)


def l2_scale(a: Tensor, target_norm: float) -> Tensor:
    """Rescale the whole tensor to a fixed L2 norm."""
    n = float(np.linalg.norm(a.data))
    if n < 1e-12:
        raise ValueError("cannot rescale a zero-norm tensor")
    y = (target_norm / n) * a.data

    def backward(g):
        dot = float((g * a.data).sum())
        _accumulate(a, (target_norm / n) * g - (target_norm * dot / n**3) * a.data)

    return _make(y.astype(a.data.dtype), (a,), backward)


# convenience operators

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
