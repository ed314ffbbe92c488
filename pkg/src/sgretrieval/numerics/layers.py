"""Learnable layers built on the autodiff tensor: linear, MLP, layer norm,
dropout, multi-head attention, and pre-norm transformer encoder blocks.

Layers accept inputs with arbitrary leading batch dims; the feature axis is
always last. Initialization: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
linear weights and biases.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import HeadsDoNotDivide, ShapeMismatch
from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor."""

    def __init__(self, data, dtype=np.float32):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal container: child modules and parameters found by attribute walk."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out: list[tuple[str, Parameter]] = []
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out.append((key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Parameter):
                        out.append((f"{key}.{i}", item))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> list["Module"]:
        found = [self]
        for value in vars(self).values():
            if isinstance(value, Module):
                found.extend(value.modules())
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        found.extend(item.modules())
        return found

    def train(self, flag: bool = True) -> None:
        for m in self.modules():
            if hasattr(m, "training"):
                m.training = flag

    def eval(self) -> None:
        self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _uniform_init(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(_uniform_init(rng, in_dim, (in_dim, out_dim), dtype), dtype=dtype)
        self.bias = Parameter(_uniform_init(rng, in_dim, (out_dim,), dtype), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"Linear expects last dim {self.in_dim}, got {x.shape}")
        return T.add(T.matmul(x, self.weight), self.bias)


class MLP(Module):
    """Stack of linears with a nonlinearity between them (none after the last)."""

    def __init__(self, dims, rng: np.random.Generator, activation: str = "gelu", dtype=np.float32):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.layers = [Linear(dims[i], dims[i + 1], rng, dtype=dtype) for i in range(len(dims) - 1)]
        self.activation = activation

    def _act(self, x: Tensor) -> Tensor:
        if self.activation == "gelu":
            return T.gelu(x)
        if self.activation == "leaky_relu":
            return T.leaky_relu(x, 0.2)
        raise ValueError(f"unknown activation {self.activation!r}")

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = self._act(layer(x))
        return self.layers[-1](x)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32):
        self.gamma = Parameter(np.ones(dim, dtype=dtype), dtype=dtype)
        self.beta = Parameter(np.zeros(dim, dtype=dtype), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layer_norm(x), self.gamma), self.beta)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, self.rng, self.training)


class MultiHeadAttention(Module):
    """Scaled dot-product attention, heads concatenated and output-projected.

    Query/key/value shapes: (..., m, d), (..., n, d), (..., n, d). The per-row
    attention weights of the most recent forward are kept (detached) on
    ``last_attn`` for inspection.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads != 0:
            raise HeadsDoNotDivide(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(dim, dim, rng, dtype=dtype)
        self.wk = Linear(dim, dim, rng, dtype=dtype)
        self.wv = Linear(dim, dim, rng, dtype=dtype)
        self.wo = Linear(dim, dim, rng, dtype=dtype)
        self.last_attn: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        # (..., n, d) -> (..., heads, n, head_dim)
        batch = x.shape[:-2]
        n = x.shape[-2]
        x = T.reshape(x, batch + (n, self.heads, self.head_dim))
        axes = tuple(range(len(batch))) + (len(batch) + 1, len(batch), len(batch) + 2)
        return T.transpose(x, axes)

    def __call__(self, query: Tensor, key: Tensor, value: Tensor) -> Tensor:
        if query.shape[-1] != self.dim or key.shape[-1] != self.dim or value.shape[-1] != self.dim:
            raise ShapeMismatch("attention inputs must have the model dim on the last axis")
        if key.shape[-2] != value.shape[-2]:
            raise ShapeMismatch("key and value must have the same row count")
        batch = query.shape[:-2]
        m = query.shape[-2]
        q = self._split(self.wq(query))
        k = self._split(self.wk(key))
        v = self._split(self.wv(value))
        kt_axes = tuple(range(q.data.ndim - 2)) + (q.data.ndim - 1, q.data.ndim - 2)
        scores = T.mul(T.matmul(q, T.transpose(k, kt_axes)), 1.0 / math.sqrt(self.head_dim))
        attn = T.softmax(scores)
        self.last_attn = attn.data.copy()
        ctx = T.matmul(attn, v)  # (..., heads, m, head_dim)
        axes = tuple(range(len(batch))) + (len(batch) + 1, len(batch), len(batch) + 2)
        ctx = T.reshape(T.transpose(ctx, axes), batch + (m, self.dim))
        return self.wo(ctx)


class TransformerEncoderBlock(Module):
    """Pre-norm block: self-attention and a width-4d GELU feed-forward, both residual."""

    def __init__(self, dim: int, heads: int, p_drop: float, rng: np.random.Generator, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype=dtype)
        self.attn = MultiHeadAttention(dim, heads, rng, dtype=dtype)
        self.drop1 = Dropout(p_drop, rng)
        self.ln2 = LayerNorm(dim, dtype=dtype)
        self.ffn = MLP([dim, 4 * dim, dim], rng, activation="gelu", dtype=dtype)
        self.drop2 = Dropout(p_drop, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = T.add(x, self.drop1(self.attn(h, h, h)))
        x = T.add(x, self.drop2(self.ffn(self.ln2(x))))
        return x


class TransformerEncoder(Module):
    """Stack of pre-norm blocks with a final layer norm. No positional encoding:
    the encoder is permutation-equivariant over input rows by construction."""

    def __init__(self, dim: int, layers: int, heads: int, p_drop: float,
                 rng: np.random.Generator, dtype=np.float32):
        if layers < 1:
            raise ValueError("transformer encoder needs at least 1 layer")
        self.blocks = [TransformerEncoderBlock(dim, heads, p_drop, rng, dtype=dtype)
                       for _ in range(layers)]
        self.final_norm = LayerNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)
