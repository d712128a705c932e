"""Transformer building blocks on top of :mod:`stower.tensor`."""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .tensor import Tensor, parameter


class Module:
    """Parameter container.

    Public attributes holding Tensors or Modules (or lists of Modules) are
    tracked; attributes starting with an underscore are references only.
    """

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Tensor]:
        return [p for p in self.parameters() if p.requires_grad]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def checksum(self) -> str:
        """SHA-256 over parameter names and raw bytes."""
        h = hashlib.sha256()
        for name, p in sorted(self.named_parameters()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


def _init(rng: np.random.Generator, shape, std: float) -> Tensor:
    return parameter(rng.normal(0.0, std, size=shape))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 std: float | None = None):
        self.weight = _init(rng, (d_in, d_out), std if std is not None else 1.0 / np.sqrt(d_in))
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.weight = parameter(np.ones(d))
        self.bias = parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, std: float = 0.1):
        self.weight = _init(rng, (n, d), std)

    def __call__(self, ids) -> Tensor:
        return T.embedding(self.weight, ids)


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle)).astype(np.float32)


def attention_bias(pad_mask: np.ndarray | None, length: int, causal: bool = False,
                   dtype=np.float32) -> np.ndarray | None:
    """Additive attention bias of shape [B or 1, 1, L, L]; -1e9 on blocked keys.

    ``pad_mask`` is [B, L] with 1 for real tokens and 0 for padding.
    """
    bias = None
    if pad_mask is not None:
        keys = np.asarray(pad_mask, dtype=bool)
        bias = np.where(keys[:, None, None, :], 0.0, -1e9).astype(dtype)
    if causal:
        tri = np.triu(np.full((length, length), -1e9, dtype=dtype), k=1)[None, None]
        bias = tri if bias is None else bias + tri
    return bias


class MultiHeadAttention(Module):
    """Scaled dot-product self-attention.

    The last forward pass keeps per-head queries and keys in ``last_qk`` so
    callers can recompute attention distributions under another scaling.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = Linear(d_model, 3 * d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.last_qk = None
        self.last_weights = None

    def __call__(self, x: Tensor, bias: np.ndarray | None = None) -> Tensor:
        B, L, D = x.shape
        H, dh = self.n_heads, self.d_head
        qkv = self.qkv(x).reshape(B, L, 3, H, dh)
        qkv = T.transpose(qkv, (2, 0, 3, 1, 4))  # [3, B, H, L, dh]
        q, k, v = qkv[0], qkv[1], qkv[2]
        self.last_qk = (q.data, k.data)
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * float(1.0 / np.sqrt(dh))
        if bias is not None:
            scores = scores + bias
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = T.matmul(weights, v)  # [B, H, L, dh]
        ctx = T.transpose(ctx, (0, 2, 1, 3)).reshape(B, L, D)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ln2 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)

    def __call__(self, x: Tensor, bias: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), bias)
        return x + self.ffn(self.ln2(x))
