"""Parameter containers and the building blocks shared by both transformers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..numerics import Tensor, XorShift64Star, concat, gelu, layer_norm, roll, softmax
from ..numerics.tensor import ShapeError, where_const


class Module:
    """Minimal parameter registry: attributes that are ``Tensor`` parameters or
    ``Module`` children are collected in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(values: np.ndarray) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class Linear(Module):
    """``y = x @ W + b`` with torch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""

    def __init__(self, d_in: int, d_out: int, rng: XorShift64Star, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng.uniform(-bound, bound, (d_in, d_out)))
        self.bias = _param(rng.uniform(-bound, bound, (d_out,))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear: input shape {x.shape} does not match weight shape {self.weight.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.gamma = _param(np.ones(d))
        self.beta = _param(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class SeasonalLayerNorm(LayerNorm):
    """Layer norm followed by removal of the per-feature mean over time."""

    def forward(self, x: Tensor) -> Tensor:
        h = layer_norm(x, self.gamma, self.beta)
        return h - h.mean(axis=-2, keepdims=True)


class Dropout(Module):
    def __init__(self, p: float, rng: XorShift64Star):
        super().__init__()
        self.p = p
        self._gen = np.random.Generator(np.random.PCG64(rng.next_u64())) if p > 0 else None

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        keep = self._gen.random(x.shape) >= self.p
        return x * (keep / (1.0 - self.p))


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: XorShift64Star, dropout: float = 0.0):
        super().__init__()
        self.inner = Linear(d_model, d_ff, rng, bias=False)
        self.outer = Linear(d_ff, d_model, rng, bias=False)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.drop(self.outer(self.drop(gelu(self.inner(x)))))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d_model // 2]
    return pe


class DataEmbedding(Module):
    """Per-step linear value projection (no bias) plus sinusoidal position code."""

    def __init__(self, n_series: int, d_model: int, rng: XorShift64Star, dropout: float = 0.0):
        super().__init__()
        self.value = Linear(n_series, d_model, rng, bias=False)
        self.drop = Dropout(dropout, rng)
        self.d_model = d_model

    def forward(self, x: Tensor) -> Tensor:
        pe = positional_encoding(x.shape[-2], self.d_model)
        return self.drop(self.value(x) + pe)


# ---------------------------------------------------------------------------
# series decomposition


def moving_average_matrix(length: int, kernel: int) -> np.ndarray:
    """``A`` such that ``A @ x`` is the centred moving average of ``x`` with
    edge-replication padding."""
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"moving-average kernel must be odd and >= 3, got {kernel}")
    half = (kernel - 1) // 2
    a = np.zeros((length, length))
    for t in range(length):
        for j in range(t - half, t + half + 1):
            a[t, min(max(j, 0), length - 1)] += 1.0
    return a / kernel


def moving_average(x: np.ndarray, kernel: int) -> np.ndarray:
    """Centred moving average along axis 0 with edge replication."""
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"moving-average kernel must be odd and >= 3, got {kernel}")
    x = np.asarray(x, dtype=np.float64)
    half = (kernel - 1) // 2
    padded = np.concatenate([np.repeat(x[:1], half, axis=0), x, np.repeat(x[-1:], half, axis=0)], axis=0)
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=0)
    return windows.sum(axis=-1) / kernel


def series_decompose(x, kernel: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` (time x width) into ``(seasonal, trend)``.

    The trend is the centred moving average; the seasonal part is the
    residual. The trend is then re-derived from the residual and nudged by
    whole ulps so that ``seasonal + trend`` reproduces ``x`` bit for bit
    wherever float64 admits such a pair.
    """
    x = np.asarray(x, dtype=np.float64)
    seasonal = x - moving_average(x, kernel)
    trend = x - seasonal
    for _ in range(4):
        off = (seasonal + trend) != x
        if not off.any():
            break
        up = (seasonal + trend) < x
        trend = np.where(off, np.nextafter(trend, np.where(up, np.inf, -np.inf)), trend)
    return seasonal, trend


class SeriesDecomposition(Module):
    """Differentiable decomposition over axis -2 of ``(..., time, width)`` tensors."""

    def __init__(self, kernel: int):
        super().__init__()
        self.kernel = kernel
        self._cache: dict[int, np.ndarray] = {}

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        n = x.shape[-2]
        a = self._cache.get(n)
        if a is None:
            a = self._cache[n] = moving_average_matrix(n, self.kernel)
        trend = Tensor(a) @ x
        return x - trend, trend


class CircularConv3(Module):
    """Width-3 circular convolution over time, no bias: ``sum_j roll(x, 1 - j) @ W_j``."""

    def __init__(self, d_in: int, d_out: int, rng: XorShift64Star):
        super().__init__()
        bound = 1.0 / math.sqrt(3 * d_in)
        self.weight = _param(rng.uniform(-bound, bound, (3, d_in, d_out)))

    def forward(self, x: Tensor) -> Tensor:
        w = self.weight
        return roll(x, 1, axis=-2) @ w[0] + x @ w[1] + roll(x, -1, axis=-2) @ w[2]


# ---------------------------------------------------------------------------
# point-wise attention


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False, return_weights: bool = False):
    """Softmax(q k^T / sqrt(d)) v over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: incompatible q {q.shape}, k {k.shape}, v {v.shape}")
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    if causal:
        lq, lk = q.shape[-2], k.shape[-2]
        allowed = np.tril(np.ones((lq, lk), dtype=bool), k=lk - lq)
        scores = where_const(np.broadcast_to(allowed, scores.shape), scores, -np.inf)
    weights = softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def blocked_attention_kernel(q: np.ndarray, k: np.ndarray, v: np.ndarray, block: int = 1024) -> np.ndarray:
    """Forward-only point-wise attention on ``(L, d)`` arrays, computed in row
    blocks so memory stays O(block * L). Same numbers as
    :func:`scaled_dot_attention` up to rounding."""
    out = np.empty((q.shape[0], v.shape[1]))
    kt = k.T * (1.0 / math.sqrt(q.shape[1]))
    for start in range(0, q.shape[0], block):
        s = q[start : start + block] @ kt
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        out[start : start + block] = s @ v
    return out


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, L, d_model) -> (B, H, L, d_head)."""
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def match_length(x: Tensor, length: int) -> Tensor:
    """Zero-pad or truncate axis -2 to ``length``."""
    n = x.shape[-2]
    if n == length:
        return x
    if n > length:
        return x[..., :length, :]
    pad = np.zeros(x.shape[:-2] + (length - n, x.shape[-1]))
    return concat([x, Tensor(pad)], axis=-2)
