"""Point-wise self-attention encoder-decoder baseline (canonical dot-product attention)."""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor, XorShift64Star, concat
from ..numerics.tensor import ShapeError
from .config import ModelConfig
from .layers import DataEmbedding, Dropout, FeedForward, LayerNorm, Linear, Module, merge_heads, scaled_dot_attention, split_heads


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: XorShift64Star, causal: bool = False):
        super().__init__()
        self.n_heads = n_heads
        self.causal = causal
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor, return_weights: bool = False):
        q = split_heads(self.query(queries), self.n_heads)
        k = split_heads(self.key(keys), self.n_heads)
        v = split_heads(self.value(values), self.n_heads)
        out, weights = scaled_dot_attention(q, k, v, causal=self.causal, return_weights=True)
        out = self.out(merge_heads(out))
        return (out, weights) if return_weights else out


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: XorShift64Star):
        super().__init__()
        self.attention = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, cfg.dropout)
        self.norm2 = LayerNorm(cfg.d_model)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.drop(self.attention(x, x, x)))
        return self.norm2(x + self.ff(x))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: XorShift64Star):
        super().__init__()
        self.self_attention = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, causal=True)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attention = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, cfg.dropout)
        self.norm3 = LayerNorm(cfg.d_model)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x: Tensor, memory: Tensor) -> Tensor:
        x = self.norm1(x + self.drop(self.self_attention(x, x, x)))
        x = self.norm2(x + self.drop(self.cross_attention(x, memory, memory)))
        return self.norm3(x + self.ff(x))


class PointwiseAttentionModel(Module):
    """Same interface as :class:`AutoformerModel`, without decomposition.

    The decoder input is the last ``label_len`` context steps followed by
    zero placeholders for the horizon; the horizon slots are read off a
    linear projection of the decoder output.
    """

    tag = "pointwise"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = XorShift64Star(config.seed)
        self.enc_embedding = DataEmbedding(config.n_series, config.d_model, rng, config.dropout)
        self.dec_embedding = DataEmbedding(config.n_series, config.d_model, rng, config.dropout)
        self.encoder = [EncoderLayer(config, rng) for _ in range(config.encoder_layers)]
        self.encoder_norm = LayerNorm(config.d_model)
        self.decoder = [DecoderLayer(config, rng) for _ in range(config.decoder_layers)]
        self.decoder_norm = LayerNorm(config.d_model)
        self.projection = Linear(config.d_model, config.n_series, rng)

    def forward(self, context) -> Tensor:
        cfg = self.config
        x = context if isinstance(context, Tensor) else Tensor(context)
        if x.ndim == 2:
            return self.forward(x.reshape(1, *x.shape)).reshape(cfg.horizon, cfg.n_series)
        if x.shape[1:] != (cfg.input_len, cfg.n_series):
            raise ShapeError(f"context shape {x.shape} does not match (batch, {cfg.input_len}, {cfg.n_series})")
        b = x.shape[0]
        start = cfg.input_len - cfg.label_len
        dec_in = concat([x[:, start:, :], Tensor(np.zeros((b, cfg.horizon, cfg.n_series)))], axis=1)
        memory = self.enc_embedding(x)
        for layer in self.encoder:
            memory = layer(memory)
        memory = self.encoder_norm(memory)
        h = self.dec_embedding(dec_in)
        for layer in self.decoder:
            h = layer(h, memory)
        out = self.projection(self.decoder_norm(h))
        return out[:, -cfg.horizon :, :]


def persistence_forecast(context, horizon: int) -> np.ndarray:
    """Repeat the last observed row ``horizon`` times; works on ``(L, C)`` or ``(B, L, C)``."""
    arr = context.data if isinstance(context, Tensor) else np.asarray(context, dtype=np.float64)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    last = arr[..., -1:, :]
    reps = [1] * arr.ndim
    reps[-2] = horizon
    return np.tile(last, reps)


class PersistenceModel(Module):
    """Parameter-free model wrapper so the baseline fits the same training/eval path."""

    tag = "persistence"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config

    def forward(self, context) -> Tensor:
        return Tensor(persistence_forecast(context, self.config.horizon))
