"""Decomposition encoder-decoder forecaster with auto-correlation attention."""

from __future__ import annotations

import numpy as np

from ..numerics import Tensor, XorShift64Star, concat
from ..numerics.tensor import ShapeError
from .autocorrelation import AutoCorrelationLayer
from .config import ModelConfig
from .layers import CircularConv3, DataEmbedding, Dropout, FeedForward, Linear, Module, SeasonalLayerNorm, SeriesDecomposition


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: XorShift64Star):
        super().__init__()
        self.attention = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.autocorr_factor, rng)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, cfg.dropout)
        self.decomp1 = SeriesDecomposition(cfg.moving_avg_kernel)
        self.decomp2 = SeriesDecomposition(cfg.moving_avg_kernel)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop(self.attention(x, x, x))
        x, _ = self.decomp1(x)
        x, _ = self.decomp2(x + self.ff(x))
        return x


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: XorShift64Star):
        super().__init__()
        self.self_attention = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.autocorr_factor, rng)
        self.cross_attention = AutoCorrelationLayer(cfg.d_model, cfg.n_heads, cfg.autocorr_factor, rng)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng, cfg.dropout)
        self.decomp1 = SeriesDecomposition(cfg.moving_avg_kernel)
        self.decomp2 = SeriesDecomposition(cfg.moving_avg_kernel)
        self.decomp3 = SeriesDecomposition(cfg.moving_avg_kernel)
        self.trend_projection = CircularConv3(cfg.d_model, cfg.n_series, rng)
        self.drop = Dropout(cfg.dropout, rng)

    def forward(self, x: Tensor, memory: Tensor) -> tuple[Tensor, Tensor]:
        x = x + self.drop(self.self_attention(x, x, x))
        x, trend1 = self.decomp1(x)
        x = x + self.drop(self.cross_attention(x, memory, memory))
        x, trend2 = self.decomp2(x)
        x, trend3 = self.decomp3(x + self.ff(x))
        return x, self.trend_projection(trend1 + trend2 + trend3)


class AutoformerModel(Module):
    """Maps a scaled context ``(B, L, C)`` to a forecast ``(B, H, C)``.

    The decoder starts from the last ``label_len`` seasonal/trend values of
    the context, followed by zeros (seasonal) and the context mean (trend)
    over the horizon. Every decoder layer adds its extracted trend to the
    running trend; the output is trend plus the projected seasonal stream.
    """

    tag = "autoformer"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = XorShift64Star(config.seed)
        self.enc_embedding = DataEmbedding(config.n_series, config.d_model, rng, config.dropout)
        self.dec_embedding = DataEmbedding(config.n_series, config.d_model, rng, config.dropout)
        self.encoder = [EncoderLayer(config, rng) for _ in range(config.encoder_layers)]
        self.encoder_norm = SeasonalLayerNorm(config.d_model)
        self.decoder = [DecoderLayer(config, rng) for _ in range(config.decoder_layers)]
        self.decoder_norm = SeasonalLayerNorm(config.d_model)
        self.projection = Linear(config.d_model, config.n_series, rng)
        self.decomp = SeriesDecomposition(config.moving_avg_kernel)

    def decoder_init(self, context: Tensor) -> tuple[Tensor, Tensor]:
        cfg = self.config
        b, _, c = context.shape
        seasonal, trend = self.decomp(context)
        mean = context.mean(axis=1, keepdims=True).broadcast_to((b, cfg.horizon, c))
        zeros = Tensor(np.zeros((b, cfg.horizon, c)))
        start = cfg.input_len - cfg.label_len
        seasonal_init = concat([seasonal[:, start:, :], zeros], axis=1)
        trend_init = concat([trend[:, start:, :], mean], axis=1)
        return seasonal_init, trend_init

    def forward(self, context) -> Tensor:
        cfg = self.config
        x = context if isinstance(context, Tensor) else Tensor(context)
        if x.ndim == 2:
            return self.forward(x.reshape(1, *x.shape)).reshape(cfg.horizon, cfg.n_series)
        if x.shape[1:] != (cfg.input_len, cfg.n_series):
            raise ShapeError(f"context shape {x.shape} does not match (batch, {cfg.input_len}, {cfg.n_series})")
        seasonal_init, trend = self.decoder_init(x)
        memory = self.enc_embedding(x)
        for layer in self.encoder:
            memory = layer(memory)
        memory = self.encoder_norm(memory)
        h = self.dec_embedding(seasonal_init)
        for layer in self.decoder:
            h, residual_trend = layer(h, memory)
            trend = trend + residual_trend
        out = trend + self.projection(self.decoder_norm(h))
        return out[:, -cfg.horizon :, :]
