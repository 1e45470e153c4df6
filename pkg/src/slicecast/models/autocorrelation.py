"""Auto-correlation attention: period-based delay scoring plus time-delay aggregation."""

from __future__ import annotations

import math

import numpy as np

from ..numerics import Tensor, XorShift64Star, correlation_scores, delay_aggregate, softmax, take_along_axis
from ..numerics.tensor import ShapeError
from .layers import Linear, Module, match_length, merge_heads, split_heads


def select_delays(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores along the last axis; ties go to the smaller delay."""
    order = np.argsort(-scores, axis=-1, kind="stable")
    return order[..., :k]


def autocorr_attention(q: Tensor, k: Tensor, v: Tensor, factor: float = 1.0, return_weights: bool = False):
    """Auto-correlation attention on ``(..., L, d)`` inputs.

    Each lag ``tau`` is scored by the channel-mean circular cross-correlation
    of ``q`` with ``k``. The ``floor(factor * ln L)`` best lags are kept, their
    scores softmax-normalised, and the output is the weighted sum of ``v``
    rolled by each lag. Lag selection is a constant as far as gradients go.
    """
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError(f"autocorr_attention: q {q.shape}, k {k.shape}, v {v.shape} must match")
    n = q.shape[-2]
    if n < 4:
        raise ValueError(f"autocorr_attention needs at least 4 time steps, got {n}")
    top_k = max(1, int(math.floor(factor * math.log(n))))
    scores = correlation_scores(q, k)
    delays = select_delays(scores.data, top_k)
    weights = softmax(take_along_axis(scores, delays, axis=-1), axis=-1)
    out = delay_aggregate(v, weights, delays)
    if return_weights:
        return out, weights, delays
    return out


class AutoCorrelationLayer(Module):
    """Multi-head wrapper: projections, per-head auto-correlation, output projection.

    Projected keys/values shorter than the queries are zero-padded; longer
    ones are truncated, so delays are always scored at query length.
    """

    def __init__(self, d_model: int, n_heads: int, factor: float, rng: XorShift64Star):
        super().__init__()
        self.n_heads = n_heads
        self.factor = factor
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)

    def forward(self, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        n = queries.shape[-2]
        q = split_heads(self.query(queries), self.n_heads)
        k = split_heads(match_length(self.key(keys), n), self.n_heads)
        v = split_heads(match_length(self.value(values), n), self.n_heads)
        return self.out(merge_heads(autocorr_attention(q, k, v, self.factor)))
