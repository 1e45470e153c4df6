"""Real FFT, circular auto/cross-correlation, and the two differentiable
kernels the auto-correlation attention is built from."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = [
    "rfft",
    "irfft",
    "autocorrelation",
    "cross_correlation",
    "correlation_scores",
    "delay_aggregate",
]


def rfft(x, axis: int = -1) -> np.ndarray:
    """Non-negative frequency bins of a real sequence (``L // 2 + 1`` of them).

    Exact at any length ``L >= 2``; no zero padding is applied, so circular
    identities hold at ``L`` itself.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 2:
        raise ValueError(f"rfft needs at least 2 samples, got {x.shape[axis]}")
    return np.fft.rfft(x, axis=axis)


def irfft(bins, n: int, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`rfft` for a length-``n`` real sequence."""
    if n < 2:
        raise ValueError(f"irfft needs n >= 2, got {n}")
    bins = np.asarray(bins)
    if bins.shape[axis] != n // 2 + 1:
        raise ShapeError(f"irfft: expected {n // 2 + 1} bins for n={n}, got {bins.shape[axis]}")
    return np.fft.irfft(bins, n=n, axis=axis)


def autocorrelation(x, axis: int = 0) -> np.ndarray:
    """Circular autocorrelation ``R[tau] = mean_t x[t] * x[(t + tau) % L]``.

    Computed through the power spectrum (Wiener-Khinchin), O(L log L).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    spec = rfft(x, axis=axis)
    return irfft(spec.real**2 + spec.imag**2, n, axis=axis) / n


def cross_correlation(q, k, axis: int = 0) -> np.ndarray:
    """Circular cross-correlation ``R[tau] = mean_t q[t] * k[(t + tau) % L]``."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape:
        raise ShapeError(f"cross_correlation: shapes {q.shape} and {k.shape} differ")
    n = q.shape[axis]
    return irfft(np.conj(rfft(q, axis=axis)) * rfft(k, axis=axis), n, axis=axis) / n


def correlation_scores(q: Tensor, k: Tensor) -> Tensor:
    """Delay scores for ``(..., L, d)`` inputs, averaged over the ``d`` channels.

    Returns ``(..., L)`` where entry ``tau`` is the channel-mean circular
    cross-correlation of ``q`` against ``k`` at lag ``tau``.
    """
    if q.shape != k.shape:
        raise ShapeError(f"correlation_scores: q shape {q.shape} != k shape {k.shape}")
    n, d = q.shape[-2], q.shape[-1]
    qf = rfft(q.data, axis=-2)
    kf = rfft(k.data, axis=-2)
    scores = irfft(np.conj(qf) * kf, n, axis=-2).mean(axis=-1) / n

    def back(g):
        gf = rfft(g, axis=-1)[..., :, None]
        scale = 1.0 / (n * d)
        gq = irfft(np.conj(gf) * kf, n, axis=-2) * scale
        gk = irfft(gf * qf, n, axis=-2) * scale
        return gq, gk

    return Tensor._make(scores, (q, k), back, "correlation_scores")


def delay_aggregate(v: Tensor, weights: Tensor, delays: np.ndarray) -> Tensor:
    """Time-delay aggregation ``out[t] = sum_i w_i * v[(t + delay_i) % L]``.

    ``v`` is ``(..., L, d)``, ``weights`` is ``(..., k)`` and ``delays`` an
    integer array of the same shape as ``weights``. Delays are treated as
    constants; gradients reach ``v`` and ``weights``.
    """
    delays = np.asarray(delays, dtype=np.int64)
    if weights.shape != delays.shape:
        raise ShapeError(f"delay_aggregate: weights shape {weights.shape} != delays shape {delays.shape}")
    if v.shape[:-2] != weights.shape[:-1]:
        raise ShapeError(f"delay_aggregate: leading dims of v {v.shape} and weights {weights.shape} differ")
    n = v.shape[-2]
    steps = np.arange(n)
    vd, wd = v.data, weights.data
    n_delays = delays.shape[-1]
    gathered = []
    out = np.zeros_like(vd)
    for i in range(n_delays):
        idx = (steps + delays[..., i : i + 1]) % n
        vi = np.take_along_axis(vd, idx[..., None], axis=-2)
        gathered.append(vi)
        out += wd[..., i, None, None] * vi

    def back(g):
        gw = np.stack([(g * vi).sum(axis=(-2, -1)) for vi in gathered], axis=-1)
        gv = np.zeros_like(vd)
        for i in range(n_delays):
            idx = (steps - delays[..., i : i + 1]) % n
            gv += wd[..., i, None, None] * np.take_along_axis(g, idx[..., None], axis=-2)
        return gv, gw

    return Tensor._make(out, (v, weights), back, "delay_aggregate")
