"""scikit-learn style forecasters wrapping scaling, windowing, training and inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .models import ModelConfig, build_model
from .preprocess import SeriesFrame, _as_frame, fit_scaler, transform
from .train_eval import TrainOptions, evaluate, make_windows, predict_windows, train


@dataclass(frozen=True, eq=False)
class ForecastResult:
    slice_id: str
    issued_at: int
    horizon: int
    predicted: np.ndarray
    model: str

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=np.float64).reshape(-1)
        if pred.size != self.horizon:
            raise ValueError(f"forecast for {self.slice_id} has {pred.size} values, horizon is {self.horizon}")
        if not np.all(np.isfinite(pred)):
            raise ValueError(f"forecast for {self.slice_id} contains non-finite values")
        object.__setattr__(self, "predicted", pred)

    @property
    def peak(self) -> float:
        return float(self.predicted.max())

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "issued_at": int(self.issued_at),
            "horizon": self.horizon,
            "predicted": self.predicted.tolist(),
            "model": self.model,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastResult":
        return cls(d["slice_id"], int(d["issued_at"]), int(d["horizon"]), np.asarray(d["predicted"]), d["model"])


class _Forecaster(BaseEstimator):
    """Shared fit/predict logic; subclasses only pick the network.

    ``fit`` takes unscaled training rows (a :class:`SeriesFrame` or a
    ``(rows, series)`` array). A per-column scaler is fitted on exactly those
    rows; validation rows passed as ``X_val`` are scaled with it and drive
    early stopping. ``predict`` returns original units.
    """

    _tag = ""

    def __init__(
        self,
        input_len: int = 96,
        horizon: int = 96,
        label_len: int | None = None,
        d_model: int = 32,
        n_heads: int = 2,
        encoder_layers: int = 2,
        decoder_layers: int = 1,
        moving_avg_kernel: int = 25,
        autocorr_factor: float = 1.0,
        dropout: float = 0.0,
        epochs: int = 100,
        batch_size: int = 16,
        lr: float = 1e-3,
        patience: int = 10,
        stride: int = 1,
        seed: int = 0,
    ):
        self.input_len = input_len
        self.horizon = horizon
        self.label_len = label_len
        self.d_model = d_model
        self.n_heads = n_heads
        self.encoder_layers = encoder_layers
        self.decoder_layers = decoder_layers
        self.moving_avg_kernel = moving_avg_kernel
        self.autocorr_factor = autocorr_factor
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.patience = patience
        self.stride = stride
        self.seed = seed

    def model_config(self, n_series: int) -> ModelConfig:
        return ModelConfig(
            input_len=self.input_len,
            horizon=self.horizon,
            label_len=self.label_len,
            n_series=n_series,
            d_model=self.d_model,
            n_heads=self.n_heads,
            encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers,
            moving_avg_kernel=self.moving_avg_kernel,
            autocorr_factor=self.autocorr_factor,
            dropout=self.dropout,
            seed=self.seed,
        )

    def train_options(self) -> TrainOptions:
        return TrainOptions(epochs=self.epochs, batch=self.batch_size, lr=self.lr, seed=self.seed, patience=self.patience)

    def fit(self, X, y=None, X_val=None):
        frame = _as_frame(X)
        if not np.all(frame.mask):
            raise ValueError("training rows contain gaps; fill them first")
        self.scaler_ = fit_scaler(frame)
        self.columns_ = frame.columns
        self.n_features_in_ = len(frame.columns)
        self.model_ = build_model(self._tag, self.model_config(self.n_features_in_))
        train_w = make_windows(transform(frame, self.scaler_), self.input_len, self.horizon, self.stride)
        if not train_w:
            raise ValueError(f"{frame.n_rows} training rows give no window of length {self.input_len} + {self.horizon}")
        val_w = self._windows(X_val) if X_val is not None else []
        result = train(self.model_, train_w, val_w, self.train_options())
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def _windows(self, X):
        frame = _as_frame(X)
        if frame.values.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} series, got {frame.values.shape[1]}")
        return make_windows(transform(frame, self.scaler_), self.input_len, self.horizon)

    def predict(self, X) -> np.ndarray:
        """Forecast the ``horizon`` rows after the last ``input_len`` rows of ``X``.

        ``X`` may also be a stack of contexts ``(N, input_len, series)``, in
        which case the result is ``(N, horizon, series)``.
        """
        check_is_fitted(self, "model_")
        arr = X.values if isinstance(X, SeriesFrame) else np.asarray(X, dtype=np.float64)
        single = arr.ndim == 2
        ctx = arr[None, -self.input_len :] if single else arr
        if ctx.shape[1:] != (self.input_len, self.n_features_in_):
            raise ValueError(f"context shape {ctx.shape[1:]} != ({self.input_len}, {self.n_features_in_})")
        scaled = (ctx - self.scaler_.mean) / self.scaler_.scale
        out = predict_windows(self.model_, scaled) * self.scaler_.scale + self.scaler_.mean
        return out[0] if single else out

    def forecast(self, X: SeriesFrame, issued_at: int | None = None) -> list[ForecastResult]:
        """One :class:`ForecastResult` per column, issued at the last context timestamp."""
        frame = _as_frame(X)
        pred = self.predict(frame)
        at = int(frame.timestamps[-1]) if issued_at is None else int(issued_at)
        return [ForecastResult(c, at, self.horizon, pred[:, j], self._tag) for j, c in enumerate(frame.columns)]

    def evaluate(self, X) -> dict:
        check_is_fitted(self, "model_")
        return evaluate(self.model_, self._windows(X), self.scaler_)

    def score(self, X, y=None) -> float:
        """Negative scaled-space MSE over every window of ``X`` (higher is better)."""
        return -self.evaluate(X)["mse"]


class AutoformerForecaster(_Forecaster):
    """Decomposition + auto-correlation forecaster."""

    _tag = "autoformer"


class PointwiseAttentionForecaster(_Forecaster):
    """Canonical dot-product attention encoder-decoder baseline."""

    _tag = "pointwise"


class PersistenceForecaster(_Forecaster):
    """Repeats the last observed value; ``fit`` only fits the scaler."""

    _tag = "persistence"
