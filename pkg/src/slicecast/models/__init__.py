"""Forecasting networks: decomposition + auto-correlation, point-wise attention, persistence."""

from .autocorrelation import AutoCorrelationLayer, autocorr_attention, select_delays
from .autoformer import AutoformerModel
from .checkpoint import CheckpointError, build_model, load_checkpoint, parameter_hash, save_checkpoint
from .config import LONG, SHORT, ConfigError, ModelConfig
from .layers import Module, blocked_attention_kernel, moving_average, scaled_dot_attention, series_decompose
from .pointwise import PersistenceModel, PointwiseAttentionModel, persistence_forecast

__all__ = [
    "AutoCorrelationLayer",
    "AutoformerModel",
    "CheckpointError",
    "ConfigError",
    "LONG",
    "ModelConfig",
    "Module",
    "PersistenceModel",
    "PointwiseAttentionModel",
    "SHORT",
    "autocorr_attention",
    "blocked_attention_kernel",
    "build_model",
    "load_checkpoint",
    "moving_average",
    "parameter_hash",
    "persistence_forecast",
    "save_checkpoint",
    "scaled_dot_attention",
    "select_delays",
    "series_decompose",
]
