from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Shape and hyperparameters shared by every forecaster.

    ``label_len`` defaults to half the input window; ``d_ff`` to four times
    ``d_model``. ``n_series`` is the number of jointly forecast columns.
    """

    input_len: int = 96
    horizon: int = 96
    label_len: int | None = None
    n_series: int = 1
    d_model: int = 32
    n_heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 1
    d_ff: int | None = None
    moving_avg_kernel: int = 25
    autocorr_factor: float = 1.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.label_len is None:
            object.__setattr__(self, "label_len", self.input_len // 2)
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        self.validate()

    def validate(self) -> None:
        if self.input_len < 4:
            raise ConfigError(f"input_len must be >= 4, got {self.input_len}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if not 0 <= self.label_len <= self.input_len:
            raise ConfigError(f"label_len must be in [0, input_len], got {self.label_len}")
        if self.moving_avg_kernel < 3 or self.moving_avg_kernel % 2 == 0:
            raise ConfigError(f"moving_avg_kernel must be odd and >= 3, got {self.moving_avg_kernel}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.autocorr_factor <= 0 or self.top_k(self.input_len) < 1:
            raise ConfigError(f"autocorr_factor {self.autocorr_factor} gives no delays for input_len {self.input_len}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("n_series", "d_model", "n_heads", "encoder_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.decoder_layers < 0:
            raise ConfigError("decoder_layers must be >= 0")

    def top_k(self, length: int) -> int:
        return int(math.floor(self.autocorr_factor * math.log(length)))

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config field(s): {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


SHORT = ModelConfig(input_len=96, horizon=36)
LONG = ModelConfig(input_len=96, horizon=96)
