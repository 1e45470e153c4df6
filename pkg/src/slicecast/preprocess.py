"""Cleaning, alignment, daily aggregation and standard scaling of traffic series.

The functional API (``align``, ``clean``, ``daily_max``, ``fit_scaler`` ...)
works on :class:`SeriesFrame`. The estimator classes at the bottom wrap the
same functions with the scikit-learn transformer protocol so they compose
inside a :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ingest import DemandSeries, infer_cadence

logger = logging.getLogger(__name__)

DAY = 86400
EPSILON = 1e-8


class UnfillableColumnError(ValueError):
    """A column has no valid cell to fill from."""


@dataclass(frozen=True, eq=False)
class SeriesFrame:
    """Time x column matrix of traffic values sharing one timestamp axis.

    ``mask`` is True for valid cells. ``partial`` flags rows aggregated from
    an incomplete period (only set by :func:`daily_max`).
    """

    columns: tuple[str, ...]
    timestamps: np.ndarray
    values: np.ndarray
    mask: np.ndarray = None
    partial: np.ndarray = field(default=None)

    def __post_init__(self):
        cols = tuple(self.columns)
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1)
        mask = np.isfinite(vals) if self.mask is None else np.array(self.mask, dtype=bool)
        partial = np.zeros(ts.size, dtype=bool) if self.partial is None else np.array(self.partial, dtype=bool)
        if vals.shape != (ts.size, len(cols)):
            raise ValueError(f"values shape {vals.shape} != (len(timestamps), len(columns)) = {(ts.size, len(cols))}")
        if mask.shape != vals.shape:
            raise ValueError(f"mask shape {mask.shape} != values shape {vals.shape}")
        if partial.shape != ts.shape:
            raise ValueError("partial flags must have one entry per row")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if len(set(cols)) != len(cols):
            raise ValueError("column ids must be unique")
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "partial", partial)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def cadence(self) -> int:
        return infer_cadence(self.timestamps)

    @property
    def masked_count(self) -> int:
        return int((~self.mask).sum())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def rows(self, start: int | None = None, stop: int | None = None) -> "SeriesFrame":
        sl = slice(start, stop)
        return SeriesFrame(self.columns, self.timestamps[sl], self.values[sl], self.mask[sl], self.partial[sl])

    def select(self, columns: Sequence[str]) -> "SeriesFrame":
        idx = [self.columns.index(c) for c in columns]
        return SeriesFrame(tuple(columns), self.timestamps, self.values[:, idx], self.mask[:, idx], self.partial)

    def with_values(self, values: np.ndarray, mask: np.ndarray | None = None) -> "SeriesFrame":
        return replace(self, values=values, mask=self.mask if mask is None else mask)

    def equals(self, other: "SeriesFrame") -> bool:
        return (
            self.columns == other.columns
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(np.where(self.mask, self.values, 0.0), np.where(other.mask, other.values, 0.0))
        )


# ---------------------------------------------------------------------------
# alignment and cleaning


def align(series: Sequence[DemandSeries]) -> SeriesFrame:
    """Put every series on the union of their timestamps.

    Cells a series does not cover, and cells flagged as gaps, are masked.
    """
    if not series:
        raise ValueError("align needs at least one series")
    cadences = {s.cadence for s in series if s.cadence}
    if len(cadences) > 1:
        raise ValueError(f"series have different cadences: {sorted(cadences)}")
    axis = np.unique(np.concatenate([s.timestamps for s in series]))
    values = np.full((axis.size, len(series)), np.nan)
    mask = np.zeros((axis.size, len(series)), dtype=bool)
    for j, s in enumerate(series):
        pos = np.searchsorted(axis, s.timestamps)
        values[pos, j] = s.values
        mask[pos, j] = ~s.gaps
    values[~mask] = np.nan
    return SeriesFrame(tuple(s.series_id for s in series), axis, values, mask)


FILL_METHODS = ("linear", "previous", "nearest")


def clean(frame: SeriesFrame, method: str = "linear") -> SeriesFrame:
    """Fill masked cells; valid cells are returned unchanged.

    ``linear`` interpolates in time, ``previous`` carries the last valid value
    forward, ``nearest`` takes the closest valid sample in time. Leading and
    trailing gaps always take the nearest valid value.
    """
    if method not in FILL_METHODS:
        raise ValueError(f"unknown fill method {method!r}; choose from {FILL_METHODS}")
    vals = np.array(frame.values)
    ts = frame.timestamps.astype(np.float64)
    for j, name in enumerate(frame.columns):
        ok = frame.mask[:, j]
        if ok.all():
            continue
        if not ok.any():
            raise UnfillableColumnError(f"column {name!r} has no valid cells")
        miss = ~ok
        x_ok, y_ok = ts[ok], vals[ok, j]
        if method == "linear":
            vals[miss, j] = np.interp(ts[miss], x_ok, y_ok)
        elif method == "previous":
            pick = np.clip(np.searchsorted(x_ok, ts[miss], side="right") - 1, 0, None)
            vals[miss, j] = y_ok[pick]
        else:
            right = np.clip(np.searchsorted(x_ok, ts[miss]), 0, x_ok.size - 1)
            left = np.clip(right - 1, 0, None)
            pick = np.where(np.abs(x_ok[left] - ts[miss]) <= np.abs(x_ok[right] - ts[miss]), left, right)
            vals[miss, j] = y_ok[pick]
    return frame.with_values(vals, np.ones_like(frame.mask))


def daily_max(frame: SeriesFrame) -> SeriesFrame:
    """One row per UTC calendar day holding each column's maximum valid value.

    Output timestamps are UTC midnights. Days covered by fewer rows than the
    cadence implies are kept and flagged in ``partial``.
    """
    if frame.n_rows == 0:
        return frame
    cadence = frame.cadence if frame.n_rows > 1 else DAY
    if cadence <= 0 or (DAY % cadence and cadence % DAY):
        raise ValueError(f"cadence {cadence}s does not divide one day")
    per_day = max(DAY // cadence, 1)
    day = frame.timestamps // DAY
    days, start, counts = np.unique(day, return_index=True, return_counts=True)
    masked = np.where(frame.mask, frame.values, -np.inf)
    out = np.maximum.reduceat(masked, start, axis=0)
    valid = np.isfinite(out)
    out[~valid] = np.nan
    return SeriesFrame(frame.columns, days * DAY, out, valid, counts < per_day)


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True, eq=False)
class ScalerParams:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = EPSILON

    @property
    def scale(self) -> np.ndarray:
        return np.maximum(self.std, self.epsilon)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64), float(d["epsilon"]))


def fit_scaler(frame: SeriesFrame, rows: slice | tuple[int, int] | None = None, epsilon: float = EPSILON) -> ScalerParams:
    """Per-column mean and population std over the given rows (training rows only).

    Masked cells are ignored. Columns whose std is below ``epsilon`` trigger a
    warning and are scaled by ``epsilon`` instead.
    """
    if isinstance(rows, tuple):
        rows = slice(*rows)
    sub_v = frame.values[rows] if rows is not None else frame.values
    sub_m = frame.mask[rows] if rows is not None else frame.mask
    if sub_v.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero rows")
    means = np.empty(sub_v.shape[1])
    stds = np.empty(sub_v.shape[1])
    for j in range(sub_v.shape[1]):
        col = sub_v[sub_m[:, j], j]
        if col.size == 0:
            raise ValueError(f"column {frame.columns[j]!r} has no valid cells in the fit rows")
        means[j] = col.mean()
        stds[j] = np.sqrt(np.mean((col - means[j]) ** 2))
    flat = [frame.columns[j] for j in np.flatnonzero(stds < epsilon)]
    if flat:
        warnings.warn(f"zero-variance column(s) {flat}; scaling by epsilon={epsilon}", RuntimeWarning, stacklevel=2)
    return ScalerParams(means, stds, epsilon)


def transform(frame: SeriesFrame, params: ScalerParams) -> SeriesFrame:
    _check_width(frame, params)
    return frame.with_values((frame.values - params.mean) / params.scale)


def invert(frame: SeriesFrame, params: ScalerParams) -> SeriesFrame:
    _check_width(frame, params)
    return frame.with_values(frame.values * params.scale + params.mean)


def _check_width(frame: SeriesFrame, params: ScalerParams) -> None:
    if frame.values.shape[1] != params.mean.size:
        raise ValueError(f"frame has {frame.values.shape[1]} columns, scaler was fit on {params.mean.size}")


# ---------------------------------------------------------------------------
# CSV


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(text: str) -> int:
    return int(datetime.fromisoformat(text.replace("Z", "+00:00")).timestamp())


def frame_to_csv(frame: SeriesFrame) -> str:
    """ISO-8601 timestamp column, one column per series, empty cells where masked."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["timestamp", *frame.columns])
    for i, ts in enumerate(frame.timestamps):
        row = [_iso(ts)]
        for j in range(len(frame.columns)):
            row.append(repr(float(frame.values[i, j])) if frame.mask[i, j] else "")
        writer.writerow(row)
    return buf.getvalue()


def frame_from_csv(text: str) -> SeriesFrame:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if not header or header[0] != "timestamp":
        raise ValueError("first CSV column must be 'timestamp'")
    ts, rows = [], []
    for row in reader:
        if not row:
            continue
        ts.append(_parse_iso(row[0]))
        rows.append([float(c) if c != "" else np.nan for c in row[1:]])
    vals = np.array(rows, dtype=np.float64).reshape(len(ts), len(header) - 1)
    return SeriesFrame(tuple(header[1:]), np.asarray(ts, dtype=np.int64), vals, np.isfinite(vals))


def write_frame_csv(frame: SeriesFrame, path: str | Path) -> None:
    Path(path).write_text(frame_to_csv(frame), newline="")


def read_frame_csv(path: str | Path) -> SeriesFrame:
    with open(path, newline="") as fh:
        return frame_from_csv(fh.read())


# ---------------------------------------------------------------------------
# scikit-learn transformers


def _as_frame(X) -> SeriesFrame:
    if isinstance(X, SeriesFrame):
        return X
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array or SeriesFrame, got shape {arr.shape}")
    return SeriesFrame(tuple(f"c{j}" for j in range(arr.shape[1])), np.arange(arr.shape[0]), arr)


def _like_input(X, frame: SeriesFrame):
    return frame if isinstance(X, SeriesFrame) else np.array(frame.values)


class GapFiller(TransformerMixin, BaseEstimator):
    """Stateless transformer around :func:`clean`."""

    def __init__(self, method: str = "linear"):
        self.method = method

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return _like_input(X, clean(_as_frame(X), self.method))


class DailyMaxAggregator(TransformerMixin, BaseEstimator):
    """Stateless transformer around :func:`daily_max`."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return _like_input(X, daily_max(_as_frame(X)))


class SliceScaler(TransformerMixin, BaseEstimator):
    """Per-column standard scaler fitted on a leading block of rows.

    Parameters
    ----------
    fit_rows : int or None
        Number of leading rows used for fitting; ``None`` uses every row.
        Keep this at the training-split length to avoid leakage.
    epsilon : float
        Floor applied to the standard deviation.
    """

    def __init__(self, fit_rows: int | None = None, epsilon: float = EPSILON):
        self.fit_rows = fit_rows
        self.epsilon = epsilon

    def fit(self, X, y=None):
        frame = _as_frame(X)
        rows = slice(0, self.fit_rows) if self.fit_rows is not None else None
        self.params_ = fit_scaler(frame, rows, self.epsilon)
        self.n_features_in_ = frame.values.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return _like_input(X, transform(_as_frame(X), self.params_))

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return _like_input(X, invert(_as_frame(X), self.params_))
