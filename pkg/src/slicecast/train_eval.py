"""Chronological splits, sliding windows, the training loop and evaluation metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .models.layers import Module
from .numerics import Tensor, XorShift64Star, mse_loss, no_grad
from .preprocess import ScalerParams, SeriesFrame, _as_frame, _iso


class TrainingDivergedError(RuntimeError):
    pass


class LeakageError(AssertionError):
    pass


# ---------------------------------------------------------------------------
# splitting and windowing


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")

    def counts(self, rows: int) -> tuple[int, int, int]:
        """Floor of each held-out proportion; whatever is left goes to training."""
        # round before flooring so 0.2 * 10 does not land on 1.9999...
        val = math.floor(round(self.val * rows, 9))
        test = math.floor(round(self.test * rows, 9))
        return rows - val - test, val, test


def split(frame, spec: SplitSpec | None = None, input_len: int = 0, horizon: int = 0):
    """Cut ``frame`` into contiguous train/val/test blocks in time order.

    ``input_len`` and ``horizon`` only feed the minimum-size check
    (``rows >= L + H + 3``).
    """
    spec = spec or SplitSpec()
    rows = frame.n_rows if isinstance(frame, SeriesFrame) else len(frame)
    need = input_len + horizon + 3
    if rows < need:
        raise ValueError(f"need at least {need} rows (input_len + horizon + 3) to split, got {rows}")
    n_train, n_val, _ = spec.counts(rows)
    cuts = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, rows)]
    if isinstance(frame, SeriesFrame):
        return tuple(frame.rows(a, b) for a, b in cuts)
    return tuple(frame[a:b] for a, b in cuts)


@dataclass(frozen=True, eq=False)
class WindowSample:
    context: np.ndarray
    target: np.ndarray
    context_timestamps: np.ndarray
    target_timestamps: np.ndarray


def window_count(rows: int, input_len: int, horizon: int, stride: int = 1) -> int:
    if rows < input_len + horizon:
        return 0
    return (rows - input_len - horizon) // stride + 1


def make_windows(frame, input_len: int, horizon: int, stride: int = 1) -> list[WindowSample]:
    """All ``(context, target)`` pairs inside ``frame``; the target starts right after the context."""
    if input_len < 1 or horizon < 1 or stride < 1:
        raise ValueError("input_len, horizon and stride must all be >= 1")
    frame = _as_frame(frame)
    vals, ts = frame.values, frame.timestamps
    out = []
    for i in range(window_count(frame.n_rows, input_len, horizon, stride)):
        s = i * stride
        m = s + input_len
        out.append(WindowSample(vals[s:m], vals[m : m + horizon], ts[s:m], ts[m : m + horizon]))
    return out


def stack_windows(windows: list[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise ValueError("no windows to stack")
    return np.stack([w.context for w in windows]), np.stack([w.target for w in windows])


def assert_no_leakage(train_timestamps, test_windows: list[WindowSample]) -> None:
    """Every timestamp a test window touches must come after every training timestamp."""
    if len(train_timestamps) == 0 or not test_windows:
        return
    last_train = int(np.max(train_timestamps))
    first_test = min(int(w.context_timestamps[0]) for w in test_windows)
    if first_test <= last_train:
        raise LeakageError(f"test window starts at {first_test}, not after last training timestamp {last_train}")


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 100
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for n, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1 - self.beta1) * p.grad
            v *= self.beta2
            v += (1 - self.beta2) * p.grad**2
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainResult:
    model: Module
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "history": self.history,
            "best_epoch": self.best_epoch,
            "best_val": self.best_val if math.isfinite(self.best_val) else None,
            "stopped_early": self.stopped_early,
        }


def predict_windows(model: Module, contexts: np.ndarray, batch: int = 64) -> np.ndarray:
    """Scaled-space forecasts for a stack of contexts ``(N, L, C)``."""
    model.eval()
    outs = []
    with no_grad():
        for s in range(0, len(contexts), batch):
            outs.append(model(contexts[s : s + batch]).data)
    return np.concatenate(outs, axis=0)


def _mse(model: Module, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((predict_windows(model, x) - y) ** 2))


def train(model: Module, train_windows: list[WindowSample], val_windows: list[WindowSample], opts: TrainOptions | None = None) -> TrainResult:
    """Adam on scaled-space MSE with early stopping on validation MSE.

    The returned model carries the parameters of the epoch with the lowest
    validation MSE (training MSE when there are no validation windows).
    A non-finite batch loss aborts with the epoch and batch index.
    """
    opts = opts or TrainOptions()
    result = TrainResult(model)
    params = model.parameters()
    if opts.epochs == 0 or not params:
        return result
    x, y = stack_windows(train_windows)
    vx, vy = stack_windows(val_windows) if val_windows else (None, None)
    rng = XorShift64Star(opts.seed)
    adam = Adam(params, opts.lr, opts.beta1, opts.beta2, opts.eps)
    best = {n: p.data.copy() for n, p in params.items()}
    waited = 0
    for epoch in range(opts.epochs):
        model.train()
        order = rng.permutation(len(x))
        total = 0.0
        for b, s in enumerate(range(0, len(x), opts.batch)):
            idx = order[s : s + opts.batch]
            model.zero_grad()
            loss = mse_loss(model(x[idx]), y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}, batch {b}; try a lower learning rate")
            loss.backward()
            adam.step()
            total += value * len(idx)
        train_loss = total / len(x)
        val_loss = _mse(model, vx, vy) if vx is not None else train_loss
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"validation loss became {val_loss} at epoch {epoch}")
        improved = val_loss < result.best_val
        if improved:
            result.best_val, result.best_epoch, waited = val_loss, epoch, 0
            best = {n: p.data.copy() for n, p in params.items()}
        else:
            waited += 1
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "best_val": result.best_val})
        if waited >= opts.patience:
            result.stopped_early = True
            break
    for n, p in params.items():
        p.data[...] = best[n]
    model.eval()
    return result


# ---------------------------------------------------------------------------
# evaluation


def peak_ratios(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """``max(pred) / max(target)`` per window and column over the horizon axis.

    Cells whose target peak is not positive have no meaningful ratio and come
    back as NaN.
    """
    pk = pred.max(axis=-2)
    tk = target.max(axis=-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(tk > 0, pk / np.where(tk > 0, tk, 1.0), np.nan)


def evaluate(model: Module, windows: list[WindowSample], scaler: ScalerParams, predictions: np.ndarray | None = None) -> dict:
    """MSE/MAE in scaled and original units plus the mean peak ratio.

    Windows hold scaled values. ``predictions`` may be passed in to skip the
    forward pass (scaled, shaped like the stacked targets).
    """
    if not windows:
        raise ValueError("cannot evaluate on an empty set of windows")
    x, y = stack_windows(windows)
    pred = predict_windows(model, x) if predictions is None else np.asarray(predictions, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {y.shape}")
    pred_o = pred * scaler.scale + scaler.mean
    y_o = y * scaler.scale + scaler.mean
    ratios = peak_ratios(pred_o, y_o)
    return {
        "model": getattr(model, "tag", type(model).__name__),
        "n_windows": len(windows),
        "mse": float(np.mean((pred - y) ** 2)),
        "mae": float(np.mean(np.abs(pred - y))),
        "mse_original": float(np.mean((pred_o - y_o) ** 2)),
        "mae_original": float(np.mean(np.abs(pred_o - y_o))),
        "peak_ratio": float(np.nanmean(ratios)) if np.isfinite(ratios).any() else None,
    }


# ---------------------------------------------------------------------------
# reports


def metrics_to_json(metrics: dict, **extra) -> str:
    return json.dumps({**extra, "metrics": metrics}, indent=2, sort_keys=True) + "\n"


def metrics_to_csv(rows: list[dict]) -> str:
    """One line per metrics dict; columns are the sorted union of keys."""
    keys = sorted({k for r in rows for k in r})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
    return buf.getvalue()


def predictions_to_csv(windows: list[WindowSample], predicted: np.ndarray, columns, model_tag: str, scaler: ScalerParams | None = None) -> str:
    """Plot-ready rows ``window,timestamp,slice,actual,predicted,model``.

    ``predicted`` is scaled like the windows; both are mapped back to
    original units when a scaler is given.
    """
    _, y = stack_windows(windows)
    pred = np.asarray(predicted, dtype=np.float64)
    if scaler is not None:
        y = y * scaler.scale + scaler.mean
        pred = pred * scaler.scale + scaler.mean
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "timestamp", "slice", "actual", "predicted", "model"])
    for i, win in enumerate(windows):
        for h, ts in enumerate(win.target_timestamps):
            for j, col in enumerate(columns):
                w.writerow([i, _iso(int(ts)), col, repr(float(y[i, h, j])), repr(float(pred[i, h, j])), model_tag])
    return buf.getvalue()


def options_to_dict(opts: TrainOptions) -> dict:
    return asdict(opts)
