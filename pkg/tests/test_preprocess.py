import warnings
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.pipeline import make_pipeline

from slicecast import ingest
from slicecast.ingest import DemandSeries
from slicecast.preprocess import (
    DailyMaxAggregator,
    GapFiller,
    SeriesFrame,
    SliceScaler,
    UnfillableColumnError,
    align,
    clean,
    daily_max,
    fit_scaler,
    frame_from_csv,
    frame_to_csv,
    invert,
    transform,
)
from slicecast.sample import bundled_paths

DAY = 86400


def series(src, dst, ts, vals):
    vals = np.asarray(vals, dtype=float)
    return DemandSeries(src, dst, np.asarray(ts), vals, np.isnan(vals), ingest.infer_cadence(ts))


def frame(values, ts=None, mask=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    ts = np.arange(values.shape[0]) * 300 if ts is None else ts
    return SeriesFrame(tuple(f"c{j}" for j in range(values.shape[1])), ts, values, mask)


# -- align -------------------------------------------------------------------------


def test_align_identical_axes():
    f = align([series("A", "B", [0, 300], [1, 2]), series("B", "A", [0, 300], [3, 4])])
    assert f.masked_count == 0
    assert f.columns == ("A->B", "B->A")


def test_align_union_axis():
    f = align([series("A", "B", [0, 300], [1, 2]), series("B", "A", [300, 600], [3, 4])])
    assert f.timestamps.tolist() == [0, 300, 600]
    assert f.masked_count == 2


def test_align_empty():
    with pytest.raises(ValueError):
        align([])


# -- clean -------------------------------------------------------------------------


def test_clean_linear_midpoint():
    f = frame([1.0, np.nan, 3.0])
    assert clean(f).values[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_clean_leading_gap_nearest():
    assert clean(frame([np.nan, 5.0, 5.0])).values[:, 0].tolist() == [5.0, 5.0, 5.0]


@pytest.mark.parametrize("method", ["previous", "nearest"])
def test_clean_other_methods(method):
    out = clean(frame([np.nan, 1.0, np.nan, np.nan, 4.0, np.nan]), method).values[:, 0]
    expected = {"previous": [1, 1, 1, 1, 4, 4], "nearest": [1, 1, 1, 4, 4, 4]}[method]
    assert out.tolist() == expected


def test_clean_unfillable():
    with pytest.raises(UnfillableColumnError):
        clean(frame([[np.nan, 1.0], [np.nan, 2.0]]))


def test_clean_bounded_by_local_variation():
    rng = np.random.default_rng(5)
    t = np.arange(2000)
    x = 50 + 10 * np.sin(2 * np.pi * t / 288) + rng.normal(0, 0.5, t.size)
    holes = rng.random(t.size) < 0.05
    holes[0] = holes[-1] = False
    f = frame(np.where(holes, np.nan, x))
    filled = clean(f).values[:, 0]
    for i in np.flatnonzero(holes):
        lo, hi = i - 1, i + 1
        while holes[lo]:
            lo -= 1
        while holes[hi]:
            hi += 1
        local = np.ptp(x[lo : hi + 1])
        assert abs(filled[i] - x[i]) <= local + 1e-9


@given(arrays(np.float64, (30, 2), elements=st.floats(0, 1e4)), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_clean_never_alters_valid_cells(vals, seed):
    mask = np.random.default_rng(seed).random(vals.shape) > 0.3
    mask[0] = True
    f = frame(np.where(mask, vals, np.nan), mask=mask)
    out = clean(f)
    assert np.array_equal(out.values[mask], vals[mask])
    assert out.mask.all()


# -- daily max -----------------------------------------------------------------------


def test_daily_max_single_day():
    start = int(datetime(2004, 3, 1, tzinfo=timezone.utc).timestamp())
    vals = np.full(288, 1.0)
    vals[144] = 7.5  # 12:00
    out = daily_max(frame(vals, ts=start + np.arange(288) * 300))
    assert out.n_rows == 1
    assert out.values[0, 0] == 7.5
    assert out.timestamps[0] == start
    assert not out.partial[0]


def test_daily_max_constant():
    out = daily_max(frame(np.full(288 * 3, 4.2)))
    assert out.values[:, 0].tolist() == [4.2, 4.2, 4.2]


def test_daily_max_partial_days_flagged():
    ts = 3600 * 20 + np.arange(288) * 300  # starts at 20:00
    out = daily_max(frame(np.arange(288.0), ts=ts))
    assert out.n_rows == 2
    assert out.partial.tolist() == [True, True]


def test_daily_max_cadence_must_divide_day():
    with pytest.raises(ValueError):
        daily_max(frame(np.ones(10), ts=np.arange(10) * 7 * 3600))


def test_daily_max_idempotent():
    once = daily_max(frame(np.random.default_rng(0).random((288 * 4, 2))))
    twice = daily_max(once)
    assert twice.equals(once)


def test_daily_max_ignores_masked():
    vals = np.ones(288)
    vals[10] = 99.0
    mask = np.ones((288, 1), dtype=bool)
    mask[10] = False
    assert daily_max(frame(vals, mask=mask)).values[0, 0] == 1.0


@pytest.fixture(scope="module")
def bundled_series():
    net, archive = bundled_paths()
    topo = ingest.load_topology(net)
    return ingest.load_demands(archive, topo)


def test_bundled_masked_count_equals_gap_flags(bundled_series):
    f = align(bundled_series)
    assert f.masked_count == sum(s.gap_count for s in bundled_series) > 0


def test_bundled_daily_rows_equal_distinct_dates(bundled_series):
    f = align(bundled_series)
    dates = {datetime.fromtimestamp(int(t), tz=timezone.utc).date() for t in f.timestamps}
    out = daily_max(clean(f))
    assert out.n_rows == len(dates) == 60
    assert not out.partial.any()


# -- scaling -----------------------------------------------------------------------------


def test_scaler_values():
    p = fit_scaler(frame([1.0, 2.0, 3.0]))
    assert p.mean[0] == 2.0
    assert p.std[0] == pytest.approx(np.sqrt(2 / 3))
    out = transform(frame([1.0, 2.0, 3.0]), p).values[:, 0]
    assert out == pytest.approx([-1.2247449, 0.0, 1.2247449], abs=1e-6)


def test_scaler_zero_variance():
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        p = fit_scaler(frame([4.0, 4.0]))
    assert transform(frame([4.0, 4.0]), p).values[:, 0].tolist() == [0.0, 0.0]


def test_scaler_fit_rows_zero_mean_unit_var():
    rng = np.random.default_rng(2)
    f = frame(rng.normal(10, 3, (50, 3)))
    p = fit_scaler(f, (0, 30))
    z = transform(f, p).values[:30]
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(z.std(axis=0), 1, atol=1e-12)


@given(arrays(np.float64, (20, 3), elements=st.floats(-1e6, 1e6)))
@settings(max_examples=50, deadline=None)
def test_scaler_roundtrip(vals):
    f = frame(vals)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p = fit_scaler(f)
    if np.any(p.std < p.epsilon):
        return
    back = invert(transform(f, p), p).values
    assert np.all(np.abs(back - vals) <= 1e-9 * np.maximum(np.abs(vals), p.scale))


def test_leakage_guard_detects_test_rows():
    trend = np.linspace(0, 100, 100)
    f = frame(trend)
    train_only = fit_scaler(f, (0, 60))
    with_test = fit_scaler(f)
    assert train_only.mean[0] != with_test.mean[0]
    assert train_only.std[0] != with_test.std[0]


# -- CSV --------------------------------------------------------------------------------


def test_csv_roundtrip():
    vals = np.array([[1.5, np.nan], [2.0, 1e-7], [0.1 + 0.2, 3.0]])
    f = SeriesFrame(("a,b", 'q"x'), np.array([0, 300, 600]), vals)
    text = frame_to_csv(f)
    assert text.splitlines()[0] == 'timestamp,"a,b","q""x"'
    assert text.splitlines()[1].startswith("1970-01-01T00:00:00Z")
    assert frame_from_csv(text).equals(f)


# -- sklearn wrappers ---------------------------------------------------------------------


def test_sklearn_pipeline_on_frame():
    rng = np.random.default_rng(0)
    vals = 10 + rng.random((288 * 5, 2))
    vals[3, 0] = np.nan
    f = frame(vals)
    pipe = make_pipeline(GapFiller(), DailyMaxAggregator(), SliceScaler(fit_rows=3))
    out = pipe.fit_transform(f)
    assert isinstance(out, SeriesFrame) and out.n_rows == 5
    scaler = pipe[-1]
    assert scaler.get_params() == {"fit_rows": 3, "epsilon": 1e-8}
    back = scaler.inverse_transform(out)
    assert np.allclose(back.values, daily_max(clean(f)).values)


def test_scaler_on_arrays_and_not_fitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SliceScaler().transform(np.ones((3, 1)))
    z = SliceScaler().fit_transform(np.array([[1.0], [2.0], [3.0]]))
    assert isinstance(z, np.ndarray) and z[1, 0] == 0.0
