import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from slicecast.estimators import AutoformerForecaster, ForecastResult, PersistenceForecaster, PointwiseAttentionForecaster
from slicecast.preprocess import SeriesFrame

KW = dict(input_len=16, horizon=8, d_model=8, moving_avg_kernel=5, epochs=2, batch_size=8, seed=3)


def weekly(rows=80, cols=2):
    t = np.arange(rows)
    vals = 100 + 20 * np.stack([np.sin(2 * np.pi * t / 7 + j) for j in range(cols)], axis=1)
    return SeriesFrame(tuple(f"slice{j}" for j in range(cols)), 1_700_000_000 + 86400 * t, vals)


def test_get_params_and_clone():
    est = AutoformerForecaster(**KW)
    p = est.get_params()
    assert p["input_len"] == 16 and p["epochs"] == 2
    assert clone(est).get_params() == p
    est.set_params(lr=0.01)
    assert est.lr == 0.01


@pytest.mark.parametrize("cls", [AutoformerForecaster, PointwiseAttentionForecaster, PersistenceForecaster])
def test_fit_predict_original_units(cls):
    f = weekly(100)
    est = cls(**KW).fit(f.rows(0, 60), X_val=f.rows(60, 100))
    pred = est.predict(f.rows(0, 60))
    assert pred.shape == (8, 2) and np.all(np.isfinite(pred))
    if cls is PersistenceForecaster:
        np.testing.assert_allclose(pred, np.tile(f.values[59], (8, 1)))
    assert est.predict(np.stack([f.values[:16], f.values[1:17]])).shape == (2, 8, 2)
    assert est.evaluate(f.rows(60, 100))["n_windows"] == 17
    assert est.score(f.rows(60, 100)) <= 0


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        AutoformerForecaster(**KW).predict(np.zeros((16, 2)))


def test_fit_is_deterministic():
    f = weekly()
    a = AutoformerForecaster(**KW).fit(f.rows(0, 60)).predict(f)
    b = AutoformerForecaster(**KW).fit(f.rows(0, 60)).predict(f)
    assert np.array_equal(a, b)


def test_scaler_only_sees_training_rows():
    f = weekly()
    est = PersistenceForecaster(**KW).fit(f.rows(0, 60))
    np.testing.assert_allclose(est.scaler_.mean, f.values[:60].mean(axis=0))


def test_forecast_results():
    f = weekly()
    est = PersistenceForecaster(**KW).fit(f.rows(0, 60))
    res = est.forecast(f.rows(0, 60))
    assert [r.slice_id for r in res] == ["slice0", "slice1"]
    assert res[0].issued_at == f.timestamps[59] and res[0].horizon == 8
    assert ForecastResult.from_dict(res[0].to_dict()).to_dict() == res[0].to_dict()


def test_forecast_result_invariants():
    with pytest.raises(ValueError):
        ForecastResult("s", 0, 3, np.ones(4), "m")
    with pytest.raises(ValueError):
        ForecastResult("s", 0, 2, np.array([1.0, np.inf]), "m")


def test_fit_rejects_gaps_and_short_input():
    vals = np.ones((60, 1))
    vals[5] = np.nan
    with pytest.raises(ValueError, match="gaps"):
        AutoformerForecaster(**KW).fit(vals)
    with pytest.raises(ValueError, match="no window"):
        AutoformerForecaster(**KW).fit(np.arange(20.0)[:, None])
