import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from slicecast.estimators import ForecastResult
from slicecast.policy import (
    PolicyAction,
    PolicyError,
    PolicyRules,
    SliceState,
    apply_capacities,
    generate_policies,
    history_from_dict,
    history_to_dict,
    parse_policy,
    render_policy,
)
from slicecast.slicing import SliceDef

T0 = 1_700_000_000


def slice_(sid="s1", cap=100.0):
    return SliceDef(sid, (("A", "B"),), ("L1",), cap)


def fc(peak, sid="s1", at=T0, h=4):
    vals = np.linspace(peak / 2, peak, h)
    return ForecastResult(sid, at, h, vals, "autoformer")


def test_rule_scale_up_to_108():
    (a,), _ = generate_policies([fc(90)], [slice_()])
    assert (a.action, a.current_capacity, a.target_capacity) == ("scale-up", 100.0, 108.0)


def test_rule_hold_between_thresholds():
    (a,), hist = generate_policies([fc(50)], [slice_()])
    assert a.action == "hold" and a.target_capacity == 100.0
    assert hist["s1"] == SliceState(100.0, 0)


def test_rule_hysteresis_then_scale_down_to_24():
    (a1,), hist = generate_policies([fc(20)], [slice_()])
    assert a1.action == "hold"
    (a2,), hist = generate_policies([fc(20)], [slice_()], history=hist)
    assert (a2.action, a2.target_capacity) == ("scale-down", 24.0)
    assert hist["s1"].capacity == 24.0


def test_low_streak_resets_on_normal_horizon():
    _, h = generate_policies([fc(20)], [slice_()])
    _, h = generate_policies([fc(50)], [slice_()], history=h)
    (a,), _ = generate_policies([fc(20)], [slice_()], history=h)
    assert a.action == "hold"


def test_scale_up_just_above_threshold_still_increases():
    (a,), _ = generate_policies([fc(81)], [slice_()])
    assert a.action == "scale-up" and a.target_capacity == 101.0


def test_scale_down_floor_at_min_capacity():
    rules = PolicyRules(min_capacity=50.0)
    _, h = generate_policies([fc(1)], [slice_()], rules)
    (a,), _ = generate_policies([fc(1)], [slice_()], rules, h)
    assert a.action == "scale-down" and a.target_capacity == 50.0
    rules = PolicyRules(min_capacity=100.0)
    _, h = generate_policies([fc(1)], [slice_()], rules)
    (a,), _ = generate_policies([fc(1)], [slice_()], rules, h)
    assert a.action == "hold"


def test_output_sorted_by_slice_id():
    slices = [slice_("b"), slice_("a"), slice_("c")]
    acts, _ = generate_policies([fc(50, "c"), fc(90, "a"), fc(10, "b")], slices)
    assert [a.slice_id for a in acts] == ["a", "b", "c"]


def test_unknown_slice_and_non_finite_errors():
    with pytest.raises(PolicyError, match="unknown slice"):
        generate_policies([fc(50, "zz")], [slice_()])

    class Raw:
        slice_id, issued_at, predicted = "s1", T0, np.array([1.0, np.nan])

    with pytest.raises(PolicyError, match="non-finite"):
        generate_policies([Raw()], [slice_()])


@pytest.mark.parametrize(
    "kw", [{"upper_util": 0.3, "lower_util": 0.3}, {"upper_util": 1.2}, {"lower_util": 0.0}, {"margin": -0.1}, {"hysteresis": 0}]
)
def test_rules_validation(kw):
    with pytest.raises(PolicyError):
        PolicyRules(**kw)


def test_action_invariants_enforced():
    with pytest.raises(PolicyError):
        PolicyAction("s", "scale-up", 100, 90, 95, T0, "")
    with pytest.raises(PolicyError):
        PolicyAction("s", "hold", 100, 101, 50, T0, "")
    with pytest.raises(PolicyError):
        PolicyAction("s", "scale-down", 100, 0, 5, T0, "")


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 500), st.floats(0, 500), st.floats(1, 500))
def test_monotone_in_peak(p1, p2, cap):
    lo, hi = sorted((p1, p2))
    (a_lo,), _ = generate_policies([fc(lo)], [slice_(cap=cap)])
    (a_hi,), _ = generate_policies([fc(hi)], [slice_(cap=cap)])
    if a_lo.action == "scale-up":
        assert a_hi.action == "scale-up"


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 500), st.floats(1, 500), st.floats(0.01, 100))
def test_decision_scale_invariant(peak, cap, c):
    for thr in (0.8, 0.3):
        assume(abs(peak / cap - thr) > 1e-9)
    rules = PolicyRules(hysteresis=1, min_capacity=1e-6)
    (a,), _ = generate_policies([fc(peak)], [slice_(cap=cap)], rules)
    (b,), _ = generate_policies([fc(peak * c)], [slice_(cap=cap * c)], rules)
    assert a.action == b.action


def test_idempotent_given_same_history():
    hist = {"s1": SliceState(100.0, 1)}
    r1 = generate_policies([fc(20)], [slice_()], history=hist)
    r2 = generate_policies([fc(20)], [slice_()], history=hist)
    assert r1 == r2
    assert hist == {"s1": SliceState(100.0, 1)}


def test_render_json_deterministic_and_complete():
    acts, _ = generate_policies([fc(50)], [slice_()])
    a = render_policy(acts, "json", issued_at=T0)
    assert a == render_policy(acts, "json", issued_at=T0)
    doc = parse_policy(a)
    assert doc["version"] == 1 and len(doc["actions"]) == 1
    assert doc["actions"][0]["action"] == "hold"
    assert doc["issued_at"] == "2023-11-14T22:13:20Z"


def test_render_empty_and_table():
    doc = json.loads(render_policy([], "json"))
    assert doc["actions"] == []
    acts, _ = generate_policies([fc(90)], [slice_()])
    table = render_policy(acts, "table")
    assert table.splitlines()[0].split() == ["slice", "action", "current", "target", "peak", "effective_at"]
    assert "108" in table.splitlines()[1]


def test_render_unknown_format():
    with pytest.raises(PolicyError):
        render_policy([], "yaml")


def test_parse_policy_rejects_bad_documents():
    with pytest.raises(PolicyError):
        parse_policy("{}")
    with pytest.raises(PolicyError):
        parse_policy(json.dumps({"version": 1, "actions": [{"slice_id": "x"}]}))


def test_history_round_trip_and_capacity_update():
    _, h = generate_policies([fc(90)], [slice_()])
    assert history_from_dict(json.loads(json.dumps(history_to_dict(h)))) == h
    assert apply_capacities([slice_()], h)[0].capacity == 108.0


def test_pluggable_generator():
    class Always:
        def generate(self, forecasts, slices, history=None):
            return [PolicyAction(f.slice_id, "hold", 1.0, 1.0, 0.0, f.issued_at, "stub") for f in forecasts], {}

    acts, _ = generate_policies([fc(90)], [slice_()], generator=Always())
    assert acts[0].rationale == "stub"
