"""Threshold rules that turn per-slice forecasts into scaling intents."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Protocol, Sequence

import numpy as np

from .preprocess import _iso
from .slicing import SliceDef

SCHEMA_VERSION = 1
ACTIONS = ("scale-up", "scale-down", "hold")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyRules:
    upper_util: float = 0.8
    lower_util: float = 0.3
    margin: float = 0.2
    hysteresis: int = 2
    min_capacity: float = 1.0

    def __post_init__(self):
        if not 0 < self.lower_util < self.upper_util <= 1:
            raise PolicyError(f"need 0 < lower_util < upper_util <= 1, got {self.lower_util}, {self.upper_util}")
        if self.margin < 0:
            raise PolicyError(f"margin must be >= 0, got {self.margin}")
        if self.hysteresis < 1:
            raise PolicyError(f"hysteresis must be >= 1, got {self.hysteresis}")
        if self.min_capacity <= 0:
            raise PolicyError(f"min_capacity must be > 0, got {self.min_capacity}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("upper_util", "lower_util", "margin", "hysteresis", "min_capacity")}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PolicyRules":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise PolicyError(f"unknown policy rule field(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class PolicyAction:
    slice_id: str
    action: str
    current_capacity: float
    target_capacity: float
    trigger: float
    effective_at: int
    rationale: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise PolicyError(f"unknown action {self.action!r}")
        if not self.target_capacity > 0:
            raise PolicyError("target capacity must be positive")
        ok = {
            "scale-up": self.target_capacity > self.current_capacity,
            "scale-down": self.target_capacity < self.current_capacity,
            "hold": self.target_capacity == self.current_capacity,
        }[self.action]
        if not ok:
            raise PolicyError(f"{self.action} with target {self.target_capacity} vs current {self.current_capacity}")

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "action": self.action,
            "current_capacity": _num(self.current_capacity),
            "target_capacity": _num(self.target_capacity),
            "trigger": _num(self.trigger),
            "effective_at": _iso(self.effective_at),
            "rationale": self.rationale,
        }


@dataclass(frozen=True)
class SliceState:
    """What the rules remember about a slice between horizons."""

    capacity: float
    low_streak: int = 0


History = Mapping[str, SliceState]


def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() else x


def _ceil(x: float) -> float:
    # 20 * 1.2 must give 24, not 25, even when the product lands a hair above
    return float(math.ceil(round(x, 9)))


class PolicyGenerator(Protocol):
    def generate(self, forecasts, slices: Sequence[SliceDef], history: History | None = None) -> tuple[list[PolicyAction], dict[str, SliceState]]:
        ...


@dataclass(frozen=True)
class ThresholdPolicyGenerator:
    """Scale up immediately above ``upper_util``; scale down only after
    ``hysteresis`` consecutive horizons below ``lower_util``.

    Targets are ``ceil(peak * (1 + margin))``. When that would not exceed the
    current capacity on a scale-up, the target becomes the next integer above
    it; on a scale-down that rounds back up to the current capacity the
    unrounded value is used. Scale-down targets are floored at
    ``min_capacity``; if the floor leaves nothing to release the slice holds.
    """

    rules: PolicyRules = field(default_factory=PolicyRules)

    def decide(self, peak: float, state: SliceState, slice_id: str, at: int) -> tuple[PolicyAction, SliceState]:
        r = self.rules
        cap = state.capacity
        if peak > r.upper_util * cap:
            target = _ceil(peak * (1 + r.margin))
            if target <= cap:
                target = math.floor(cap) + 1.0
            why = f"peak {_num(peak)} above {r.upper_util:g} x capacity {_num(cap)}"
            return PolicyAction(slice_id, "scale-up", cap, target, peak, at, why), SliceState(target, 0)
        if peak < r.lower_util * cap:
            streak = state.low_streak + 1
            if streak >= r.hysteresis:
                want = peak * (1 + r.margin)
                # tiny capacities: rounding up would swallow the release
                target = max(_ceil(want) if _ceil(want) < cap else want, r.min_capacity)
                if target < cap:
                    why = f"peak {_num(peak)} below {r.lower_util:g} x capacity {_num(cap)} for {streak} horizons"
                    return PolicyAction(slice_id, "scale-down", cap, target, peak, at, why), SliceState(target, 0)
                why = f"peak {_num(peak)} low but capacity already at minimum {_num(r.min_capacity)}"
                return PolicyAction(slice_id, "hold", cap, cap, peak, at, why), SliceState(cap, streak)
            why = f"peak {_num(peak)} below {r.lower_util:g} x capacity {_num(cap)} ({streak}/{r.hysteresis} horizons)"
            return PolicyAction(slice_id, "hold", cap, cap, peak, at, why), SliceState(cap, streak)
        why = f"peak {_num(peak)} within [{r.lower_util:g}, {r.upper_util:g}] x capacity {_num(cap)}"
        return PolicyAction(slice_id, "hold", cap, cap, peak, at, why), SliceState(cap, 0)

    def generate(self, forecasts, slices, history=None):
        known = {s.id: s for s in slices}
        history = dict(history or {})
        actions = []
        seen = set()
        for fc in forecasts:
            sid = fc.slice_id
            if sid not in known:
                raise PolicyError(f"forecast for unknown slice {sid!r}")
            if sid in seen:
                raise PolicyError(f"more than one forecast for slice {sid!r}")
            seen.add(sid)
            pred = np.asarray(fc.predicted, dtype=np.float64)
            if pred.size == 0 or not np.all(np.isfinite(pred)):
                raise PolicyError(f"forecast for slice {sid!r} is empty or non-finite")
            state = history.get(sid) or SliceState(float(known[sid].capacity))
            action, history[sid] = self.decide(float(pred.max()), state, sid, int(fc.issued_at))
            actions.append(action)
        actions.sort(key=lambda a: a.slice_id)
        return actions, history


def generate_policies(forecasts, slices: Sequence[SliceDef], rules: PolicyRules | None = None, history: History | None = None, generator: PolicyGenerator | None = None):
    """Return ``(actions sorted by slice id, updated history)``.

    ``generator`` replaces the threshold rules with any object exposing the
    same ``generate`` method.
    """
    gen = generator or ThresholdPolicyGenerator(rules or PolicyRules())
    return gen.generate(forecasts, slices, history)


# ---------------------------------------------------------------------------
# documents


def render_policy(actions: Sequence[PolicyAction], format: str = "json", issued_at: int | None = None) -> str:
    """Deterministic JSON intent document or a plain-text table."""
    if format == "json":
        doc = {
            "version": SCHEMA_VERSION,
            "issued_at": _iso(issued_at) if issued_at is not None else None,
            "actions": [a.to_dict() for a in actions],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if format == "table":
        head = ("slice", "action", "current", "target", "peak", "effective_at")
        rows = [head] + [
            (a.slice_id, a.action, str(_num(a.current_capacity)), str(_num(a.target_capacity)), f"{a.trigger:.3f}", _iso(a.effective_at))
            for a in actions
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join(lines) + "\n"
    raise PolicyError(f"unsupported policy format {format!r}; use 'json' or 'table'")


def parse_policy(text: str) -> dict:
    """Load and check a JSON intent document; raises :class:`PolicyError` on schema violations."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PolicyError(f"policy document is not JSON: {exc}") from None
    if doc.get("version") != SCHEMA_VERSION:
        raise PolicyError(f"unsupported policy schema version {doc.get('version')!r}")
    if not isinstance(doc.get("actions"), list):
        raise PolicyError("policy document needs an 'actions' list")
    need = {"slice_id", "action", "current_capacity", "target_capacity", "trigger", "effective_at", "rationale"}
    for i, a in enumerate(doc["actions"]):
        missing = need - set(a)
        if missing:
            raise PolicyError(f"actions[{i}] is missing {sorted(missing)}")
        if a["action"] not in ACTIONS:
            raise PolicyError(f"actions[{i}].action: unknown value {a['action']!r}")
    return doc


def history_to_dict(history: History) -> dict:
    return {k: {"capacity": _num(v.capacity), "low_streak": v.low_streak} for k, v in sorted(history.items())}


def history_from_dict(d: Mapping) -> dict[str, SliceState]:
    return {k: SliceState(float(v["capacity"]), int(v.get("low_streak", 0))) for k, v in d.items()}


def apply_capacities(slices: Sequence[SliceDef], history: History) -> list[SliceDef]:
    """Slices with capacities replaced by the ones the history records."""
    return [replace(s, capacity=history[s.id].capacity) if s.id in history else s for s in slices]
