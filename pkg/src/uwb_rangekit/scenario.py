"""End-to-end entry scenarios: a walk, an optional attacker, the PKE engine."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .channel import AngularFunction, EnvironmentProfile, Position, sample_batch
from .pke import Action, PkeDecision, PkePolicy, PkeSession
from .ranging import SPEED_OF_LIGHT, ClockModel, ExchangeConfig, RangingOutcome, Failure, range_once
from .sts import AttackerModel, AttackKind, StsSession, apply_cicada, apply_ghost_peak, forge_frames

DEFAULT_PERIOD_S = 0.15


class ScenarioError(ValueError):
    """Scenario description cannot be used."""


@dataclass(frozen=True)
class Walk:
    """Piecewise-linear true distance over time, held at the last waypoint."""

    points: tuple[tuple[float, float], ...]
    duration_s: float

    def __post_init__(self) -> None:
        if not self.points:
            raise ScenarioError("walk needs at least one waypoint")
        times = [t for t, _ in self.points]
        if times != sorted(times) or len(set(times)) != len(times):
            raise ScenarioError("walk waypoints must have strictly increasing times")
        if any(d < 0 for _, d in self.points):
            raise ScenarioError("walk distances must be non-negative")
        if self.duration_s <= 0:
            raise ScenarioError("walk duration must be positive")

    @classmethod
    def stationary(cls, distance_m: float, duration_s: float) -> Walk:
        return cls(((0.0, distance_m),), duration_s)

    @classmethod
    def approach(cls, start_m: float, end_m: float, speed_mps: float = 1.4, dwell_s: float = 5.0) -> Walk:
        travel = abs(start_m - end_m) / speed_mps
        return cls(((0.0, start_m), (travel, end_m)), travel + dwell_s)

    def distance_at(self, t: float) -> float:
        times = [p[0] for p in self.points]
        i = bisect.bisect_right(times, t)
        if i == 0:
            return self.points[0][1]
        if i == len(self.points):
            return self.points[-1][1]
        (t0, d0), (t1, d1) = self.points[i - 1], self.points[i]
        return d0 + (d1 - d0) * (t - t0) / (t1 - t0)


def quiet_profile() -> EnvironmentProfile:
    """Noise-free channel: every exchange returns the true distance."""
    return EnvironmentProfile("custom", 0.0, sigma=AngularFunction.constant(0.0))


@dataclass
class ScenarioResult:
    header: dict[str, Any]
    entries: list[dict[str, Any]] = field(default_factory=list)
    injected_accepted: int = 0
    injected_rejected: int = 0

    @property
    def unlocks(self) -> int:
        return sum(e["decision"] == Action.UNLOCK.value for e in self.entries)

    @property
    def suspends(self) -> int:
        return sum(e["decision"] == Action.SUSPEND.value for e in self.entries)

    @property
    def time_to_unlock_s(self) -> float | None:
        return next((e["t"] for e in self.entries if e["decision"] == Action.UNLOCK.value), None)

    def summary(self) -> dict[str, Any]:
        return {
            "type": "summary",
            "cycles": len(self.entries),
            "unlocks": self.unlocks,
            "suspends": self.suspends,
            "time_to_unlock_s": self.time_to_unlock_s,
            "injected_accepted": self.injected_accepted,
            "injected_rejected": self.injected_rejected,
        }

    def to_jsonl(self) -> str:
        lines = [self.header, *self.entries, self.summary()]
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)


def simulate_entry_scenario(
    walk: Walk,
    attacker: AttackerModel | None = None,
    policy: PkePolicy = PkePolicy(),
    seed: int = 0,
    profile: EnvironmentProfile | None = None,
    period_s: float = DEFAULT_PERIOD_S,
    position: Position = Position(0.0, 90.0),
    overrides: dict[int, float] | None = None,
    sts_key: bytes = bytes(16),
) -> ScenarioResult:
    """Run one ranging cycle every ``period_s`` for the walk's duration.

    Each cycle authenticates poll, response and final through STS sessions
    on both ends; frames an attacker injects are offered to the lock first
    and only ever counted. ``overrides`` replaces the phone-reported distance
    at chosen cycle indices, for replaying observed readings.
    """
    if period_s <= 0:
        raise ScenarioError("period must be positive")
    profile = profile or quiet_profile()
    overrides = overrides or {}
    rng = np.random.default_rng(seed)
    phone, lock = StsSession(sts_key), StsSession(sts_key)
    cfg = ExchangeConfig.from_seconds(1e-3, 1e-3)
    phone_clock, lock_clock = ClockModel(skew_ppm=4.0), ClockModel(skew_ppm=-3.0)
    session = PkeSession(policy)
    result = ScenarioResult(
        header={
            "type": "header",
            "seed": seed,
            "period_s": period_s,
            "policy": policy.to_dict(),
            "attacker": attacker.to_dict() if attacker else None,
            "profile": profile.name,
            "walk": [list(p) for p in walk.points],
            "duration_s": walk.duration_s,
        }
    )

    cycles = int(walk.duration_s / period_s + 1e-9)
    for k in range(cycles):
        t = round(k * period_s, 9)
        truth = walk.distance_at(t)

        if attacker is not None and attacker.kind is AttackKind.PREAMBLE_INJECTION:
            for frame in forge_frames(rng, attacker.injected_per_cycle, lock.preamble_code, lock.n_bits,
                                      claim_m=attacker.injected_claim_m):
                if lock.receive(frame):
                    result.injected_accepted += 1
                else:
                    result.injected_rejected += 1

        ok = all(rx.receive(tx.transmit()).accepted for tx, rx in ((phone, lock), (lock, phone), (phone, lock)))
        value = sample_batch(profile.with_distance(truth), position, rng, 1)[0]
        if not ok or np.isnan(value):
            outcome = RangingOutcome.failed(Failure.NO_SIGNAL if ok else Failure.STS_REJECTED)
        else:
            delay = (value - truth) / SPEED_OF_LIGHT
            outcome = range_once(phone_clock, lock_clock, truth / SPEED_OF_LIGHT, cfg, (delay,) * 3)
            if attacker is not None and attacker.kind is AttackKind.GHOST_PEAK:
                outcome = apply_ghost_peak(rng, attacker, outcome)
            elif attacker is not None and attacker.kind is AttackKind.CICADA:
                outcome = apply_cicada(rng, attacker, outcome)
        if k in overrides:
            outcome = RangingOutcome.distance(overrides[k])

        decision: PkeDecision = session.ingest(outcome)
        result.entries.append(
            {
                "t": t,
                "true_m": round(truth, 9),
                "raw": outcome.meters,
                "state": session.state.value,
                "decision": decision.action.value,
                "reason": decision.reason.value,
            }
        )
    return result


def scenario_from_dict(doc: Any) -> dict[str, Any]:
    """Validate a scenario document and return simulate_entry_scenario kwargs.

    Layout::

        {"walk": {"approach": [10, 0.3], "speed_mps": 1.4, "dwell_s": 5}
                 | {"stationary": 5.0, "duration_s": 60}
                 | {"points": [[t, d], ...], "duration_s": 60},
         "attacker": {...AttackerModel fields...},   optional
         "period_s": 0.15,                           optional
         "position": [theta, phi],                   optional
         "overrides": [[cycle, meters], ...]}        optional
    """
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(doc) - {"walk", "attacker", "period_s", "position", "overrides"}
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    w = doc.get("walk")
    try:
        if not isinstance(w, dict):
            raise ScenarioError("scenario needs a 'walk' object")
        if "approach" in w:
            start, end = w["approach"]
            walk = Walk.approach(float(start), float(end), float(w.get("speed_mps", 1.4)),
                                 float(w.get("dwell_s", 5.0)))
        elif "stationary" in w:
            walk = Walk.stationary(float(w["stationary"]), float(w["duration_s"]))
        elif "points" in w:
            walk = Walk(tuple((float(t), float(d)) for t, d in w["points"]), float(w["duration_s"]))
        else:
            raise ScenarioError("walk needs 'approach', 'stationary' or 'points'")
        kwargs: dict[str, Any] = {"walk": walk}
        if doc.get("attacker") is not None:
            kwargs["attacker"] = AttackerModel.from_dict(doc["attacker"])
        if "period_s" in doc:
            kwargs["period_s"] = float(doc["period_s"])
        if "position" in doc:
            kwargs["position"] = Position(*map(float, doc["position"]))
        if "overrides" in doc:
            kwargs["overrides"] = {int(c): float(m) for c, m in doc["overrides"]}
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from None
    return kwargs
