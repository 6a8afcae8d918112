"""Passive keyless entry decision engine.

The engine runs lock-side over a stream of ranging outcomes:

* nothing is decided on a single measurement; only the mean of a full
  sliding window of valid distances can unlock, and only after a minimum
  number of ranging cycles;
* negative distances never enter the window but are remembered, and a
  cluster of strongly negative readings suspends the session as a
  suspected attack;
* a window mean that jumps by more than a bound between cycles suspends
  the session as well;
* when the phone also reports its own estimate, the lock drops samples the
  two sides disagree on.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import asdict, dataclass, fields
from typing import Any

from .ranging import RangingOutcome


class PkeState(str, enum.Enum):
    COLLECTING = "collecting"
    READY = "ready"
    UNLOCKED = "unlocked"
    SUSPENDED = "suspended"


class Action(str, enum.Enum):
    NO_ACTION = "no_action"
    UNLOCK = "unlock"
    SUSPEND = "suspend"


class Reason(str, enum.Enum):
    COLLECTING = "collecting"
    TOO_FAR = "too_far"
    MEASUREMENT_FAILED = "measurement_failed"
    NEGATIVE_EXCLUDED = "negative_excluded"
    LOCK_MISMATCH = "lock_mismatch"
    ALREADY_UNLOCKED = "already_unlocked"
    SUSPENDED = "suspended"
    ATTACK_SUSPECTED = "attack_suspected"
    FLUCTUATION = "fluctuation"
    WITHIN_RANGE = "within_range"


@dataclass(frozen=True)
class PkeDecision:
    action: Action
    reason: Reason

    def to_dict(self) -> dict[str, str]:
        return {"action": self.action.value, "reason": self.reason.value}


@dataclass(frozen=True)
class PkePolicy:
    window: int = 10
    min_cycles: int = 10
    unlock_threshold_m: float = 0.50
    negative_floor_m: float = 0.0
    attack_negative_m: float = -1.0
    attack_count_k: int = 3
    attack_lookback: int = 30
    fluctuation_bound_m: float = 1.0
    cross_check_tolerance_m: float = 0.30

    def __post_init__(self) -> None:
        if self.window < 1 or self.min_cycles < 1:
            raise ValueError("window and min_cycles must be at least 1")
        if not self.attack_negative_m < self.negative_floor_m < self.unlock_threshold_m:
            raise ValueError("thresholds must satisfy attack_negative < negative_floor < unlock_threshold")
        if self.attack_count_k < 1 or self.attack_lookback < self.attack_count_k:
            raise ValueError("attack_lookback must hold at least attack_count_k samples")
        if self.fluctuation_bound_m <= 0 or self.cross_check_tolerance_m <= 0:
            raise ValueError("bounds must be positive")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PkePolicy:
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown policy fields: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, overrides: dict[str, str]) -> PkePolicy:
        """Apply ``key=value`` strings, coercing to each field's type."""
        current = self.to_dict()
        for key, text in overrides.items():
            name = key.replace("-", "_")
            if name not in current:
                raise ValueError(f"unknown policy field {key!r}")
            kind = type(current[name])
            try:
                current[name] = kind(text) if kind is not int else int(text, 10)
            except ValueError:
                raise ValueError(f"policy field {key!r} expects {kind.__name__}, got {text!r}") from None
        return PkePolicy(**current)


class PkeSession:
    """Single-writer session state; feed outcomes through :meth:`ingest`."""

    def __init__(self, policy: PkePolicy = PkePolicy()):
        self.policy = policy
        self.reset()

    def reset(self) -> None:
        self.state = PkeState.COLLECTING
        self.valid_window: deque[float] = deque(maxlen=self.policy.window)
        self.raw_history: deque[float | None] = deque(maxlen=self.policy.attack_lookback)
        self.cycles = 0
        self._last_mean: float | None = None

    def window_mean(self) -> float | None:
        return sum(self.valid_window) / len(self.valid_window) if self.valid_window else None

    def _window_full(self) -> bool:
        return len(self.valid_window) == self.policy.window

    def attack_predicate(self) -> bool:
        hits = sum(1 for v in self.raw_history if v is not None and v <= self.policy.attack_negative_m)
        return hits >= self.policy.attack_count_k

    def _suspend(self, reason: Reason) -> PkeDecision:
        self.state = PkeState.SUSPENDED
        return PkeDecision(Action.SUSPEND, reason)

    def ingest(self, outcome: RangingOutcome, lock_outcome: RangingOutcome | None = None) -> PkeDecision:
        """Consume one ranging cycle.

        ``outcome`` is the phone-side estimate; ``lock_outcome``, when given,
        is the lock's own estimate of the same exchange.
        """
        p = self.policy
        if self.state is PkeState.SUSPENDED:
            return PkeDecision(Action.NO_ACTION, Reason.SUSPENDED)
        self.cycles += 1
        raw = outcome.meters if outcome.ok else None
        self.raw_history.append(raw)

        if self.attack_predicate():
            return self._suspend(Reason.ATTACK_SUSPECTED)
        if raw is None:
            return PkeDecision(Action.NO_ACTION, Reason.MEASUREMENT_FAILED)
        if raw < p.negative_floor_m:
            return PkeDecision(Action.NO_ACTION, Reason.NEGATIVE_EXCLUDED)
        if lock_outcome is not None and (
            not lock_outcome.ok or abs(lock_outcome.meters - raw) > p.cross_check_tolerance_m
        ):
            return PkeDecision(Action.NO_ACTION, Reason.LOCK_MISMATCH)

        was_full = self._window_full()
        self.valid_window.append(raw)
        mean = self.window_mean()
        if was_full and self._last_mean is not None and abs(mean - self._last_mean) > p.fluctuation_bound_m:
            return self._suspend(Reason.FLUCTUATION)
        self._last_mean = mean

        if self.state is PkeState.UNLOCKED:
            return PkeDecision(Action.NO_ACTION, Reason.ALREADY_UNLOCKED)
        if not self._window_full() or self.cycles < p.min_cycles:
            self.state = PkeState.COLLECTING
            return PkeDecision(Action.NO_ACTION, Reason.COLLECTING)
        self.state = PkeState.READY
        if mean < p.unlock_threshold_m:
            self.state = PkeState.UNLOCKED
            return PkeDecision(Action.UNLOCK, Reason.WITHIN_RANGE)
        return PkeDecision(Action.NO_ACTION, Reason.TOO_FAR)
