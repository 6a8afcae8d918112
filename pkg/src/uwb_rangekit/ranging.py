"""Clock models, two-way-ranging exchanges and distance estimators.

Timestamps are integer device ticks on a 40-bit wrapping counter. Durations
are unwrapped modulo 2**40 before use, so any single span must stay below
2**40 ticks (about 17.2 s at the default tick).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_TICK_S = 15.65e-12
TICK_BITS = 40
TICK_WRAP = 1 << TICK_BITS
MAX_SKEW_PPM = 100.0

# keeps exact half-tick times from flipping on representation error
_ROUND_GUARD = 1e-6


class RangingMode(enum.Enum):
    DS_TWR = "ds-twr"
    SS_TWR = "ss-twr"


class Failure(str, enum.Enum):
    DEGENERATE = "degenerate_exchange"
    OVERFLOW = "overflow"
    INCOMPLETE = "incomplete_exchange"
    NO_SIGNAL = "no_signal"
    STS_REJECTED = "sts_rejected"
    JAMMED = "jammed"


class TickOverflowError(ValueError):
    """A duration does not fit the 40-bit tick counter."""


@dataclass(frozen=True)
class ClockModel:
    offset_ticks: int = 0
    skew_ppm: float = 0.0
    tick_seconds: float = DEFAULT_TICK_S
    max_skew_ppm: float = MAX_SKEW_PPM

    def __post_init__(self) -> None:
        if not self.tick_seconds > 0:
            raise ValueError(f"tick_seconds must be positive, got {self.tick_seconds}")
        if abs(self.skew_ppm) > self.max_skew_ppm:
            raise ValueError(
                f"|skew_ppm| = {abs(self.skew_ppm)} exceeds bound {self.max_skew_ppm}"
            )

    @property
    def rate(self) -> float:
        return 1.0 + self.skew_ppm * 1e-6

    def ticks_at(self, true_time_s: float) -> int:
        """Unwrapped counter value at ``true_time_s``, to the nearest tick.

        Rounding rather than truncating keeps timestamp error zero-mean, as a
        leading-edge interpolator would.
        """
        return self.offset_ticks + math.floor(
            true_time_s * self.rate / self.tick_seconds + 0.5 + _ROUND_GUARD
        )

    def time_at(self, ticks: int) -> float:
        """True time at which the (unwrapped) counter reads ``ticks``."""
        return (ticks - self.offset_ticks) * self.tick_seconds / self.rate


@dataclass(frozen=True)
class ExchangeConfig:
    mode: RangingMode = RangingMode.DS_TWR
    initiator_reply_ticks: int = 63_897_764  # ~1 ms
    responder_reply_ticks: int = 63_897_764
    channel: int | None = 9
    preamble_code: int | None = 11

    def __post_init__(self) -> None:
        if self.initiator_reply_ticks <= 0 or self.responder_reply_ticks <= 0:
            raise ValueError("reply delays must be positive")
        if self.channel is not None and self.channel not in (5, 6, 8, 9):
            raise ValueError(f"channel must be one of 5, 6, 8, 9, got {self.channel}")

    @classmethod
    def from_seconds(
        cls,
        initiator_reply_s: float,
        responder_reply_s: float,
        mode: RangingMode = RangingMode.DS_TWR,
        tick_seconds: float = DEFAULT_TICK_S,
        **kwargs,
    ) -> ExchangeConfig:
        return cls(
            mode=mode,
            initiator_reply_ticks=round(initiator_reply_s / tick_seconds),
            responder_reply_ticks=round(responder_reply_s / tick_seconds),
            **kwargs,
        )


def _span(later: int, earlier: int) -> int:
    return (later - earlier) % TICK_WRAP


@dataclass(frozen=True)
class TimestampSet:
    """The six DS-TWR timestamps, each in its owner's wrapped tick domain.

    SS-TWR exchanges leave ``tx_final``/``rx_final`` unset.
    """

    tx_poll: int
    rx_poll: int
    tx_resp: int
    rx_resp: int
    tx_final: int | None = None
    rx_final: int | None = None

    OWNERS = {
        "tx_poll": "initiator",
        "rx_poll": "responder",
        "tx_resp": "responder",
        "rx_resp": "initiator",
        "tx_final": "initiator",
        "rx_final": "responder",
    }

    @property
    def complete(self) -> bool:
        return self.tx_final is not None and self.rx_final is not None

    @property
    def round1(self) -> int:
        return _span(self.rx_resp, self.tx_poll)

    @property
    def reply1(self) -> int:
        return _span(self.tx_resp, self.rx_poll)

    @property
    def round2(self) -> int:
        if self.rx_final is None:
            raise ValueError("exchange has no final message")
        return _span(self.rx_final, self.tx_resp)

    @property
    def reply2(self) -> int:
        if self.tx_final is None:
            raise ValueError("exchange has no final message")
        return _span(self.tx_final, self.rx_resp)

    def shifted(self, initiator_ticks: int = 0, responder_ticks: int = 0) -> TimestampSet:
        """Same exchange with each device's epoch moved by a constant."""
        shift = {"initiator": initiator_ticks, "responder": responder_ticks}
        values = {}
        for name, owner in self.OWNERS.items():
            value = getattr(self, name)
            values[name] = None if value is None else (value + shift[owner]) % TICK_WRAP
        return TimestampSet(**values)


@dataclass(frozen=True)
class RangingOutcome:
    meters: float | None = None
    failure: Failure | str | None = None
    raw: TimestampSet | None = None
    tof_seconds: float | None = None

    def __post_init__(self) -> None:
        if (self.meters is None) == (self.failure is None):
            raise ValueError("an outcome is either a distance or a failure")

    @property
    def ok(self) -> bool:
        return self.meters is not None

    @classmethod
    def distance(
        cls, meters: float, raw: TimestampSet | None = None, tof_seconds: float | None = None
    ) -> RangingOutcome:
        if tof_seconds is None:
            tof_seconds = meters / SPEED_OF_LIGHT
        return cls(meters=float(meters), raw=raw, tof_seconds=tof_seconds)

    @classmethod
    def from_tof(cls, tof_seconds: float, raw: TimestampSet | None = None) -> RangingOutcome:
        return cls(meters=tof_seconds * SPEED_OF_LIGHT, raw=raw, tof_seconds=tof_seconds)

    @classmethod
    def failed(cls, reason: Failure | str, raw: TimestampSet | None = None) -> RangingOutcome:
        return cls(failure=reason, raw=raw)


def run_exchange(
    initiator: ClockModel,
    responder: ClockModel,
    true_tof_seconds: float,
    cfg: ExchangeConfig = ExchangeConfig(),
    channel_delays: Sequence[float] = (0.0, 0.0, 0.0),
) -> TimestampSet:
    """Forward-simulate one exchange and return the recorded timestamps.

    The poll leaves when the initiator counter reads its own offset (true
    time zero). Each reply is scheduled an exact number of ticks after the
    corresponding reception, in the replying device's clock. Every message
    arrives ``true_tof_seconds`` plus its own entry of ``channel_delays``
    after departure; delays may be negative to model early first-path
    detection.

    Raises ``TickOverflowError`` when a reply delay cannot be represented
    on the 40-bit counter.
    """
    if true_tof_seconds < 0:
        raise ValueError("true_tof_seconds must be non-negative")
    delays = list(channel_delays) + [0.0] * (3 - len(channel_delays))
    for reply in (cfg.initiator_reply_ticks, cfg.responder_reply_ticks):
        if reply >= TICK_WRAP // 2:
            raise TickOverflowError(f"reply delay of {reply} ticks overflows the counter")

    tx_poll = initiator.offset_ticks
    t_poll = initiator.time_at(tx_poll)
    rx_poll = responder.ticks_at(t_poll + true_tof_seconds + delays[0])
    tx_resp = rx_poll + cfg.responder_reply_ticks
    t_resp = responder.time_at(tx_resp)
    rx_resp = initiator.ticks_at(t_resp + true_tof_seconds + delays[1])

    tx_final = rx_final = None
    if cfg.mode is RangingMode.DS_TWR:
        tx_final = rx_resp + cfg.initiator_reply_ticks
        t_final = initiator.time_at(tx_final)
        rx_final = responder.ticks_at(t_final + true_tof_seconds + delays[2])
        if rx_final - tx_resp >= TICK_WRAP // 2 or tx_final - tx_poll >= TICK_WRAP // 2:
            raise TickOverflowError("exchange span overflows the counter")
    if rx_resp - tx_poll >= TICK_WRAP // 2:
        raise TickOverflowError("exchange span overflows the counter")

    def wrap(v: int | None) -> int | None:
        return None if v is None else v % TICK_WRAP

    return TimestampSet(
        tx_poll=wrap(tx_poll),
        rx_poll=wrap(rx_poll),
        tx_resp=wrap(tx_resp),
        rx_resp=wrap(rx_resp),
        tx_final=wrap(tx_final),
        rx_final=wrap(rx_final),
    )


def ds_twr_tof(round1: float, reply1: float, round2: float, reply2: float) -> float:
    """Asymmetric DS-TWR time of flight from four durations in seconds.

    Denominator is the sum of both round and both reply times.
    """
    den = round1 + round2 + reply1 + reply2
    if den <= 0:
        raise ZeroDivisionError("degenerate exchange")
    return (round1 * round2 - reply1 * reply2) / den


def ds_twr_distance(
    ts: TimestampSet,
    initiator_tick_s: float = DEFAULT_TICK_S,
    responder_tick_s: float = DEFAULT_TICK_S,
) -> RangingOutcome:
    if not ts.complete:
        return RangingOutcome.failed(Failure.INCOMPLETE, raw=ts)
    r1, p1, r2, p2 = ts.round1, ts.reply1, ts.round2, ts.reply2
    # round1/reply2 are initiator ticks, reply1/round2 responder ticks; both
    # products carry the same tick_i * tick_r factor so the numerator stays integral
    num = (r1 * r2 - p1 * p2) * initiator_tick_s * responder_tick_s
    den = (r1 + p2) * initiator_tick_s + (r2 + p1) * responder_tick_s
    if den <= 0:
        return RangingOutcome.failed(Failure.DEGENERATE, raw=ts)
    return RangingOutcome.from_tof(num / den, raw=ts)


def ss_twr_distance(
    ts: TimestampSet,
    initiator_tick_s: float = DEFAULT_TICK_S,
    responder_tick_s: float = DEFAULT_TICK_S,
) -> RangingOutcome:
    round1 = ts.round1 * initiator_tick_s
    reply1 = ts.reply1 * responder_tick_s
    if round1 < reply1:
        return RangingOutcome.failed(Failure.DEGENERATE, raw=ts)
    return RangingOutcome.from_tof((round1 - reply1) / 2.0, raw=ts)


def range_once(
    initiator: ClockModel,
    responder: ClockModel,
    true_tof_seconds: float,
    cfg: ExchangeConfig = ExchangeConfig(),
    channel_delays: Sequence[float] = (0.0, 0.0, 0.0),
) -> RangingOutcome:
    """Run an exchange and estimate the distance with the configured scheme.

    Both ends hold the same four durations once the optional fourth message
    has delivered T_round2, so the value returned here is what either side
    computes.
    """
    try:
        ts = run_exchange(initiator, responder, true_tof_seconds, cfg, channel_delays)
    except TickOverflowError:
        return RangingOutcome.failed(Failure.OVERFLOW)
    # devices only know their nominal tick; skew is invisible to them
    if cfg.mode is RangingMode.DS_TWR:
        return ds_twr_distance(ts, initiator.tick_seconds, responder.tick_seconds)
    return ss_twr_distance(ts, initiator.tick_seconds, responder.tick_seconds)


def tick_distance(tick_seconds: float = DEFAULT_TICK_S) -> float:
    """Distance light travels in one tick."""
    return tick_seconds * SPEED_OF_LIGHT
