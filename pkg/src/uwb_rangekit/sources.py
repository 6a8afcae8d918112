"""Measurement sources a campaign can drive."""

from __future__ import annotations

import queue
import threading
import time
from abc import ABC, abstractmethod
from typing import IO, Any

import numpy as np

from .campaign import Recording, Sample, SourceError
from .channel import EnvironmentProfile, Position, sample_batch
from .ranging import SPEED_OF_LIGHT, ClockModel, ExchangeConfig, range_once
from .sts import (
    AttackerModel,
    AttackKind,
    StsSession,
    apply_cicada,
    apply_ghost_peak,
    forge_frames,
)

DEFAULT_EXCHANGE_S = 0.150


class Source(ABC):
    """Plugin interface: a session, a cursor over positions, and sample collection."""

    name = "source"

    @abstractmethod
    def start_session(self, settings: dict[str, Any]) -> None: ...

    def move_to(self, pos: Position, index: int) -> None:
        """Called before each position; physical sources may ignore it."""

    @abstractmethod
    def collect(self, n: int, timeout_s: float) -> list[Sample]:
        """At most ``n`` samples gathered within ``timeout_s``."""

    def close(self) -> None:
        pass


class SimulatedDevice(Source):
    """Channel model + tick-level DS-TWR + STS-authenticated frames.

    Time is simulated: each exchange attempt takes ``exchange_s``, so the
    timeout bounds the number of attempts rather than wall-clock time. The
    random stream is reseeded per position from ``(seed, index)``, which
    makes every position reproducible on its own.
    """

    name = "simulated"

    def __init__(
        self,
        profile: EnvironmentProfile,
        exchange_s: float = DEFAULT_EXCHANGE_S,
        attacker: AttackerModel | None = None,
        sts_key: bytes = bytes(16),
        initiator_clock: ClockModel = ClockModel(skew_ppm=4.0),
        responder_clock: ClockModel = ClockModel(skew_ppm=-3.0),
        cfg: ExchangeConfig | None = None,
        secure: bool = True,
    ):
        if exchange_s <= 0:
            raise ValueError("exchange_s must be positive")
        self.profile = profile
        self.exchange_s = exchange_s
        self.attacker = attacker
        self.sts_key = sts_key
        self.initiator_clock = initiator_clock
        self.responder_clock = responder_clock
        self.cfg = cfg or ExchangeConfig.from_seconds(1e-3, 1e-3)
        self.secure = secure
        self._seed: int | None = None
        self._rng: np.random.Generator | None = None
        self._pos: Position | None = None
        self.injected_accepted = 0
        self.injected_rejected = 0

    def start_session(self, settings: dict[str, Any]) -> None:
        self._seed = int(settings.get("seed", 0))
        self._initiator = StsSession(self.sts_key)
        self._responder = StsSession(self.sts_key)

    def move_to(self, pos: Position, index: int) -> None:
        if self._seed is None:
            raise SourceError("session not started")
        self._pos = pos
        self._rng = np.random.default_rng([self._seed, index])

    def _secure_exchange(self) -> bool:
        """Poll/response/final through the STS sessions; True when all validate."""
        ok = True
        for tx, rx in ((self._initiator, self._responder), (self._responder, self._initiator),
                       (self._initiator, self._responder)):
            if self.attacker is not None and self.attacker.kind is AttackKind.PREAMBLE_INJECTION:
                for forged in forge_frames(self._rng, self.attacker.injected_per_cycle, rx.preamble_code,
                                           rx.n_bits, claim_m=self.attacker.injected_claim_m):
                    if rx.receive(forged):
                        self.injected_accepted += 1
                    else:
                        self.injected_rejected += 1
            ok &= rx.receive(tx.transmit()).accepted
        return ok

    def measure(self, channel_value: float):
        err = channel_value - self.profile.true_distance_m
        delay = err / SPEED_OF_LIGHT
        out = range_once(
            self.initiator_clock,
            self.responder_clock,
            self.profile.true_distance_m / SPEED_OF_LIGHT,
            self.cfg,
            (delay, delay, delay),
        )
        if self.attacker is not None and out.ok:
            if self.attacker.kind is AttackKind.GHOST_PEAK:
                out = apply_ghost_peak(self._rng, self.attacker, out)
            elif self.attacker.kind is AttackKind.CICADA:
                out = apply_cicada(self._rng, self.attacker, out)
        return out

    def collect(self, n: int, timeout_s: float) -> list[Sample]:
        if self._rng is None or self._pos is None:
            raise SourceError("collect called before move_to")
        attempts = int(timeout_s / self.exchange_s + 1e-9)
        values = sample_batch(self.profile, self._pos, self._rng, attempts)
        samples: list[Sample] = []
        for k, value in enumerate(values):
            if len(samples) >= n:
                break
            if np.isnan(value):
                continue
            if self.secure and not self._secure_exchange():
                continue
            out = self.measure(float(value))
            if out.ok:
                samples.append(Sample(out.meters, round((k + 1) * self.exchange_s, 6)))
        return samples


class ReplaySource(Source):
    """Plays a stored recording back position by position."""

    name = "replay"

    def __init__(self, recording: Recording):
        self.recording = recording
        self._pos: Position | None = None

    def start_session(self, settings: dict[str, Any]) -> None:
        pass

    def move_to(self, pos: Position, index: int) -> None:
        if pos not in self.recording.data:
            raise SourceError(f"recording has no data for {pos}")
        self._pos = pos

    def collect(self, n: int, timeout_s: float) -> list[Sample]:
        if self._pos is None:
            raise SourceError("collect called before move_to")
        return [s for s in self.recording.data[self._pos] if s.t_s <= timeout_s][:n]


class SerialDevice(Source):
    """External ranging device on a line-oriented byte stream.

    Protocol: the controller writes ``RNG <n>``; the device answers with up
    to n lines ``D <meters>`` or ``F <reason>`` and finishes with ``OK``.
    A reader thread feeds a queue so the controller can enforce the timeout.
    """

    name = "serial"

    def __init__(self, reader: IO[str], writer: IO[str], clock=time.monotonic):
        self._reader = reader
        self._writer = writer
        self._clock = clock
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._thread: threading.Thread | None = None
        self.failures: list[str] = []

    def _pump(self) -> None:
        try:
            for line in self._reader:
                self._lines.put(line.strip())
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def start_session(self, settings: dict[str, Any]) -> None:
        if self._thread is None:
            self._thread = threading.Thread(target=self._pump, daemon=True)
            self._thread.start()

    def _drain(self) -> None:
        while True:
            try:
                if self._lines.get_nowait() is None:
                    raise SourceError("device stream closed")
            except queue.Empty:
                return

    def collect(self, n: int, timeout_s: float) -> list[Sample]:
        if self._thread is None:
            raise SourceError("session not started")
        self._drain()
        try:
            self._writer.write(f"RNG {n}\n")
            self._writer.flush()
        except (OSError, ValueError) as exc:
            raise SourceError(f"write failed: {exc}") from exc
        start = self._clock()
        samples: list[Sample] = []
        while True:
            remaining = timeout_s - (self._clock() - start)
            if remaining <= 0:
                return samples
            try:
                line = self._lines.get(timeout=remaining)
            except queue.Empty:
                return samples
            if line is None:
                raise SourceError("device stream closed")
            if line == "OK":
                return samples
            kind, _, rest = line.partition(" ")
            if kind == "D" and len(samples) < n:
                try:
                    samples.append(Sample(float(rest), round(self._clock() - start, 6)))
                except ValueError:
                    raise SourceError(f"bad distance line {line!r}") from None
            elif kind == "F":
                self.failures.append(rest)
            elif kind != "D":
                raise SourceError(f"unexpected line {line!r}")
