"""Scrambled Timestamp Sequence generation/validation and attacker models.

The STS expansion is AES-128 in counter mode keyed by the session secret,
with the 64-bit frame counter in the upper half of the initial counter
block. Only determinism and unpredictability matter to the rest of the
toolkit.
"""

from __future__ import annotations

import enum
import hmac
import threading
import functools
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .ranging import Failure, RangingOutcome

STS_BITS = 4096
KEY_BYTES = 16
COUNTER_LIMIT = 1 << 64


@dataclass(frozen=True)
class StsKey:
    key: bytes
    counter: int = 0

    def __post_init__(self) -> None:
        if len(self.key) != KEY_BYTES:
            raise ValueError(f"STS key must be {KEY_BYTES} bytes, got {len(self.key)}")
        if not 0 <= self.counter < COUNTER_LIMIT:
            raise ValueError("STS counter must fit in 64 bits")

    def advanced(self, steps: int = 1) -> StsKey:
        return StsKey(self.key, self.counter + steps)


_ciphers = threading.local()


def _block_cipher(key: bytes):
    # ECB over explicit counter blocks is AES-CTR without per-frame cipher
    # setup; encryptor contexts are not shared between threads
    cache = _ciphers.__dict__.setdefault("by_key", {})
    enc = cache.get(key)
    if enc is None:
        if len(cache) > 256:
            cache.clear()
        enc = cache[key] = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc


@functools.lru_cache(maxsize=8)
def _block_template(n_blocks: int) -> np.ndarray:
    blocks = np.zeros((n_blocks, 2), ">u8")
    blocks[:, 1] = np.arange(n_blocks)
    blocks.setflags(write=False)
    return blocks


def generate_sts(key: StsKey, n_bits: int = STS_BITS) -> bytes:
    """Packed STS bits for ``(key, counter)``; big-endian bit order."""
    if n_bits <= 0 or n_bits % 128:
        raise ValueError("STS length must be a positive multiple of 128 bits")
    blocks = _block_template(n_bits // 128).copy()
    blocks[:, 0] = key.counter
    return _block_cipher(key.key).update(blocks.tobytes())


def bit_difference(a: bytes, b: bytes) -> float:
    """Fraction of differing bits between two equal-length sequences."""
    if len(a) != len(b):
        raise ValueError("sequences differ in length")
    diff = np.unpackbits(np.frombuffer(a, np.uint8) ^ np.frombuffer(b, np.uint8))
    return float(diff.mean())


class Origin(enum.Enum):
    LEGITIMATE = "legitimate"
    ATTACKER = "attacker"


@dataclass(frozen=True)
class Frame:
    preamble_code: int
    sts: bytes
    payload: dict[str, Any] = field(default_factory=dict)
    origin: Origin = Origin.LEGITIMATE


class Reject(str, enum.Enum):
    STS_MISMATCH = "sts_mismatch"
    LENGTH_MISMATCH = "length_mismatch"
    PREAMBLE_MISMATCH = "preamble_mismatch"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Reject | None = None

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(True)


def validate_frame(
    frame: Frame, expected: StsKey, n_bits: int = STS_BITS, preamble_code: int | None = None
) -> Verdict:
    if preamble_code is not None and frame.preamble_code != preamble_code:
        return Verdict(False, Reject.PREAMBLE_MISMATCH)
    if len(frame.sts) * 8 != n_bits:
        return Verdict(False, Reject.LENGTH_MISMATCH)
    if not hmac.compare_digest(frame.sts, generate_sts(expected, n_bits)):
        return Verdict(False, Reject.STS_MISMATCH)
    return ACCEPT


class StsSession:
    """One device's view of a secured ranging session.

    Every frame on the link, sent or accepted, consumes one counter value,
    so two sessions started from the same key stay in lockstep. Rejected
    frames leave the counter untouched.
    """

    def __init__(self, key: bytes, counter: int = 0, preamble_code: int = 11, n_bits: int = STS_BITS):
        self._key = StsKey(key, counter)
        self.preamble_code = preamble_code
        self.n_bits = n_bits
        self.accepted = 0
        self.rejected = 0

    @property
    def counter(self) -> int:
        return self._key.counter

    def transmit(self, payload: dict[str, Any] | None = None) -> Frame:
        frame = Frame(self.preamble_code, generate_sts(self._key, self.n_bits), dict(payload or {}))
        self._key = self._key.advanced()
        return frame

    def receive(self, frame: Frame) -> Verdict:
        verdict = validate_frame(frame, self._key, self.n_bits, self.preamble_code)
        if verdict.accepted:
            self._key = self._key.advanced()
            self.accepted += 1
        else:
            self.rejected += 1
        return verdict


class AttackKind(enum.Enum):
    PREAMBLE_INJECTION = "preamble-injection"
    GHOST_PEAK = "ghost-peak"
    CICADA = "cicada"


@dataclass(frozen=True)
class AttackerModel:
    kind: AttackKind
    ghost_success_prob: float = 0.05
    reduction_meters: float = 3.0
    floor_m: float = -3.0
    pulse_interval_s: float = 1e-3
    cicada_fail_prob: float = 0.2
    cicada_sigma_m: float = 0.5
    injected_per_cycle: int = 1
    injected_claim_m: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.ghost_success_prob <= 1.0:
            raise ValueError("ghost_success_prob must lie in [0, 1]")
        if not 0.0 <= self.cicada_fail_prob <= 1.0:
            raise ValueError("cicada_fail_prob must lie in [0, 1]")
        if self.reduction_meters < 0 or self.cicada_sigma_m < 0:
            raise ValueError("attack magnitudes must be non-negative")
        if self.pulse_interval_s <= 0:
            raise ValueError("pulse_interval_s must be positive")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AttackerModel:
        data = dict(data)
        data["kind"] = AttackKind(data["kind"])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["kind"] = self.kind.value
        return out


def forge_frames(
    rng: np.random.Generator,
    count: int,
    preamble_code: int,
    n_bits: int = STS_BITS,
    observed: list[Frame] | None = None,
    claim_m: float = 0.1,
) -> list[Frame]:
    """Frames an attacker without the key can produce.

    The preamble is public, so it is always right. The STS is either a
    random guess or a replay of a previously observed legitimate frame.
    """
    frames = []
    for i in range(count):
        if observed and i % 2:
            sts = observed[int(rng.integers(len(observed)))].sts
        else:
            sts = rng.bytes(n_bits // 8)
        frames.append(Frame(preamble_code, sts, {"distance_m": claim_m}, Origin.ATTACKER))
    return frames


def apply_ghost_peak(
    rng: np.random.Generator, model: AttackerModel, honest: RangingOutcome
) -> RangingOutcome:
    """Bernoulli distance reduction by an early spurious path.

    A success shortens the distance by a uniform draw in (0, reduction_meters],
    clamped at ``model.floor_m``. Failed outcomes pass through untouched: there
    is nothing to shorten.
    """
    if not honest.ok:
        return honest
    if rng.random() >= model.ghost_success_prob:
        return honest
    cut = model.reduction_meters * (1.0 - rng.random())
    return RangingOutcome.distance(max(honest.meters - cut, model.floor_m), raw=honest.raw)


def apply_cicada(
    rng: np.random.Generator, model: AttackerModel, honest: RangingOutcome
) -> RangingOutcome:
    if not honest.ok:
        return honest
    if rng.random() < model.cicada_fail_prob:
        return RangingOutcome.failed(Failure.JAMMED, raw=honest.raw)
    noisy = honest.meters + rng.normal(0.0, model.cicada_sigma_m)
    return RangingOutcome.distance(max(noisy, model.floor_m), raw=honest.raw)
