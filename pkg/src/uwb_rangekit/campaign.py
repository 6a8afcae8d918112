"""Gimbal sweep orchestration and the recording archive format."""

from __future__ import annotations

import io
import json
import math
import os
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .channel import Position

if TYPE_CHECKING:
    from .sources import Source

RECORDING_SCHEMA = 1
RECORDING_MEMBER = "recording.json"
LOG_MEMBER = "log.txt"
# fixed member timestamp keeps archives byte-stable
_ZIP_DATE = (2020, 1, 1, 0, 0, 0)


class RecordingError(ValueError):
    """Archive or recording document is unusable."""


class CampaignAborted(RuntimeError):
    def __init__(self, message: str, recording: Recording, path: Path):
        super().__init__(message)
        self.recording = recording
        self.path = path


@dataclass(frozen=True)
class SweepPlan:
    theta_start: float = 0.0
    theta_end: float = 350.0
    theta_step: float = 10.0
    phi_start: float = 0.0
    phi_end: float = 180.0
    phi_step: float = 10.0
    samples_per_position: int = 10
    position_timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.theta_step <= 0 or self.phi_step <= 0:
            raise ValueError("sweep steps must be positive")
        if self.theta_end < self.theta_start or self.phi_end < self.phi_start:
            raise ValueError("sweep ranges must not be reversed")
        if not (0 <= self.theta_start and self.theta_end < 360):
            raise ValueError("theta range must lie in [0, 360)")
        if not (0 <= self.phi_start and self.phi_end <= 180):
            raise ValueError("phi range must lie in [0, 180]")
        if int(self.samples_per_position) != self.samples_per_position or self.samples_per_position < 1:
            raise ValueError("samples_per_position must be a positive integer")
        if self.position_timeout_s <= 0:
            raise ValueError("position_timeout_s must be positive")

    @staticmethod
    def _axis(start: float, end: float, step: float) -> list[float]:
        n = int(math.floor((end - start) / step + 1e-9))
        return [round(start + k * step, 2) for k in range(n + 1)]

    def theta_values(self) -> list[float]:
        return self._axis(self.theta_start, self.theta_end, self.theta_step)

    def phi_values(self) -> list[float]:
        return self._axis(self.phi_start, self.phi_end, self.phi_step)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SweepPlan:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sweep plan fields: {sorted(unknown)}")
        return cls(**data)


def generate_sweep(plan: SweepPlan) -> list[Position]:
    """Serpentine order: arm up at the first base angle, down at the next."""
    phis = plan.phi_values()
    out = []
    for i, theta in enumerate(plan.theta_values()):
        for phi in phis if i % 2 == 0 else reversed(phis):
            out.append(Position(theta, phi))
    return out


@dataclass(frozen=True)
class Sample:
    distance_m: float
    t_s: float


@dataclass
class Recording:
    settings: dict[str, Any]
    data: dict[Position, list[Sample]] = field(default_factory=dict)
    extras: str | None = None
    complete: bool = True

    @property
    def plan(self) -> SweepPlan:
        return SweepPlan.from_dict(self.settings["plan"])

    def positions(self) -> list[Position]:
        return list(self.data)

    def sample_count(self) -> int:
        return sum(len(v) for v in self.data.values())

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": RECORDING_SCHEMA,
            "settings": self.settings,
            "complete": self.complete,
            "data": [
                {
                    "theta": pos.theta_deg,
                    "phi": pos.phi_deg,
                    "samples": [{"d_m": s.distance_m, "t_s": s.t_s} for s in samples],
                }
                for pos, samples in self.data.items()
            ],
        }

    @classmethod
    def from_json(cls, doc: Any, extras: str | None = None) -> Recording:
        if not isinstance(doc, dict):
            raise RecordingError("recording document must be an object")
        if doc.get("schema") != RECORDING_SCHEMA:
            raise RecordingError(f"unsupported recording schema {doc.get('schema')!r}")
        try:
            data = {
                Position(entry["theta"], entry["phi"]): [
                    Sample(float(s["d_m"]), float(s["t_s"])) for s in entry["samples"]
                ]
                for entry in doc["data"]
            }
            settings = doc["settings"]
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordingError(f"malformed recording: {exc!r}") from None
        return cls(settings, data, extras, bool(doc.get("complete", True)))


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def recording_bytes(rec: Recording) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        members = [(RECORDING_MEMBER, _dumps(rec.to_json()))]
        if rec.extras is not None:
            members.append((LOG_MEMBER, rec.extras))
        for name, text in members:
            info = zipfile.ZipInfo(name, _ZIP_DATE)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, text.encode())
    return buf.getvalue()


def save_recording(rec: Recording, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(recording_bytes(rec))
    os.replace(tmp, path)


def load_recording(path: str | os.PathLike) -> Recording:
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile:
        raise RecordingError(f"{path}: not a ZIP archive") from None
    with zf:
        names = zf.namelist()
        if RECORDING_MEMBER not in names:
            raise RecordingError(f"{path}: {RECORDING_MEMBER} absent")
        try:
            doc = json.loads(zf.read(RECORDING_MEMBER))
        except (json.JSONDecodeError, UnicodeDecodeError, zipfile.BadZipFile) as exc:
            raise RecordingError(f"{path}: {RECORDING_MEMBER} unreadable: {exc}") from None
        extras = zf.read(LOG_MEMBER).decode() if LOG_MEMBER in names else None
    return Recording.from_json(doc, extras)


# -- campaign runner -----------------------------------------------------------


class SourceError(OSError):
    """A measurement source stopped delivering data."""


def journal_path(output_path: str | os.PathLike) -> Path:
    return Path(str(output_path) + ".journal")


def _read_journal(path: Path, header: dict[str, Any]) -> list[list[Sample]]:
    if not path.exists():
        return []
    lines = path.read_text().splitlines()
    if not lines or json.loads(lines[0]) != header:
        # a journal from a different run is not ours to resume
        return []
    done = []
    for line in lines[1:]:
        try:
            entry = json.loads(line)
        except json.JSONDecodeError:
            break  # torn final write
        if entry.get("index") != len(done):
            break
        done.append([Sample(s["d_m"], s["t_s"]) for s in entry["samples"]])
    return done


def run_campaign(
    plan: SweepPlan,
    source: Source,
    output_path: str | os.PathLike,
    seed: int,
    settings: dict[str, Any] | None = None,
) -> Recording:
    """Visit every sweep position, collect samples and write the archive.

    Each finished position is appended to a journal next to the output, so
    an interrupted run restarted with the same arguments continues where it
    stopped and produces the same archive.
    """
    output_path = Path(output_path)
    positions = generate_sweep(plan)
    full_settings = {
        **(settings or {}),
        "plan": plan.to_dict(),
        "seed": seed,
        "source": source.name,
    }
    header = {"journal": 1, "settings": full_settings}
    jpath = journal_path(output_path)
    done = _read_journal(jpath, header)

    with jpath.open("w") as journal:
        journal.write(_dumps(header) + "\n")
        for i, samples in enumerate(done):
            journal.write(_dumps(_journal_entry(i, samples)) + "\n")
        journal.flush()

        source.start_session({**full_settings})
        log: list[str] = []
        try:
            for index in range(len(done), len(positions)):
                pos = positions[index]
                source.move_to(pos, index)
                samples = source.collect(plan.samples_per_position, plan.position_timeout_s)
                if len(samples) > plan.samples_per_position:
                    raise SourceError(f"source returned {len(samples)} samples, asked for {plan.samples_per_position}")
                done.append(list(samples))
                journal.write(_dumps(_journal_entry(index, samples)) + "\n")
                journal.flush()
        except SourceError as exc:
            log.append(f"aborted at position {len(done)}: {exc}")
            rec = _assemble(full_settings, positions, done, complete=False, log=log)
            save_recording(rec, output_path)
            raise CampaignAborted(str(exc), rec, output_path) from exc
        finally:
            source.close()

    rec = _assemble(full_settings, positions, done, complete=True, log=None)
    save_recording(rec, output_path)
    jpath.unlink()
    return rec


def _journal_entry(index: int, samples: list[Sample]) -> dict[str, Any]:
    return {"index": index, "samples": [{"d_m": s.distance_m, "t_s": s.t_s} for s in samples]}


def _assemble(settings, positions, done, complete, log) -> Recording:
    data = {pos: (done[i] if i < len(done) else []) for i, pos in enumerate(positions)}
    return Recording(settings, data, "\n".join(log) + "\n" if log else None, complete)
