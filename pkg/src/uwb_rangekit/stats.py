"""Error metrics, polar slices and recording comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .campaign import Recording
from .channel import Position

DEFAULT_BAND_M = 0.10
DEFAULT_MIN_SAMPLES = 10


@dataclass(frozen=True)
class PositionStats:
    n: int
    mean: float | None
    sd: float | None
    failed: bool


@dataclass
class MetricsReport:
    """Sweep statistics; error metrics are ``None`` when nothing was measured.

    ``sd_m`` is the population SD of all kept distances pooled together;
    ``mean_sd_m`` averages the per-position SDs instead.
    """

    true_distance_m: float
    band_m: float
    min_samples: int
    mae_m: float | None
    sd_m: float | None
    rmse_m: float | None
    mean_error_m: float | None
    mean_sd_m: float | None
    accuracy_frac: float | None
    failure_frac: float
    n_samples: int
    n_positions: int
    n_failed: int
    per_position: dict[Position, PositionStats] = field(default_factory=dict)
    polar_slices: dict[float, list[tuple[float, float]]] = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return self.n_samples > 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "true_distance_m": self.true_distance_m,
            "band_m": self.band_m,
            "min_samples": self.min_samples,
            "mae_m": self.mae_m,
            "sd_m": self.sd_m,
            "rmse_m": self.rmse_m,
            "mean_error_m": self.mean_error_m,
            "mean_sd_m": self.mean_sd_m,
            "accuracy_frac": self.accuracy_frac,
            "failure_frac": self.failure_frac,
            "n_samples": self.n_samples,
            "n_positions": self.n_positions,
            "n_failed": self.n_failed,
            "per_position": [
                {"theta": p.theta_deg, "phi": p.phi_deg, "n": s.n, "mean": s.mean, "sd": s.sd, "failed": s.failed}
                for p, s in self.per_position.items()
            ],
            "polar_slices": [
                {"phi": phi, "points": [[t, m] for t, m in pts]} for phi, pts in sorted(self.polar_slices.items())
            ],
        }


def _true_distance(rec: Recording, true_distance_m: float | None) -> float:
    if true_distance_m is not None:
        return float(true_distance_m)
    try:
        return float(rec.settings["true_distance_m"])
    except (KeyError, TypeError, ValueError):
        raise ValueError("true distance not given and not recorded in settings") from None


def position_stats(rec: Recording, min_samples: int = DEFAULT_MIN_SAMPLES) -> dict[Position, PositionStats]:
    out = {}
    for pos, samples in rec.data.items():
        d = np.array([s.distance_m for s in samples], dtype=float)
        n = len(d)
        out[pos] = PositionStats(
            n=n,
            mean=float(d.mean()) if n else None,
            sd=float(d.std()) if n else None,
            failed=n < min_samples,
        )
    return out


def _slices(stats: dict[Position, PositionStats]) -> dict[float, list[tuple[float, float]]]:
    slices: dict[float, list[tuple[float, float]]] = {}
    for pos, s in stats.items():
        slices.setdefault(pos.phi_deg, [])
        if not s.failed:
            slices[pos.phi_deg].append((pos.theta_deg, s.mean))
    return {phi: sorted(pts) for phi, pts in slices.items()}


def compute_metrics(
    rec: Recording,
    true_distance_m: float | None = None,
    accuracy_band_m: float = DEFAULT_BAND_M,
    min_samples: int = DEFAULT_MIN_SAMPLES,
) -> MetricsReport:
    """Metrics over all samples from positions with at least ``min_samples``.

    Failed positions only count towards ``failure_frac``.
    """
    if accuracy_band_m < 0:
        raise ValueError("accuracy band must be non-negative")
    truth = _true_distance(rec, true_distance_m)
    stats = position_stats(rec, min_samples)
    kept = [pos for pos, s in stats.items() if not s.failed]
    d = np.array([s.distance_m for pos in kept for s in rec.data[pos]], dtype=float)
    n_pos = len(stats)
    n_failed = n_pos - len(kept)
    report = MetricsReport(
        true_distance_m=truth,
        band_m=accuracy_band_m,
        min_samples=min_samples,
        mae_m=None,
        sd_m=None,
        rmse_m=None,
        mean_error_m=None,
        mean_sd_m=None,
        accuracy_frac=None,
        failure_frac=n_failed / n_pos if n_pos else 0.0,
        n_samples=len(d),
        n_positions=n_pos,
        n_failed=n_failed,
        per_position=stats,
        polar_slices=_slices(stats),
    )
    if len(d):
        e = d - truth
        report.mae_m = float(np.mean(np.abs(e)))
        report.sd_m = float(np.std(d))
        # scale first so tiny errors do not underflow when squared
        scale = float(np.max(np.abs(e)))
        report.rmse_m = scale * math.sqrt(np.mean((e / scale) ** 2)) if scale > 0 else 0.0
        report.mean_error_m = float(np.mean(e))
        report.accuracy_frac = float(np.mean(np.abs(e) <= accuracy_band_m))
        report.mean_sd_m = float(np.mean([stats[p].sd for p in kept]))
    return report


def polar_slice(
    rec: Recording, phi_deg: float, min_samples: int = DEFAULT_MIN_SAMPLES
) -> list[tuple[float, float]]:
    """(theta, mean distance) along one arm angle; failed positions are left out."""
    phi = Position(0.0, phi_deg).phi_deg
    if phi not in {p.phi_deg for p in rec.data}:
        raise ValueError(f"phi {phi_deg} is not part of the recorded plan")
    return _slices(position_stats(rec, min_samples))[phi]


@dataclass(frozen=True)
class SliceSummary:
    mean_m: float
    sd_m: float
    n_positions: int


def slice_summary(rec: Recording, phi_deg: float, min_samples: int = DEFAULT_MIN_SAMPLES) -> SliceSummary:
    """Mean of the per-position means along a slice and SD of its samples."""
    points = polar_slice(rec, phi_deg, min_samples)
    if not points:
        raise ValueError(f"no usable positions at phi {phi_deg}")
    kept = {theta for theta, _ in points}
    phi = Position(0.0, phi_deg).phi_deg
    d = [s.distance_m for p, v in rec.data.items() if p.phi_deg == phi and p.theta_deg in kept for s in v]
    return SliceSummary(float(np.mean([m for _, m in points])), float(np.std(d)), len(points))


@dataclass(frozen=True)
class Comparison:
    """``b - a``: mean of per-position mean deltas and change in pooled SD."""

    mean_delta_m: float | None
    sd_delta_m: float | None
    per_position_deltas: dict[Position, float]


def compare_recordings(a: Recording, b: Recording) -> Comparison:
    """Compare two runs of the same plan over positions measured in both."""
    if a.settings.get("plan") != b.settings.get("plan") or set(a.data) != set(b.data):
        raise ValueError("recordings were made with different sweep plans")
    deltas = {}
    pooled_a: list[float] = []
    pooled_b: list[float] = []
    for pos, sa in a.data.items():
        sb = b.data[pos]
        if sa and sb:
            da = [s.distance_m for s in sa]
            db = [s.distance_m for s in sb]
            deltas[pos] = float(np.mean(db) - np.mean(da))
            pooled_a += da
            pooled_b += db
    if not deltas:
        return Comparison(None, None, deltas)
    return Comparison(
        float(np.mean(list(deltas.values()))),
        float(np.std(pooled_b) - np.std(pooled_a)),
        deltas,
    )
