"""Software UWB ranging lab: tick-level two-way ranging with STS, a calibrated
orientation-dependent channel model, gimbal sweep campaigns, sweep statistics
and a keyless-entry decision engine."""

from .campaign import Recording, Sample, SweepPlan, generate_sweep, load_recording, run_campaign, save_recording
from .channel import EnvironmentProfile, Position, load_profiles, sample_measurement, shielding_gain
from .pke import PkeDecision, PkePolicy, PkeSession
from .ranging import (
    ClockModel,
    ExchangeConfig,
    RangingMode,
    RangingOutcome,
    TimestampSet,
    ds_twr_distance,
    run_exchange,
    ss_twr_distance,
)
from .stats import MetricsReport, compare_recordings, compute_metrics, polar_slice
from .sts import AttackerModel, StsKey, generate_sts, validate_frame

__version__ = "0.1.0"

__all__ = [
    "AttackerModel",
    "ClockModel",
    "EnvironmentProfile",
    "ExchangeConfig",
    "MetricsReport",
    "PkeDecision",
    "PkePolicy",
    "PkeSession",
    "Position",
    "RangingMode",
    "RangingOutcome",
    "Recording",
    "Sample",
    "StsKey",
    "SweepPlan",
    "TimestampSet",
    "compare_recordings",
    "compute_metrics",
    "ds_twr_distance",
    "generate_sts",
    "generate_sweep",
    "load_profiles",
    "load_recording",
    "polar_slice",
    "run_campaign",
    "run_exchange",
    "sample_measurement",
    "save_recording",
    "shielding_gain",
    "ss_twr_distance",
    "validate_frame",
]
