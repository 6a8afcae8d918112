"""End-to-end acceptance checks, one marker per criterion.

The conftest hook prints a PASS/FAIL line per criterion after the run.
"""

import json
import time
import zipfile

import numpy as np
import pytest

from oracles import naive_metrics, serpentine
from uwb_rangekit.campaign import (
    RECORDING_MEMBER,
    Recording,
    RecordingError,
    Sample,
    SourceError,
    SweepPlan,
    generate_sweep,
    journal_path,
    load_recording,
    run_campaign,
    save_recording,
)
from uwb_rangekit.channel import DEVICES, ENVIRONMENTS, load_profiles
from uwb_rangekit.pke import Action, PkeSession
from uwb_rangekit.ranging import (
    SPEED_OF_LIGHT,
    TICK_WRAP,
    ClockModel,
    ExchangeConfig,
    Failure,
    RangingMode,
    RangingOutcome,
    range_once,
    tick_distance,
)
from uwb_rangekit.scenario import Walk, simulate_entry_scenario
from uwb_rangekit.sources import SimulatedDevice
from uwb_rangekit.stats import compute_metrics
from uwb_rangekit.sts import AttackerModel, AttackKind, StsSession, apply_ghost_peak, forge_frames

C = SPEED_OF_LIGHT
GHOST_LO, GHOST_HI = 445, 557  # exact equal-tailed 99 % region, Binomial(10 000, 0.05)


@pytest.fixture(scope="module")
def library():
    return load_profiles()


def _truth(profile):
    return {"true_distance_m": profile.true_distance_m}


# 1 ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "DS-TWR exact to one tick at zero skew")
def test_c1_ds_twr_exactness():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    for _ in range(1000):
        d = rng.uniform(0.1, 40.0)
        reply_i, reply_r = rng.uniform(0.1e-3, 5e-3, 2)
        off_i, off_r = (int(x) for x in rng.integers(0, TICK_WRAP, 2))
        cfg = ExchangeConfig.from_seconds(reply_i, reply_r)
        out = range_once(ClockModel(offset_ticks=off_i), ClockModel(offset_ticks=off_r), d / C, cfg)
        assert abs(out.meters - d) <= tick_distance()
    assert time.perf_counter() - start < 1.0


# 2 ---------------------------------------------------------------------------


@pytest.mark.criterion(2, "DS-TWR cancels +/-20 ppm drift, SS-TWR does not")
def test_c2_drift_cancellation():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    for _ in range(500):
        d = rng.uniform(0.1, 40.0)
        reply_i, reply_r = rng.uniform(1e-3, 2e-3, 2)
        sign = rng.choice((-1.0, 1.0))
        ci, cr = ClockModel(skew_ppm=20.0 * sign), ClockModel(skew_ppm=-20.0 * sign)
        ds = range_once(ci, cr, d / C, ExchangeConfig.from_seconds(reply_i, reply_r))
        ss = range_once(ci, cr, d / C, ExchangeConfig.from_seconds(reply_i, reply_r, mode=RangingMode.SS_TWR))
        assert abs(ds.meters - d) < 0.01
        # a drift-induced negative estimate is reported as a failure, which is an error of >= d
        ss_error = abs(ss.meters - d) if ss.ok else float("inf")
        assert ss_error >= 1.0
    assert time.perf_counter() - start < 1.0


# 3 ---------------------------------------------------------------------------


def _recording(groups, truth):
    plan = SweepPlan(theta_step=90, phi_step=90)
    data = {
        pos: [Sample(float(v), 0.15 * (k + 1)) for k, v in enumerate(groups[i])]
        for i, pos in enumerate(generate_sweep(plan))
    }
    return Recording({"plan": plan.to_dict(), "true_distance_m": truth}, data)


@pytest.mark.criterion(3, "metrics equal brute-force oracle to 1e-12")
def test_c3_stats_oracle_equivalence():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    for _ in range(100):
        truth = rng.uniform(0.2, 30.0)
        groups = [
            list(truth + rng.standard_t(3, size=rng.integers(10, 80)) * rng.uniform(0.01, 0.5))
            for _ in range(12)
        ]
        rep = compute_metrics(_recording(groups, truth), min_samples=10)
        ref = naive_metrics([v for g in groups for v in g], truth, 0.10)
        assert rep.mae_m == pytest.approx(ref["mae"], rel=1e-12)
        assert rep.sd_m == pytest.approx(ref["sd"], rel=1e-12)
        assert rep.rmse_m == pytest.approx(ref["rmse"], rel=1e-12)
        assert rep.accuracy_frac == pytest.approx(ref["accuracy"], rel=1e-12)
        assert rep.rmse_m >= rep.mae_m
    assert time.perf_counter() - start < 1.0


# 4 ---------------------------------------------------------------------------


@pytest.mark.criterion(4, "684-position serpentine sweep, byte-identical resume")
def test_c4_sweep_order():
    sweep = generate_sweep(SweepPlan())
    assert len(sweep) == 684
    expected = serpentine([10.0 * i for i in range(36)], [10.0 * j for j in range(19)])
    assert [(p.theta_deg, p.phi_deg) for p in sweep] == expected


class _DropsAt(SimulatedDevice):
    def __init__(self, profile, index):
        super().__init__(profile, secure=False)
        self.drop = index

    def move_to(self, pos, index):
        if index == self.drop:
            raise SourceError("simulated link loss")
        super().move_to(pos, index)


@pytest.mark.criterion(4, "684-position serpentine sweep, byte-identical resume")
def test_c4_resume_byte_identical(tmp_path, library):
    prof = library.get_profile("iphone12pro", "lab", 5.0)
    plan = SweepPlan(theta_step=30, phi_step=20)
    run_campaign(plan, SimulatedDevice(prof, secure=False), tmp_path / "ref.zip", 11)
    out = tmp_path / "resumed.zip"
    with pytest.raises(Exception):
        run_campaign(plan, _DropsAt(prof, 40), out, 11)
    assert journal_path(out).exists()
    run_campaign(plan, SimulatedDevice(prof, secure=False), out, 11)
    assert out.read_bytes() == (tmp_path / "ref.zip").read_bytes()


# 5 ---------------------------------------------------------------------------


def _fixed_position_run(profile, tmp_path, seed, n=10_000):
    plan = SweepPlan(theta_end=0, phi_start=90, phi_end=90, samples_per_position=n, position_timeout_s=n * 0.15)
    rec = run_campaign(plan, SimulatedDevice(profile), tmp_path / f"{profile.name}.zip", seed, _truth(profile))
    rep = compute_metrics(rec)
    assert rep.n_samples == n
    return rep.mean_error_m + rep.true_distance_m, rep.sd_m


@pytest.mark.criterion(5, "mount influence: 0.35/0.36 m means, 0.013/0.017 m SDs")
def test_c5_tower_influence(tmp_path, library):
    los = library.get_profile("dw3000", "gwen-los", 0.35)
    tower = library.get_profile("dw3000", "gwen-tower", 0.35)
    mean, sd = _fixed_position_run(los, tmp_path, 51)
    assert mean == pytest.approx(0.35, abs=0.002) and sd == pytest.approx(0.013, abs=0.002)
    mean, sd = _fixed_position_run(tower, tmp_path, 52)
    assert mean == pytest.approx(0.36, abs=0.002) and sd == pytest.approx(0.017, abs=0.002)


# 6 ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def all_cells(library, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cells")
    out = {}
    seed = 600
    for device in DEVICES:
        for env in ENVIRONMENTS:
            for dist in (0.5, 5.0):
                seed += 1
                prof = library.get_profile(device, env, dist)
                rec = run_campaign(SweepPlan(), SimulatedDevice(prof, secure=False), tmp / f"{seed}.zip", seed, _truth(prof))
                out[device, env, dist] = rec
    return out


def _pooled_errors(recs):
    errs = []
    for rec in recs:
        rep = compute_metrics(rec)
        truth = rep.true_distance_m
        errs += [s.distance_m - truth for p, v in rec.data.items() if not rep.per_position[p].failed for s in v]
    return np.array(errs)


@pytest.mark.criterion(6, "calibration self-consistency over the shipped profiles")
def test_c6_pixel_failure_fraction(tmp_path, library):
    prof = library.get_profile("pixel6pro", "outside", 5.0)
    rec = run_campaign(SweepPlan(), SimulatedDevice(prof), tmp_path / "pixel.zip", 7, _truth(prof))
    rep = compute_metrics(rec)
    assert rep.n_positions == 684
    assert rep.failure_frac == pytest.approx(0.378, abs=0.03)


@pytest.mark.criterion(6, "calibration self-consistency over the shipped profiles")
def test_c6_garage_mae(all_cells):
    for (device, env, dist), rec in all_cells.items():
        if env == "garage":
            assert compute_metrics(rec).mae_m < 0.14, (device, dist)


@pytest.mark.criterion(6, "calibration self-consistency over the shipped profiles")
def test_c6_dw3000_pooled_rmse(all_cells):
    errs = _pooled_errors(rec for key, rec in all_cells.items() if key[0] == "dw3000")
    assert float(np.sqrt(np.mean(errs**2))) == pytest.approx(0.1603, abs=0.01)


@pytest.mark.criterion(6, "calibration self-consistency over the shipped profiles")
def test_c6_aggregate_mae_and_sd(all_cells):
    errs = _pooled_errors(all_cells.values())
    assert float(np.mean(np.abs(errs))) < 0.20
    for key, rec in all_cells.items():
        rep = compute_metrics(rec)
        assert rep.mae_m < 0.20, key
        assert rep.sd_m < 0.25, key


# 7 ---------------------------------------------------------------------------


@pytest.mark.criterion(7, "STS rejects keyless frames; ghost-peak rate within 99 % binomial region")
def test_c7_injection_rejected():
    rng = np.random.default_rng(7)
    sender = StsSession(bytes(range(16)))
    receiver = StsSession(bytes(range(16)))
    observed = [sender.transmit() for _ in range(8)]
    for frame in observed:
        assert receiver.receive(frame).accepted
    forged = forge_frames(rng, 10_000, receiver.preamble_code, receiver.n_bits, observed=observed)
    assert sum(receiver.receive(f).accepted for f in forged) == 0


@pytest.mark.criterion(7, "STS rejects keyless frames; ghost-peak rate within 99 % binomial region")
def test_c7_ghost_peak_rate():
    rng = np.random.default_rng(77)
    attacker = AttackerModel(AttackKind.GHOST_PEAK, ghost_success_prob=0.05)
    honest = RangingOutcome.distance(5.0)
    hits = sum(apply_ghost_peak(rng, attacker, honest).meters < 5.0 for _ in range(10_000))
    assert GHOST_LO <= hits <= GHOST_HI


# 8 ---------------------------------------------------------------------------


def _feed(session, values):
    return [session.ingest(RangingOutcome.failed(Failure.NO_SIGNAL) if v is None else RangingOutcome.distance(v))
            for v in values]


def _unlock_guards_hold():
    attempts = ([0.1], [None] * 10 + [0.1], [-0.5] * 12 + [0.2], [5.0] * 9 + [-3.0], [5.0] * 9 + [0.0])
    return not any(x.action is Action.UNLOCK for a in attempts for x in _feed(PkeSession(), a))


@pytest.mark.criterion(8, "keyless-entry safety properties")
def test_c8_single_outlier_never_unlocks():
    s = PkeSession()
    decisions = _feed(s, [5.0] * 9 + [-3.0])
    assert all(x.action is Action.NO_ACTION for x in decisions)
    assert len(s.valid_window) == 9
    assert _unlock_guards_hold()


@pytest.mark.criterion(8, "keyless-entry safety properties")
def test_c8_window_mutation_is_caught(monkeypatch):
    monkeypatch.setattr(PkeSession, "_window_full", lambda self: True)
    assert not _unlock_guards_hold()


@pytest.mark.criterion(8, "keyless-entry safety properties")
def test_c8_three_negatives_suspend():
    s = PkeSession()
    decisions = _feed(s, [4.0] * 5 + [-1.0] + [4.0] * 10 + [-2.0] + [4.0] * 12 + [-1.5])
    assert decisions[-1].action is Action.SUSPEND
    assert all(x.action is Action.NO_ACTION for x in decisions[:-1])


@pytest.mark.criterion(8, "keyless-entry safety properties")
def test_c8_ghost_peak_at_five_metres():
    attacker = AttackerModel(AttackKind.GHOST_PEAK, ghost_success_prob=0.05, reduction_meters=3.0)
    result = simulate_entry_scenario(Walk.stationary(5.0, 10_000 * 0.15), attacker=attacker, seed=8)
    assert len(result.entries) == 10_000
    assert result.unlocks == 0


# 9 ---------------------------------------------------------------------------


@pytest.mark.criterion(9, "recording archive round trip and corrupt-archive errors")
def test_c9_round_trip(tmp_path, library):
    rec = run_campaign(SweepPlan(), SimulatedDevice(library.get_profile("galaxyS21u", "outside", 5.0), secure=False),
                       tmp_path / "r.zip", 9)
    assert len(rec.data) == 684
    save_recording(rec, tmp_path / "copy.zip")
    back = load_recording(tmp_path / "copy.zip")
    assert back == rec
    assert back.positions() == generate_sweep(SweepPlan())


@pytest.mark.criterion(9, "recording archive round trip and corrupt-archive errors")
def test_c9_corrupt_archives(tmp_path):
    junk = tmp_path / "junk.zip"
    junk.write_bytes(b"\x00" * 64)
    with pytest.raises(RecordingError, match="not a ZIP"):
        load_recording(junk)
    missing = tmp_path / "missing.zip"
    with zipfile.ZipFile(missing, "w") as zf:
        zf.writestr("log.txt", "x")
    with pytest.raises(RecordingError, match="recording.json absent"):
        load_recording(missing)
    garbled = tmp_path / "garbled.zip"
    with zipfile.ZipFile(garbled, "w") as zf:
        zf.writestr(RECORDING_MEMBER, "{")
    with pytest.raises(RecordingError, match="unreadable"):
        load_recording(garbled)
    wrong = tmp_path / "wrong.zip"
    with zipfile.ZipFile(wrong, "w") as zf:
        zf.writestr(RECORDING_MEMBER, json.dumps({"schema": 1, "settings": {}, "data": [{"theta": 0}]}))
    with pytest.raises(RecordingError, match="malformed"):
        load_recording(wrong)
