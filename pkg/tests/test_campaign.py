import json
import queue
import zipfile

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import serpentine
from uwb_rangekit.campaign import (
    RECORDING_MEMBER,
    CampaignAborted,
    Recording,
    RecordingError,
    Sample,
    SourceError,
    SweepPlan,
    generate_sweep,
    journal_path,
    load_recording,
    recording_bytes,
    run_campaign,
    save_recording,
)
from uwb_rangekit.channel import AngularFunction, EnvironmentProfile, Position, load_profiles
from uwb_rangekit.sources import ReplaySource, SerialDevice, SimulatedDevice

QUICK = SweepPlan(theta_step=90, phi_step=90)


def test_default_sweep_matches_procedure():
    sweep = generate_sweep(SweepPlan())
    assert len(sweep) == 684 == 36 * 19
    assert sweep[:3] == [Position(0, 0), Position(0, 10), Position(0, 20)]
    assert sweep[19] == Position(10, 180)
    assert [(p.theta_deg, p.phi_deg) for p in sweep] == serpentine(
        [10.0 * i for i in range(36)], [10.0 * j for j in range(19)]
    )
    assert sorted({p.theta_deg for p in sweep}) == [10.0 * i for i in range(36)]


def test_single_position_plan():
    plan = SweepPlan(theta_end=0, phi_end=0)
    assert generate_sweep(plan) == [Position(0, 0)]
    assert generate_sweep(SweepPlan(theta_step=360, phi_step=360)) == [Position(0, 0)]


@settings(max_examples=60)
@given(st.sampled_from([5, 10, 15, 30, 45, 90, 120]), st.sampled_from([5, 10, 30, 45, 60, 90, 180]))
def test_sweep_coverage_and_adjacency(ts, ps):
    plan = SweepPlan(theta_step=ts, phi_step=ps)
    sweep = generate_sweep(plan)
    grid = {Position(t, p) for t in plan.theta_values() for p in plan.phi_values()}
    assert len(sweep) == len(grid) and set(sweep) == grid
    for a, b in zip(sweep, sweep[1:]):
        dt, dp = abs(a.theta_deg - b.theta_deg), abs(a.phi_deg - b.phi_deg)
        assert (dt, dp) in ((0, ps), (ts, 0))


def test_plan_validation():
    for bad in (dict(theta_step=0), dict(theta_end=360), dict(phi_end=181), dict(samples_per_position=0),
                dict(position_timeout_s=0), dict(theta_start=20, theta_end=10)):
        with pytest.raises(ValueError):
            SweepPlan(**bad)
    with pytest.raises(ValueError):
        SweepPlan.from_dict({"theta_step": 10, "colour": "red"})
    assert SweepPlan.from_dict(SweepPlan().to_dict()) == SweepPlan()


def _recording(n_samples=10, plan=SweepPlan()):
    data = {
        pos: [Sample(5.0 + 0.001 * (i % 7) + 0.0001 * k, round(0.15 * (k + 1), 6)) for k in range(n_samples)]
        for i, pos in enumerate(generate_sweep(plan))
    }
    return Recording({"plan": plan.to_dict(), "true_distance_m": 5.0, "seed": 0}, data)


def test_round_trip_full_recording(tmp_path):
    rec = _recording()
    assert rec.sample_count() == 6840
    save_recording(rec, tmp_path / "r.zip")
    assert load_recording(tmp_path / "r.zip") == rec


def test_round_trip_empty_recording(tmp_path):
    rec = Recording({"plan": QUICK.to_dict()}, {p: [] for p in generate_sweep(QUICK)})
    save_recording(rec, tmp_path / "e.zip")
    assert load_recording(tmp_path / "e.zip") == rec


def test_round_trip_with_log_and_incomplete(tmp_path):
    rec = _recording(plan=QUICK)
    rec.extras, rec.complete = "aborted\n", False
    save_recording(rec, tmp_path / "l.zip")
    back = load_recording(tmp_path / "l.zip")
    assert back == rec and back.extras == "aborted\n" and not back.complete


def test_archive_layout_and_stability(tmp_path):
    rec = _recording(plan=QUICK)
    assert recording_bytes(rec) == recording_bytes(rec)
    save_recording(rec, tmp_path / "r.zip")
    with zipfile.ZipFile(tmp_path / "r.zip") as zf:
        doc = json.loads(zf.read(RECORDING_MEMBER))
    assert doc["schema"] == 1
    assert [(e["theta"], e["phi"]) for e in doc["data"]] == [(p.theta_deg, p.phi_deg) for p in generate_sweep(QUICK)]
    assert set(doc["data"][0]["samples"][0]) == {"d_m", "t_s"}


def test_missing_member(tmp_path):
    path = tmp_path / "bad.zip"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("other.txt", "hello")
    with pytest.raises(RecordingError, match="recording.json absent"):
        load_recording(path)


def test_not_a_zip(tmp_path):
    path = tmp_path / "junk.zip"
    path.write_bytes(b"this is not an archive")
    with pytest.raises(RecordingError, match="not a ZIP"):
        load_recording(path)


def test_truncated_archive(tmp_path):
    path = tmp_path / "t.zip"
    path.write_bytes(recording_bytes(_recording(plan=QUICK))[:60])
    with pytest.raises(RecordingError):
        load_recording(path)


@pytest.mark.parametrize(
    "payload",
    [b"{broken", b'{"schema": 2, "settings": {}, "data": []}', b'{"schema": 1, "settings": {}, "data": [{"theta": 400, "phi": 0, "samples": []}]}', b"[]"],
)
def test_bad_member_content(tmp_path, payload):
    path = tmp_path / "b.zip"
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(RECORDING_MEMBER, payload)
    with pytest.raises(RecordingError):
        load_recording(path)


def _quiet(d=5.0, p_fail=0.0):
    return EnvironmentProfile(
        "custom", d, sigma=AngularFunction.constant(0.02), p_fail=AngularFunction.constant(p_fail)
    )


def test_every_position_gets_ten(tmp_path):
    rec = run_campaign(SweepPlan(theta_step=30, phi_step=30), SimulatedDevice(_quiet()), tmp_path / "c.zip", 1)
    assert all(len(v) == 10 for v in rec.data.values())
    assert set(rec.data) == set(generate_sweep(SweepPlan(theta_step=30, phi_step=30)))
    assert not journal_path(tmp_path / "c.zip").exists()
    assert load_recording(tmp_path / "c.zip") == rec


def test_timeout_bounds_attempts(tmp_path):
    plan = SweepPlan(theta_end=0, phi_end=0, samples_per_position=50, position_timeout_s=3.0)
    rec = run_campaign(plan, SimulatedDevice(_quiet()), tmp_path / "c.zip", 1)
    samples = rec.data[Position(0, 0)]
    assert len(samples) == 20  # 3 s / 0.15 s per exchange
    assert max(s.t_s for s in samples) <= 3.0


def test_total_failure_leaves_empty_lists(tmp_path):
    rec = run_campaign(QUICK, SimulatedDevice(_quiet(p_fail=1.0)), tmp_path / "c.zip", 1)
    assert set(rec.data) == set(generate_sweep(QUICK))
    assert rec.sample_count() == 0


def test_settings_recorded(tmp_path):
    rec = run_campaign(QUICK, SimulatedDevice(_quiet()), tmp_path / "c.zip", 9, {"true_distance_m": 5.0})
    assert rec.settings["seed"] == 9 and rec.settings["source"] == "simulated"
    assert rec.plan == QUICK and rec.settings["true_distance_m"] == 5.0


def test_determinism(tmp_path):
    prof = load_profiles().get_profile("galaxyS21u", "lab", 0.5)
    run_campaign(QUICK, SimulatedDevice(prof), tmp_path / "a.zip", 5)
    run_campaign(QUICK, SimulatedDevice(prof), tmp_path / "b.zip", 5)
    run_campaign(QUICK, SimulatedDevice(prof), tmp_path / "c.zip", 6)
    a, b, c = ((tmp_path / n).read_bytes() for n in ("a.zip", "b.zip", "c.zip"))
    assert a == b and a != c


class _Flaky(SimulatedDevice):
    def __init__(self, profile, fail_at, exc=SourceError):
        super().__init__(profile)
        self.fail_at, self.exc, self.index = fail_at, exc, None

    def move_to(self, pos, index):
        if index == self.fail_at:
            raise self.exc("link lost")
        super().move_to(pos, index)


def test_abort_preserves_partial_recording(tmp_path):
    out = tmp_path / "p.zip"
    with pytest.raises(CampaignAborted) as err:
        run_campaign(QUICK, _Flaky(_quiet(), 5), out, 3)
    partial = load_recording(out)
    assert err.value.recording == partial
    assert not partial.complete and "link lost" in partial.extras
    assert set(partial.data) == set(generate_sweep(QUICK))
    sweep = generate_sweep(QUICK)
    assert all(len(partial.data[p]) == 10 for p in sweep[:5])
    assert all(partial.data[p] == [] for p in sweep[5:])


@pytest.mark.parametrize("exc", [SourceError, KeyboardInterrupt])
def test_resume_is_byte_identical(tmp_path, exc):
    prof = load_profiles().get_profile("pixel6pro", "outside", 5.0)
    plan = SweepPlan(theta_step=30, phi_step=30)
    run_campaign(plan, SimulatedDevice(prof), tmp_path / "straight.zip", 42)

    out = tmp_path / "resumed.zip"
    with pytest.raises((CampaignAborted, KeyboardInterrupt)):
        run_campaign(plan, _Flaky(prof, 17, exc), out, 42)
    assert journal_path(out).exists()
    run_campaign(plan, SimulatedDevice(prof), out, 42)
    assert out.read_bytes() == (tmp_path / "straight.zip").read_bytes()
    assert not journal_path(out).exists()


def test_foreign_journal_ignored(tmp_path):
    out = tmp_path / "r.zip"
    with pytest.raises(CampaignAborted):
        run_campaign(QUICK, _Flaky(_quiet(), 3), out, 1)
    rec = run_campaign(QUICK, SimulatedDevice(_quiet()), out, 2)
    run_campaign(QUICK, SimulatedDevice(_quiet()), tmp_path / "ref.zip", 2)
    assert out.read_bytes() == (tmp_path / "ref.zip").read_bytes()
    assert rec.settings["seed"] == 2


def test_replay_source_reproduces(tmp_path):
    rec = run_campaign(QUICK, SimulatedDevice(_quiet()), tmp_path / "a.zip", 1)
    again = run_campaign(QUICK, ReplaySource(rec), tmp_path / "b.zip", 1)
    assert again.data == rec.data
    assert again.settings["source"] == "replay"


class _FakeWire:
    """Scripted line device: answers each RNG request with the next reply."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.lines = queue.Queue()
        self.requests = []

    def __iter__(self):
        while True:
            line = self.lines.get()
            if line is None:
                return
            yield line

    def write(self, text):
        self.requests.append(text)
        reply = self.replies.pop(0) if self.replies else None
        if reply is None:
            self.lines.put(None)
            return
        for line in reply:
            self.lines.put(line + "\n")

    def flush(self):
        pass


def test_serial_device_protocol(tmp_path):
    wire = _FakeWire([["D 5.01", "F timeout", "D 4.99", "OK"]] * len(generate_sweep(QUICK)))
    dev = SerialDevice(wire, wire)
    rec = run_campaign(QUICK, dev, tmp_path / "s.zip", 0)
    assert wire.requests[0] == "RNG 10\n"
    assert all([s.distance_m for s in v] == [5.01, 4.99] for v in rec.data.values())
    assert dev.failures.count("timeout") == len(generate_sweep(QUICK))


def test_serial_never_exceeds_n():
    wire = _FakeWire([["D 1", "D 2", "D 3", "D 4", "OK"]])
    dev = SerialDevice(wire, wire)
    dev.start_session({})
    assert [s.distance_m for s in dev.collect(2, 1.0)] == [1.0, 2.0]


def test_serial_timeout_enforced():
    wire = _FakeWire([["D 1"]])  # never sends OK
    dev = SerialDevice(wire, wire)
    dev.start_session({})
    assert [s.distance_m for s in dev.collect(5, 0.2)] == [1.0]


def test_serial_errors(tmp_path):
    wire = _FakeWire([["D 1", "OK"], ["GARBAGE", "OK"]])
    dev = SerialDevice(wire, wire)
    dev.start_session({})
    dev.collect(5, 1.0)
    with pytest.raises(SourceError, match="unexpected line"):
        dev.collect(5, 1.0)

    wire = _FakeWire([["D 1", "OK"]])
    out = tmp_path / "x.zip"
    with pytest.raises(CampaignAborted, match="closed"):
        run_campaign(QUICK, SerialDevice(wire, wire), out, 0)
    assert not load_recording(out).complete
