import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avresilience.integrity import SchedulePolicy, Verdict, validate_once
from avresilience.simulation import (
    ARTIFACT_IDS,
    FALLBACK_ID,
    PRIMARY_ID,
    Attack,
    DetectorConfig,
    Scenario,
    ScenarioError,
    SimulationError,
    StoreError,
    Vehicle,
    batch_run,
    build_store,
    stop_sign_scenario,
    measure_latencies,
    run_scenario,
)
from avresilience.simulation.store import ArtifactStore


def tamper_scenario(onset, interval=1.0, duration=30.0, artifact="model_weights", **kw):
    return Scenario(
        duration=duration,
        vehicle=Vehicle(0.33, kw.pop("stop_sign_time", None)),
        attacks=(Attack.tamper(onset, artifact),),
        schedule=SchedulePolicy.fixed(interval),
        **kw,
    )


def first_tick_after(onset, interval):
    """Ticks at n * interval; one landing exactly on the onset ran before the tamper."""
    return (math.floor(onset / interval) + 1) * interval


def check_causal(report):
    for rec in report.attacks:
        if rec.detected:
            assert rec.onset < rec.detected_at
            if rec.switchover_at is not None:
                assert rec.detected_at <= rec.switchover_at
            if rec.restored_at is not None:
                assert rec.switchover_at <= rec.restored_at
    times = [e.time for e in report.timeline]
    assert times == sorted(times)


# -- basic scenarios ------------------------------------------------------------------------


def test_null_scenario():
    report = run_scenario(Scenario(duration=30.0, vehicle=Vehicle(0.33, 20.0)))
    assert report.events("Detection") == [] and report.events("Switchover") == []
    speeds = dict(report.speed_profile)
    assert all(v == 0.33 for t, v in report.speed_profile if t <= 19.0)
    assert speeds[20.0] == 0.0
    assert report.validations == 30
    assert report.safety_violations == 0


def test_interval_five_detection():
    report = run_scenario(tamper_scenario(12.3, interval=5.0))
    rec = report.attacks[0]
    assert rec.detected_at == 15.0
    assert measure_latencies(report)[0]["detection"] == pytest.approx(2.7)


def test_tamper_on_tick_caught_by_next_tick():
    report = run_scenario(tamper_scenario(10.0, interval=1.0))
    assert report.attacks[0].detected_at == 11.0


def test_timeline_at_25_seconds():
    report = run_scenario(tamper_scenario(25.0))
    kinds = [e.kind for e in report.timeline]
    assert kinds[:4] == ["AttackOnset", "Detection", "Switchover", "RestoreComplete"]
    rec = report.attacks[0]
    assert 25.0 < rec.detected_at <= 26.0
    assert rec.detected_at <= rec.switchover_at <= rec.restored_at
    # 65536-byte weights at the modeled 100 MB/s
    assert rec.restored_at - rec.switchover_at == pytest.approx(65536 / 100e6)
    back = report.events("Switchover")[-1]
    assert back.detail["to"] == PRIMARY_ID and back.time == rec.restored_at
    assert report.safety_violations == 0
    check_causal(report)


def test_post_restore_store_matches(tmp_path):
    run_scenario(tamper_scenario(25.0, artifact="detector_config"), workdir=tmp_path)
    store = ArtifactStore.open(tmp_path)
    assert validate_once(store.manifest, store.baseline).result is Verdict.MATCH


def test_undetected_attack_latency_absent():
    # tamper after the last tick of the run
    report = run_scenario(tamper_scenario(26.0, interval=5.0, duration=29.0))
    lat = measure_latencies(report)[0]
    assert lat["detected"] is False
    assert lat["detection"] is None and lat["switchover"] is None and lat["restore"] is None


@pytest.mark.parametrize("artifact", ARTIFACT_IDS)
def test_every_artifact_detected(artifact):
    report = run_scenario(tamper_scenario(7.4, artifact=artifact))
    assert report.attacks[0].detected_at == 8.0


def test_event_driven_trigger_detects_at_next_step():
    sc = Scenario(
        duration=10.0,
        vehicle=Vehicle(0.33),
        attacks=(Attack.tamper(4.05, trigger="on-update"),),
        schedule=SchedulePolicy.event_driven(),
    )
    report = run_scenario(sc)
    assert report.attacks[0].detected_at == pytest.approx(4.1)
    assert report.events("Detection")[0].detail["trigger"] == "on-update"


def test_no_fallback_safe_stop():
    sc = tamper_scenario(5.5, with_fallback=False)
    report = run_scenario(sc)
    assert [e.time for e in report.events("SafeStop")] == [6.0]
    assert report.halted_at == 7.0
    assert dict(report.speed_profile)[7.0] == 0.0


# -- stop sign behavior ---------------------------------------------------------------------------


def test_stop_sign_scenario_fallback_halts():
    report = run_scenario(stop_sign_scenario())
    profile = report.speed_profile
    assert all(v > 0 for t, v in profile if 10.0 <= t < 20.0)
    assert all(abs(v - 0.33) < 1e-12 for t, v in profile if 10.0 <= t <= 19.0)
    assert report.halted_at == pytest.approx(20.0)
    assert dict(profile)[20.0] == 0.0
    assert report.attacks[0].detected_at <= 11.0
    assert report.stop_sign_seen is True


def test_stop_sign_scenario_negative_control_does_not_halt():
    report = run_scenario(stop_sign_scenario(coordinator_enabled=False))
    assert report.stop_sign_seen is False
    assert report.halted_at is None
    assert min(v for _, v in report.speed_profile) == 0.33


@settings(max_examples=15, deadline=None)
@given(onset=st.floats(1.0, 15.0), interval=st.sampled_from([1.0, 2.0, 3.0]))
def test_stop_sign_after_detected_tamper_halts(onset, interval):
    sc = Scenario(
        duration=30.0,
        vehicle=Vehicle(0.5, 22.0),
        attacks=(Attack.tamper(round(onset, 3)),),
        schedule=SchedulePolicy.fixed(interval),
        auto_restore=False,
    )
    report = run_scenario(sc)
    assert report.attacks[0].detected
    assert dict(report.speed_profile)[22.0] == 0.0
    check_causal(report)


# -- determinism and latency statistics -------------------------------------------------------------


def test_byte_identical_reports():
    sc = tamper_scenario(12.34, interval=3.0, stop_sign_time=25.0, seed=5)
    assert run_scenario(sc).to_json() == run_scenario(sc).to_json()
    assert run_scenario(sc).speed_csv() == run_scenario(sc).speed_csv()


def test_mean_latency_half_interval():
    interval = 2.0
    rng = np.random.default_rng(123)
    latencies = []
    for _ in range(200):
        onset = round(float(rng.uniform(2.0, 24.0)), 3)
        report = run_scenario(tamper_scenario(onset, interval=interval))
        rec = report.attacks[0]
        assert rec.detected_at == pytest.approx(first_tick_after(onset, interval))
        latencies.append(rec.detected_at - onset)
    assert np.mean(latencies) == pytest.approx(interval / 2, rel=0.10)
    assert max(latencies) <= interval


# -- blinding ----------------------------------------------------------------------------------------


def blinding_scenario(seed=0):
    return Scenario(
        duration=60.0,
        vehicle=Vehicle(0.33),
        attacks=(Attack.blinding(20.0, 30.0),),
        detector=DetectorConfig(training_samples=3000, alert_debounce=3),
        seed=seed,
    )


@pytest.mark.parametrize("seed", [0, 1])
def test_blinding_scores_higher_inside(seed):
    report = run_scenario(blinding_scenario(seed))
    a = report.anomaly
    assert a["median_inside"] > a["median_outside"]
    rec = report.attacks[0]
    assert rec.detected and 20.0 < rec.detected_at <= 32.0
    assert report.events("Switchover")[0].detail["to"] == FALLBACK_ID
    assert report.safety_violations == 0
    check_causal(report)


def test_untrained_detector_path(tmp_path):
    sc = Scenario(
        duration=10.0,
        vehicle=Vehicle(0.33),
        attacks=(Attack.blinding(2.0, 4.0),),
        detector=DetectorConfig(model_path=str(tmp_path / "missing.json")),
    )
    with pytest.raises(SimulationError, match="untrained"):
        run_scenario(sc)


# -- scenario validation and stores --------------------------------------------------------------------


def test_incomplete_store(tmp_path):
    build_store(tmp_path, seed=0)
    (tmp_path / "baseline.json").unlink()
    with pytest.raises(StoreError):
        run_scenario(tamper_scenario(5.0), workdir=tmp_path)


@pytest.mark.parametrize(
    "build",
    [
        lambda: dict(attacks=(Attack.tamper(40.0),)),
        lambda: dict(attacks=(Attack.blinding(5.0, 8.0),)),  # no detector
        lambda: dict(attacks=(Attack.tamper(5.0, "not_an_artifact"),)),
        lambda: dict(vehicle=Vehicle(0.33, 45.0)),
    ],
    ids=["late-onset", "blinding-without-detector", "unknown-artifact", "late-stop-sign"],
)
def test_invalid_scenarios(build):
    with pytest.raises(ScenarioError):
        Scenario(**{"duration": 30.0, "vehicle": Vehicle(0.33), **build()})


def test_scenario_json_round_trip(tmp_path):
    sc = blinding_scenario()
    p = tmp_path / "s.json"
    p.write_text(json.dumps(sc.to_dict()))
    assert Scenario.load(p) == sc
    base = stop_sign_scenario()
    assert Scenario.from_dict(base.to_dict()) == base


# -- batch --------------------------------------------------------------------------------------------------


def test_batch_small_grid():
    result = batch_run([0.5, 1.0], [1.0, 3.0], trials_per_cell=3, seed=1)
    assert len(result.cells) == 4
    for c in result.cells:
        assert c.success_rate == 1.0
        assert c.false_detections == 0 and c.control_restores == 0
        assert 0 < c.mean_latency <= c.max_latency <= c.interval
    lines = result.to_csv().splitlines()
    assert lines[0] == "speed,interval,success_rate,mean_latency,max_latency"
    assert len(lines) == 5


def test_batch_deterministic():
    a = batch_run([0.5], [1.0, 5.0], trials_per_cell=2, seed=4)
    b = batch_run([0.5], [1.0, 5.0], trials_per_cell=2, seed=4)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()


def test_batch_errors():
    with pytest.raises(ScenarioError):
        batch_run([], [1.0])
    with pytest.raises(ScenarioError):
        batch_run([0.5], [1.0], trials_per_cell=0)
