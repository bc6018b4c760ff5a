import json
import subprocess
import sys

import pytest

from avresilience.cli import main
from avresilience.integrity import ArtifactManifest, ManifestEntry


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "w.bin").write_bytes(bytes(range(256)) * 16)
    (tmp_path / "cfg.json").write_text('{"threshold": 0.5}')
    ArtifactManifest(
        (ManifestEntry("model_weights", tmp_path / "w.bin"), ManifestEntry("detector_config", tmp_path / "cfg.json"))
    ).save(tmp_path / "manifest.json")
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def baseline(ws):
    assert run("baseline", "--manifest", ws / "manifest.json", "--backup-dir", ws / "backup") == 0
    return ws / "backup" / "baseline.json"


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "simulate" in capsys.readouterr().out


def test_verify_clean_and_tampered(workspace, capsys):
    b = baseline(workspace)
    capsys.readouterr()
    assert run("verify", "--manifest", workspace / "manifest.json", "--baseline", b) == 0
    assert json.loads(capsys.readouterr().out)["result"] == "Match"
    (workspace / "cfg.json").write_text('{"threshold": 0.1}')
    out_dir = workspace / "out"
    assert run("verify", "--manifest", workspace / "manifest.json", "--baseline", b, "--out", out_dir) == 1
    line = json.loads((out_dir / "validation.ndjson").read_text())
    assert line["result"] == "Mismatch" and line["mismatched"] == ["detector_config"]


def test_verify_restore(workspace, capsys):
    b = baseline(workspace)
    (workspace / "w.bin").write_bytes(b"x")
    assert run("verify", "--manifest", workspace / "manifest.json", "--baseline", b, "--restore") == 1
    lines = capsys.readouterr().out.strip().splitlines()
    assert json.loads(lines[-1])["result"] == "Match"
    assert run("verify", "--manifest", workspace / "manifest.json", "--baseline", b) == 0


def test_missing_input_is_runtime_error(tmp_path, capsys):
    assert run("verify", "--manifest", tmp_path / "none.json", "--baseline", tmp_path / "b.json") == 1
    assert "does not exist" in capsys.readouterr().err


def test_bad_flag_is_usage_error():
    assert run("simulate", "--format", "xml") == 2
    assert run("nonsense") == 2


def test_unreadable_config_is_usage_error(tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{not json")
    assert run("threats", "--config", bad) == 2
    assert run("threats", "--config", tmp_path / "missing.json") == 2


def test_unknown_layer_is_usage_error(capsys):
    assert run("threats", "--layer", "Firmware") == 2
    assert "unknown layer" in capsys.readouterr().err


def test_threats_layer_filter(capsys):
    assert run("threats", "--layer", "perception", "--format", "json") == 0
    entries = json.loads(capsys.readouterr().out)["entries"]
    assert [e["layer"] for e in entries] == ["Perception Layer"]


def test_config_precedence(tmp_path, monkeypatch, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"format": "json", "layer": "Control Layer"}))
    assert run("threats", "--config", cfg) == 0
    assert json.loads(capsys.readouterr().out)["entries"][0]["layer"] == "Control Layer"
    assert run("threats", "--config", cfg, "--layer", "perception") == 0
    assert json.loads(capsys.readouterr().out)["entries"][0]["layer"] == "Perception Layer"
    assert run("threats", "--config", cfg, "--format", "csv") == 0
    assert capsys.readouterr().out.startswith("Layer,")


def test_seed_env_default(tmp_path, monkeypatch):
    def train(out, *extra):
        assert run("train", "--synthetic", 600, "--model", "lr", "--out", out, *extra) == 0
        return (out / "model_lr.json").read_bytes()

    monkeypatch.setenv("AVR_SEED", "7")
    from_env = train(tmp_path / "a")
    explicit = train(tmp_path / "b", "--seed", 7)
    other = train(tmp_path / "c", "--seed", 8)
    assert from_env == explicit != other
    monkeypatch.setenv("AVR_SEED", "seven")
    assert run("train", "--synthetic", 600, "--model", "lr", "--out", tmp_path / "d") == 2


def test_evaluate_writes_reports(tmp_path, capsys):
    out = tmp_path / "ev"
    assert run("evaluate", "--synthetic", 800, "--model", "lr", "knn", "--folds", 3, "--out", out) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["models"] == ["lr", "knn"]
    assert (out / "metrics.md").read_text().startswith("| Metric | Logistic Regression | KNN |")


def test_tune_threshold(tmp_path, capsys):
    out = tmp_path / "tt"
    assert run("tune-threshold", "--synthetic", 1000, "--model", "lr", "--out", out) == 0
    thr = json.loads((out / "threshold.json").read_text())["threshold"]
    assert 0.0 <= thr <= 1.0
    assert json.loads((out / "model_lr.json").read_text())["threshold"] == thr
    assert len((out / "margins.md").read_text().splitlines()) == 6


def test_simulate_and_report(tmp_path, capsys):
    out = tmp_path / "sim"
    assert run("simulate", "--out", out, "--format", "csv") == 0
    report = json.loads((out / "report.json").read_text())
    assert report["halted_at"] == 20.0
    assert (out / "speed_profile.csv").read_text().startswith("t,speed\n")
    assert (out / "timeline.csv").exists()
    capsys.readouterr()
    assert run("report", "--input", out / "report.json", "--format", "markdown") == 0
    assert "StopSignHalt" in capsys.readouterr().out


def test_batch_command(tmp_path):
    out = tmp_path / "b"
    assert run("batch", "--speeds", 0.5, "--intervals", 1, 3, "--trials", 2, "--out", out) == 0
    lines = (out / "batch.csv").read_text().splitlines()
    assert lines[0] == "speed,interval,success_rate,mean_latency,max_latency"
    assert [ln.split(",")[2] for ln in lines[1:]] == ["1.000000", "1.000000"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "avresilience", "threats", "--layer", "knowledge processing", "--format", "csv"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "Knowledge Processing Layer" in proc.stdout
