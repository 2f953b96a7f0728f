import csv
import hashlib
import json

import pytest
import yaml

from srqr.cli import EXIT_CERTIFY, EXIT_IO, EXIT_OK, EXIT_SCHEMA, main, run

CONFIGS = {
    "distortion-sweep": {"kind": "distortion-sweep", "map": {"kind": "multi-twist", "a": 2},
                         "points": 3, "radii": [0.02, 0.01]},
    "trap-build": {"kind": "trap-build", "a": 2, "p": 2, "q": [1, 1]},
    "julia": {"kind": "julia", "depth": 1, "per_ball": 2},
    "pansu-sweep": {"kind": "pansu-sweep", "map": {"kind": "multi-twist", "a": 2}, "points": 3},
    "tukia-build": {"kind": "tukia-build", "grid": {"n": 4}, "N": 4},
    "certify-all": {"kind": "certify-all", "criteria": [3]},
}
FILES = {
    "distortion-sweep": {"distortion.csv", "summary.csv"},
    "trap-build": {"trap.json", "conditions.csv"},
    "julia": {"julia.json", "julia.csv", "julia_chart.csv"},
    "pansu-sweep": {"pansu.csv"},
    "tukia-build": {"structure.json", "residual.csv", "residual_summary.json"},
    "certify-all": {"certify.json"},
}


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


@pytest.mark.parametrize("kind", sorted(CONFIGS))
def test_each_kind_writes_hashed_artifacts(kind, tmp_path):
    out = tmp_path / "out"
    assert run(CONFIGS[kind], out) == EXIT_OK
    m = manifest(out)
    assert m["status"] == "ok" and m["kind"] == kind
    assert {f["path"] for f in m["files"]} == FILES[kind]
    for f in m["files"]:
        data = (out / f["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == f["sha256"] and len(data) == f["bytes"]


@pytest.mark.parametrize("kind", ["distortion-sweep", "tukia-build"])
def test_runs_are_deterministic(kind, tmp_path):
    run(CONFIGS[kind], tmp_path / "a")
    run(CONFIGS[kind], tmp_path / "b")
    fa = manifest(tmp_path / "a")["files"]
    fb = manifest(tmp_path / "b")["files"]
    assert fa == fb


def test_julia_depth_zero_inside_balls(tmp_path):
    out = tmp_path / "j"
    assert run({"kind": "julia", "depth": 0, "per_ball": 4}, out) == EXIT_OK
    with open(out / "julia.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(r["in_conformal_ball"] == "1" for r in rows)
    assert all(r["depth"] == "0" for r in rows)


@pytest.mark.parametrize("cfg", [
    {"kind": "tukia-build", "grid": {}},
    {"kind": "tukia-build", "grid": {"n": 3}},
    {"kind": "distortion-sweep", "map": {"kind": "multi-twist"}, "points": 2, "colour": 1},
    {"kind": "no-such-kind"},
    {"kind": "julia"},
])
def test_schema_errors_write_nothing(cfg, tmp_path):
    out = tmp_path / "bad"
    assert run(cfg, out) == EXIT_SCHEMA
    assert not out.exists()


def test_certification_failure_exit_code(tmp_path):
    cfg = {"kind": "certify-all", "criteria": [2], "tolerances": {"2": {"H_bound": 1.0,
                                                                       "points": 20,
                                                                       "H_points": 3}}}
    out = tmp_path / "c"
    assert run(cfg, out) == EXIT_CERTIFY
    assert manifest(out)["status"] == "certification-failed"
    report = json.loads((out / "certify.json").read_text())
    assert report["passed"] is False


def test_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(CONFIGS["trap-build"], blocker) == EXIT_IO


def test_main_reads_yaml(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(CONFIGS["trap-build"]))
    out = tmp_path / "o"
    assert main(["--config", str(path), "--out", str(out)]) == EXIT_OK
    assert (out / "trap.json").exists()


def test_main_environment_overrides(tmp_path, monkeypatch):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(CONFIGS["pansu-sweep"]))
    out = tmp_path / "env"
    monkeypatch.setenv("SRQR_CONFIG", str(path))
    monkeypatch.setenv("SRQR_OUT", str(out))
    assert main([]) == EXIT_OK
    assert (out / "pansu.csv").exists()


def test_main_without_config(monkeypatch):
    monkeypatch.delenv("SRQR_CONFIG", raising=False)
    assert main([]) == EXIT_SCHEMA


def test_main_missing_or_malformed_config(tmp_path):
    assert main(["--config", str(tmp_path / "missing.yaml")]) == EXIT_IO
    bad = tmp_path / "bad.yaml"
    bad.write_text("kind: [unclosed")
    assert main(["--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_SCHEMA
