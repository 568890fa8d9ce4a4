import csv
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from adaptive_dc.cli import main
from adaptive_dc.config import default_config_path
from adaptive_dc.report import COMPARISON_SCHEMA, SUMMARY_SCHEMA, trajectory_header

BASE = default_config_path("short.yaml").read_text()
TINY = BASE.replace("segment_s: 0.05", "segment_s: 2.0e-4").replace("record_every: 100",
                                                                      "record_every: 50")


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("ctrl", ["c1", "c2", "c3"])
def test_simulate_writes_same_schema_for_every_controller(tiny, tmp_path, ctrl):
    out = tmp_path / ctrl
    assert main(["simulate", str(tiny), "--controller", ctrl, "--out", str(out)]) == 0
    rows = _rows(out / "trajectory.csv")
    assert rows[0] == trajectory_header(3)
    assert rows[0][:3] == ["t_s", "V_dc_V", "I_tau_1_A"] and rows[0][-1] == "u_3_V"
    assert len(rows) == 1 + 6000 // 50 + 1
    assert float(rows[1][1]) == 200.0
    metrics = _rows(out / "metrics.csv")
    assert metrics[0] == ["t_s", "controller", "metric", "channel", "value"]
    assert {r[1] for r in metrics[1:]} == {ctrl}
    has_rhat = any(r[2] == "rhat_error_pct" for r in metrics[1:])
    assert has_rhat == (ctrl == "c1")
    summary = json.loads((out / "summary.json").read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    assert summary["controller"] == ctrl
    assert [s["name"] for s in summary["segments"]] == ["takeoff", "cruise", "landing"]
    assert (summary["gain_check"] is None) == (ctrl != "c1")


def test_simulate_is_bit_stable(tiny, tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", str(tiny), "--out", str(tmp_path / d)]) == 0
    for name in ("trajectory.csv", "metrics.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_verify_default_passes(capsys):
    assert main(["verify", str(default_config_path())]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 5


def test_verify_fails_with_small_T_phi(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text(BASE.replace("T_phi_H: 1.0", "T_phi_H: 1.0e-4"))
    assert main(["verify", str(path)]) == 1
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("edit", [
    ("R_tau_ohm: [1.33, 0.78, 0.71]", "R_tau_ohm: [-1.33, 0.78, 0.71]"),
    ("W: [1.0, 1.0, 1.0]", "W: [1.0, 1.0, 1.0"),
    ("edges: [[1, 2], [2, 3]]", "edges: [[1, 2]]"),
])
@pytest.mark.parametrize("cmd", ["simulate", "verify", "compare"])
def test_bad_config_exits_2_with_location(tmp_path, capsys, edit, cmd):
    path = tmp_path / "bad.yaml"
    path.write_text(BASE.replace(*edit))
    argv = [cmd, str(path)] + ([] if cmd == "verify" else ["--out", str(tmp_path / "o")])
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert f"{path}:" in err
    assert not (tmp_path / "o").exists()


def test_numerical_abort_exits_3(tmp_path):
    path = tmp_path / "coarse.yaml"
    path.write_text(TINY.replace("step_s: 1.0e-7", "step_s: 1.0e-4").replace("segment_s: 2.0e-4",
                                                                              "segment_s: 0.05"))
    assert main(["simulate", str(path), "--out", str(tmp_path / "o")]) == 3
    assert main(["compare", str(path), "--out", str(tmp_path / "c")]) == 3


def test_compare_outputs_and_determinism(tiny, tmp_path):
    for d in ("a", "b"):
        assert main(["compare", str(tiny), "--out", str(tmp_path / d)]) == 0
    for name in ("compare_metrics.csv", "comparison.json", "c1/trajectory.csv", "c2/summary.json",
                 "c3/metrics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    comp = json.loads((tmp_path / "a" / "comparison.json").read_text())
    jsonschema.validate(comp, COMPARISON_SCHEMA)
    assert sorted(comp["voltage_deviation_rank"]) == ["c1", "c2", "c3"]
    rows = _rows(tmp_path / "a" / "compare_metrics.csv")
    assert rows[0] == ["t_s", "controller", "metric", "value"]
    times = {c: [r[0] for r in rows[1:] if r[1] == c and r[2] == "voltage_deviation_pct"]
             for c in ("c1", "c2", "c3")}
    assert times["c1"] == times["c2"] == times["c3"]


def test_log_level_from_environment(tiny, tmp_path):
    env = {"ADAPTIVE_DC_LOG": "DEBUG", "PATH": "/usr/local/bin:/usr/bin:/bin"}
    res = subprocess.run([sys.executable, "-m", "adaptive_dc.cli", "simulate", str(tiny), "--out",
                          str(tmp_path / "o")], capture_output=True, text=True, env=env)
    assert res.returncode == 0
    assert "DEBUG adaptive_dc" in res.stderr
    env["ADAPTIVE_DC_LOG"] = "ERROR"
    res = subprocess.run([sys.executable, "-m", "adaptive_dc.cli", "simulate", str(tiny), "--out",
                          str(tmp_path / "o")], capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stderr == ""


@pytest.mark.slow
def test_full_profile_settles_near_reference(tmp_path):
    assert main(["simulate", str(default_config_path()), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    for seg in summary["segments"]:
        assert seg["V_deviation_pct"] < 0.5
    assert abs(summary["final"]["V_dc_V"] - 200.0) < 1.0
    np.testing.assert_allclose(summary["final"]["rhat_ohm"], [1.33, 0.78, 0.71], rtol=0.05)
