import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from uavirs.cli import main

from test_subproblems import small_scenario
from uavirs.scenario import emit_scenario

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture()
def tiny_scenario_file(tmp_path):
    scen = small_scenario(duration=8)
    path = tmp_path / "tiny.scn"
    path.write_text(emit_scenario(scen))
    return path


def _read(path: Path):
    return (path / "trajectory.csv").read_bytes(), (path / "power.csv").read_bytes(), (
        path / "phases.csv"
    ).read_bytes(), json.loads((path / "summary.json").read_text())


def test_run_writes_outputs_and_is_deterministic(tiny_scenario_file, tmp_path):
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["--scenario", str(tiny_scenario_file), "--method", "identity_phase", "--out", str(out1)]) == 0
    assert main(["--scenario", str(tiny_scenario_file), "--method", "identity_phase", "--out", str(out2)]) == 0
    t1, p1, ph1, s1 = _read(out1)
    t2, p2, ph2, s2 = _read(out2)
    assert t1 == t2 and p1 == p2 and ph1 == ph2
    s1.pop("wall_time_s")
    s2.pop("wall_time_s")
    assert s1 == s2


def test_emitted_trajectory_respects_mobility(tiny_scenario_file, tmp_path):
    out = tmp_path / "o"
    assert main(["--scenario", str(tiny_scenario_file), "--method", "proposed", "--out", str(out)]) == 0
    scen = small_scenario(duration=8)
    # independent reader: csv module only
    rows = list(csv.DictReader(open(out / "trajectory.csv")))
    pts = [(float(r["x"]), float(r["y"])) for r in rows]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        assert math.hypot(x1 - x0, y1 - y0) <= scen.v_max * scen.slot_length + 1e-9
    assert len(pts) == scen.num_slots + 1
    summary = json.loads((out / "summary.json").read_text())
    assert summary["total_user_energy_j"] > 0
    assert summary["uav_energy_j"] <= scen.energy_budget


def test_local_only_outputs(tiny_scenario_file, tmp_path):
    out = tmp_path / "o"
    assert main(["--scenario", str(tiny_scenario_file), "--method", "local_only", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "power.csv")))
    assert all(float(r["power_w"]) == 0 for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert all(u["offload_ratio_local"] == 1.0 for u in summary["users"])


def test_malformed_file_names_offending_key(tmp_path):
    bad = tmp_path / "bad.scn"
    bad.write_text(small_doc_with_typo())
    out = tmp_path / "o"
    assert main(["--scenario", str(bad), "--method", "proposed", "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 2
    assert "v_max" in err["error"] or err.get("field", "").endswith("v_max")


def small_doc_with_typo():
    scen = small_scenario(duration=8)
    return emit_scenario(scen).replace("v_max = ", "vmax = ")


def test_sweep_over_elements(tiny_scenario_file, tmp_path):
    out = tmp_path / "sw"
    code = main([
        "--scenario", str(tiny_scenario_file), "--method", "identity_phase",
        "--out", str(out), "--sweep", "L", "--values", "8,16",
    ])
    assert code == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 2
    assert [r["value"] for r in rows] == ["8", "16"]
    assert all(r["status"] == "ok" for r in rows)
    assert (out / "L_8" / "identity_phase" / "summary.json").exists()


def test_sweep_requires_values(tiny_scenario_file, tmp_path):
    out = tmp_path / "sw"
    assert main(["--scenario", str(tiny_scenario_file), "--out", str(out), "--sweep", "T"]) == 2


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "uavirs.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "--sweep" in proc.stdout
