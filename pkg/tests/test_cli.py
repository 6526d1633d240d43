"""End-to-end command line runs against the shipped scenarios."""

import csv
import json
from pathlib import Path

import pytest

from hymem.cli import build_report, load_run, main, run_scenario, write_trajectory
from hymem.scenario import load_scenario

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
DEMO = str(SCENARIO_DIR / "quadcopter_demo.yaml")
DDE = str(SCENARIO_DIR / "linear_dde.yaml")


def test_all_command_end_to_end(tmp_path):
    code = main(["all", "--scenario", DEMO, "--out", str(tmp_path)])
    assert code == 0
    for name in ("u1.csv", "u1.meta.json", "report.json", "u1_norm.svg", "u1_velocity.svg"):
        assert (tmp_path / name).exists(), name
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["all_gates_passed"] is True
    assert report["runs"]["u1"]["end_condition"] == "horizon"
    assert report["runs"]["u1"]["jumps"] == 25
    assert {c["check"] for c in report["checks"]} == {
        "flow_bound_audit",
        "jump_nonincrease",
    }


def test_csv_layout_and_exact_floats(tmp_path):
    assert main(["simulate", "--scenario", DEMO, "--out", str(tmp_path)]) == 0
    with open(tmp_path / "u1.csv") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    assert header == (
        ["t", "j"]
        + [f"x{i}" for i in range(6)]
        + ["mode", "timer", "u0", "u1", "u2", "dist_w", "v_lkf", "dini", "energy"]
    )
    assert all(len(r) == len(header) for r in data)
    # 26 intervals: 25 of 41 nodes, plus the single node after the final jump
    assert len(data) == 25 * 41 + 1
    # repr round-trip: reconstructing the state gives the exact same float
    assert float(data[0][2]) == 1.0
    assert float(data[7][16]) == float(data[7][16])
    meta = json.loads((tmp_path / "u1.meta.json").read_text())
    assert meta["n_jumps"] == 25
    assert meta["end_condition"] == "horizon"
    assert meta["options"]["h"] == 0.005


def test_outputs_are_byte_identical_across_reruns(tmp_path):
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    for d in (dir_a, dir_b):
        code = main(
            ["simulate", "--scenario", DEMO, "--out", str(d), "--tend", "2.0"]
        )
        assert code == 0
    for name in ("u1.csv", "u1.meta.json"):
        assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()


def test_report_round_trips_through_trajectory_files(tmp_path):
    scenario = load_scenario(DDE)
    records = run_scenario(scenario)
    direct = json.dumps(build_report(scenario, records), indent=2, sort_keys=True)

    from hymem.comparison import ClassKFn

    rebuilt = {}
    for name, rec in records.items():
        csv_path, meta_path = write_trajectory(
            tmp_path, name, rec, scenario.certificate, ClassKFn("linear", 1.0)
        )
        rebuilt[name] = load_run(csv_path, meta_path, scenario.system)
    again = json.dumps(build_report(scenario, rebuilt), indent=2, sort_keys=True)
    assert again == direct


def test_tend_override_shortens_run(tmp_path):
    code = main(["simulate", "--scenario", DEMO, "--out", str(tmp_path), "--tend", "1.0"])
    assert code == 0
    with open(tmp_path / "u1.csv") as fh:
        last = list(csv.reader(fh))[-1]
    assert float(last[0]) == 1.0
    meta = json.loads((tmp_path / "u1.meta.json").read_text())
    assert meta["options"]["t_end"] == 1.0
    assert meta["n_jumps"] == 5


def test_out_env_var_is_honored(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("HYMEM_OUT", str(target))
    code = main(["simulate", "--scenario", DEMO, "--tend", "0.5"])
    assert code == 0
    assert (target / "u1.csv").exists()


def test_malformed_scenario_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: broken\nintegrator: {step: 0.005, t_end: 1.0}\n")
    assert main(["simulate", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "scenario error" in err
    assert "system" in err


def test_unknown_check_exits_2(tmp_path, capsys):
    text = Path(DEMO).read_text().replace("check: jump_nonincrease", "check: bogus")
    bad = tmp_path / "bogus.yaml"
    bad.write_text(text)
    assert main(["check", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err


def test_failing_gate_exits_1(tmp_path, capsys):
    # a half-second zero-input run is nowhere near settled, so a gated
    # detectability check with a tight tolerance must fail the command
    text = Path(DEMO).read_text()
    text = text.replace(
        "    input: {kind: exp_decay, amplitude: [0.5, 0.0, -0.2], rate: 0.5}",
        "    input: {kind: zero}",
    )
    text = text.replace(
        """  checks:
    - check: flow_bound_audit
      runs: [u1]
    - check: jump_nonincrease
      runs: [u1]
      tol: 1.0e-9""",
        """  checks:
    - check: detectability
      runs: [u1]
      tail_window: 0.25
      tol: 1.0e-6
      gate: true""",
    )
    strict = tmp_path / "strict.yaml"
    strict.write_text(text)
    code = main(["check", "--scenario", str(strict), "--out", str(tmp_path), "--tend", "0.5"])
    assert code == 1
    out = capsys.readouterr().out
    assert "GATE FAILURE" in out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["all_gates_passed"] is False
    (entry,) = report["checks"]
    assert entry["check"] == "detectability"
    assert entry["passed"] is False


def test_check_prints_one_line_per_entry(tmp_path, capsys):
    assert main(["check", "--scenario", DEMO, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[gate] flow_bound_audit" in out
    assert "[gate] jump_nonincrease" in out
    assert "all gates passed" in out
