"""Commandes solve / check / simulate / sweep et leurs codes de sortie."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from app.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main, resolve_seed
from app.utils.helpers import dump_json

SOLVE = ["solve", "--theta", "1.0005", "--d", "1e-6", "--u", "1e-7"]


def _solve_doc(capsys, *extra: str) -> dict:
    assert main([*SOLVE, *extra]) == EXIT_OK
    return json.loads(capsys.readouterr().out)


def test_solve_phase_prints_document(capsys):
    doc = _solve_doc(capsys)
    assert doc["algorithm"] == "phase"
    assert doc["schema_version"] == 1
    assert doc["system"]["f"] == 1
    assert all(t > 0 for t in doc["phase"]["big_t"])


def test_solve_accepts_hyphenated_algorithm(capsys):
    doc = _solve_doc(capsys, "--algorithm", "phase-stab")
    assert doc["algorithm"] == "phase_stab"
    assert doc["stab"] is not None


def test_solve_infeasible_exit_code(capsys):
    code = main(["solve", "--theta", "1.2", "--d", "1e-6", "--u", "1e-7"])
    assert code == EXIT_INFEASIBLE
    err = capsys.readouterr().err
    assert '"threshold": "alpha"' in err


def test_solve_bad_arguments(capsys):
    assert main(["solve", "--theta", "abc", "--d", "1", "--u", "0.1"]) == EXIT_CONFIG
    assert main(["solve", "--theta", "0.9", "--d", "1e-6", "--u", "1e-7"]) == EXIT_CONFIG
    assert main(["solve", "--theta", "1.0005", "--d", "1e-6", "--u", "2e-6"]) == EXIT_CONFIG


def test_unknown_command():
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_check_round_trip(capsys, tmp_path):
    doc = _solve_doc(capsys)
    path = tmp_path / "params.json"
    path.write_text(dump_json(doc), encoding="utf-8")

    assert main(["check", "--params", str(path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["feasible"] is True
    assert report["algorithm"] == "phase"


def test_check_detects_broken_document(capsys, tmp_path):
    doc = _solve_doc(capsys)
    doc["phase"]["big_t"] = [t / 100 for t in doc["phase"]["big_t"]]
    path = tmp_path / "params.json"
    path.write_text(dump_json(doc), encoding="utf-8")

    assert main(["check", "--params", str(path)]) == EXIT_INFEASIBLE
    report = json.loads(capsys.readouterr().out)
    assert report["feasible"] is False


def test_check_missing_file(tmp_path):
    assert main(["check", "--params", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_check_invalid_json(tmp_path):
    path = tmp_path / "params.json"
    path.write_text("{pas du json", encoding="utf-8")
    assert main(["check", "--params", str(path)]) == EXIT_CONFIG


def test_simulate_writes_artifacts(tmp_path, trivial_scenario):
    scenario = tmp_path / "trivial.json"
    scenario.write_text(dump_json(trivial_scenario.model_dump(mode="json")), encoding="utf-8")
    out = tmp_path / "run"

    assert main(["simulate", "--scenario", str(scenario), "--out", str(out), "--seed", "7"]) == EXIT_OK
    for name in ("pulses.csv", "skew.csv", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["seed"] == 7
    assert summary["verdict"]["passed"] is True


def test_simulate_invalid_scenario(tmp_path):
    scenario = tmp_path / "bad.json"
    scenario.write_text(json.dumps({"schema_version": 1, "system": {"n": 4}}), encoding="utf-8")
    assert main(["simulate", "--scenario", str(scenario), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_sweep_writes_csv(capsys, tmp_path, trivial_scenario):
    template = tmp_path / "template.json"
    template.write_text(dump_json(trivial_scenario.model_dump(mode="json")), encoding="utf-8")
    out = tmp_path / "sweep.csv"

    code = main([
        "sweep", "--template", str(template), "--axis", "u",
        "--values", "1e-7,2e-7", "--trials", "2", "--out", str(out),
    ])
    assert code == EXIT_OK
    lines = out.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0].startswith("axis,value,trial,seed,status")
    assert len(lines) == 1 + 4
    report = json.loads(capsys.readouterr().out)
    assert report["rows"] == 4
    assert report["passed"] == 4
    assert "skew_per_u" in report


def test_sweep_rejects_empty_values(tmp_path, trivial_scenario):
    template = tmp_path / "template.json"
    template.write_text(dump_json(trivial_scenario.model_dump(mode="json")), encoding="utf-8")
    code = main([
        "sweep", "--template", str(template), "--axis", "u",
        "--values", ",", "--out", str(tmp_path / "s.csv"),
    ])
    assert code == EXIT_CONFIG


@pytest.mark.parametrize(
    ("cli", "env", "scenario", "expected"),
    [(3, 5, 9, 3), (None, 5, 9, 5), (None, None, 9, 9)],
)
def test_seed_precedence(monkeypatch, cli, env, scenario, expected):
    monkeypatch.setattr("app.config.PULSESYNC_SEED", env)
    assert resolve_seed(cli, scenario) == expected


def test_shipped_scenarios_load(scenario_dir: Path):
    from app.services.artifacts import load_scenario

    names = sorted(p.stem for p in scenario_dir.glob("*.json"))
    assert names == ["baseline", "silent_fault", "split_fault", "stab_from_chaos", "worst_drift"]
    for path in scenario_dir.glob("*.json"):
        assert load_scenario(path).schema_version == 1
