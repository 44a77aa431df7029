"""Routes HTTP : santé, résolution, vérification, simulation et téléchargement."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from app import main as api

SYSTEM = {"n": 4, "theta": 1.0005, "d": 1e-6, "u": 1e-7, "big_f": 1e-6}


@pytest.fixture
def client(tmp_path, monkeypatch) -> TestClient:
    monkeypatch.setattr(api, "OUTPUT_DIR", tmp_path)
    return TestClient(api.app)


def test_root_and_health(client, tmp_path):
    assert client.get("/").json()["app"] == "pulsesync"
    body = client.get("/health").json()
    assert body["status"] == "ok"
    assert body["output_dir"] == str(tmp_path)


def test_solve_phase(client):
    resp = client.post("/solve", json={"system": SYSTEM, "algorithm": "phase"})
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["algorithm"] == "phase"
    assert doc["phase"]["alpha"] < 1


def test_solve_infeasible_is_conflict(client):
    resp = client.post("/solve", json={"system": {**SYSTEM, "theta": 1.2}})
    assert resp.status_code == 409
    assert resp.json()["detail"]["threshold"] == "alpha"


def test_solve_rejects_bad_system(client):
    resp = client.post("/solve", json={"system": {**SYSTEM, "u": 5e-6}})
    assert resp.status_code == 422


def test_check_solved_document(client):
    doc = client.post("/solve", json={"system": SYSTEM, "algorithm": "freq"}).json()
    resp = client.post("/check", json=doc)
    assert resp.status_code == 200
    body = resp.json()
    assert body["feasible"] is True
    assert body["algorithm"] == "freq"


def test_simulate_then_download(client, trivial_scenario, tmp_path):
    resp = client.post("/simulate", json=trivial_scenario.model_dump(mode="json"))
    assert resp.status_code == 200
    body = resp.json()
    assert body["summary"]["verdict"]["passed"] is True
    assert "summary.json" in body["files"]
    assert (tmp_path / body["run_id"] / "skew.csv").exists()

    got = client.get(f"/download/{body['run_id']}/skew.csv")
    assert got.status_code == 200
    assert got.text.startswith("round,skew,envelope,margin")


def test_download_unknown(client):
    assert client.get("/download/not-a-run/skew.csv").status_code == 404
    assert client.get(f"/download/{'0' * 32}/skew.csv").status_code == 404
    assert client.get(f"/download/{'0' * 32}/secret.txt").status_code == 404
