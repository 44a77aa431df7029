"""Fixtures partagées : paramètres système et fabrique de scénarios."""

from __future__ import annotations

from pathlib import Path

import pytest

from app.models import Scenario, SystemParams

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def system() -> SystemParams:
    return SystemParams(n=4, theta=1.0005, d=1e-6, u=1e-7, big_f=1e-6)


@pytest.fixture
def make_scenario():
    """Scénario validé à partir d'un dictionnaire minimal ; `system` fusionné."""

    def _make(**fields) -> Scenario:
        system = {"n": 4, "f": 1, "theta": 1.0005, "nu": 0.0, "d": 1e-6, "u": 1e-7, "big_f": 1e-6}
        system.update(fields.pop("system", {}))
        data = {"name": fields.pop("name", "test"), "system": system, "rounds": 20}
        data.update(fields)
        return Scenario.model_validate(data)

    return _make


@pytest.fixture
def trivial_scenario(make_scenario) -> Scenario:
    """θ = 1, horloges identiques, délais constants : les nœuds restent confondus."""
    return make_scenario(
        name="trivial",
        system={"theta": 1.0},
        clock_policy={"kind": "all_nominal", "offsets": "zero"},
        delay_policy={"kind": "constant_max"},
        rounds=15,
    )


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS
