"""Nœuds byzantins : calendriers statiques et réponses réactives."""

from __future__ import annotations

import numpy as np

from app.models import FaultConfig
from app.services.adversary import TALLY_HORIZON, Adversary, inject_fault_schedule

CORRECT = (0, 1, 2)


def _config(*faults: dict) -> FaultConfig:
    return FaultConfig.model_validate({"faults": list(faults)})


def test_static_schedule_sorted_and_bounded():
    config = _config(
        {"node": 3, "strategy": "custom_schedule", "schedule": [
            {"time": 5.0},
            {"time": 1.0, "receivers": [0, 2, 7]},
            {"time": 50.0},
        ]},
    )
    out = inject_fault_schedule(config, CORRECT, horizon=10.0, rng=np.random.default_rng(0))
    assert [fp.time for fp in out] == [1.0, 5.0]
    assert out[0].receivers == (0, 2)
    assert out[1].receivers == CORRECT


def test_random_pulses_reproducible():
    config = _config({"node": 3, "strategy": "random_pulses", "rate": 10.0})
    a = inject_fault_schedule(config, CORRECT, 5.0, np.random.default_rng(11), kinds=(1, 2))
    b = inject_fault_schedule(config, CORRECT, 5.0, np.random.default_rng(11), kinds=(1, 2))
    assert a == b
    assert a
    assert all(0 < fp.time <= 5.0 for fp in a)
    assert {fp.kind for fp in a} <= {1, 2}


def test_silent_and_reactive_emit_nothing_upfront():
    config = _config(
        {"node": 3, "strategy": "silent"},
        {"node": 4, "strategy": "mirror_extreme"},
    )
    assert inject_fault_schedule(config, CORRECT, 10.0, np.random.default_rng(0)) == []


def test_split_early_late_targets_both_halves():
    adv = Adversary(_config({"node": 3, "strategy": "split_early_late"}), (0, 1, 2, 4))
    first = adv.on_correct_pulse(0, 1, 1, 1.0)
    assert [fp.receivers for fp in first] == [(0, 1)]
    assert adv.on_correct_pulse(1, 1, 1, 1.1) == []
    assert adv.on_correct_pulse(2, 1, 1, 1.2) == []
    last = adv.on_correct_pulse(4, 1, 1, 1.3)
    assert [(fp.time, fp.receivers) for fp in last] == [(1.3, (2, 4))]
    assert not adv.tallies


def test_mirror_extreme_waits_for_last_pulse():
    adv = Adversary(_config({"node": 3, "strategy": "mirror_extreme"}), CORRECT)
    assert adv.on_correct_pulse(0, 2, 4, 1.0) == []
    assert adv.on_correct_pulse(1, 2, 4, 2.0) == []
    out = adv.on_correct_pulse(2, 2, 4, 3.0)
    assert len(out) == 1
    assert out[0].time == 3.0
    assert out[0].kind == 2
    assert out[0].receivers == CORRECT


def test_incomplete_waves_are_forgotten():
    adv = Adversary(_config({"node": 3, "strategy": "mirror_extreme"}), CORRECT)
    # un seul émetteur avance : les vagues ne se complètent jamais
    for ordinal in range(1, 200):
        adv.on_correct_pulse(0, 1, ordinal, float(ordinal))
        adv.on_correct_pulse(0, 2, ordinal, float(ordinal) + 0.5)
    assert len(adv.tallies) <= 2 * (TALLY_HORIZON + 1)
    assert min(key[1] for key in adv.tallies) >= 199 - TALLY_HORIZON


def test_recent_wave_survives_pruning():
    adv = Adversary(_config({"node": 3, "strategy": "mirror_extreme"}), CORRECT)
    assert adv.on_correct_pulse(0, 1, 7, 1.0) == []
    assert adv.on_correct_pulse(1, 1, 8, 1.5) == []
    assert adv.on_correct_pulse(1, 1, 7, 2.0) == []
    out = adv.on_correct_pulse(2, 1, 7, 3.0)
    assert [fp.time for fp in out] == [3.0]
