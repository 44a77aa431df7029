"""Balayages : pente de l'écart établi en U, tendance en θ."""

from __future__ import annotations

import pytest

from app.errors import ConfigError
from app.services import sim_engine
from app.services.sweep import apply_axis, fit_through_origin, is_nondecreasing, sweep, sweep_report

D = 1e-6


def _split_attack(make_scenario, u: float):
    """θ = 1, délais fixés par lien et nœud 3 en split_early_late : écart établi de 2U."""
    lo, hi = D - u, D
    table = [
        [hi, hi, lo, hi],
        [lo, lo, lo, hi],
        [lo, hi, hi, hi],
        [lo, hi, lo, hi],
    ]
    return make_scenario(
        name=f"split_attack_u{u:g}",
        system={"theta": 1.0, "d": D, "u": u},
        clock_policy={"kind": "all_nominal"},
        delay_policy={"kind": "per_link_table", "table": table},
        faults={"faults": [{"node": 3, "strategy": "split_early_late"}]},
        rounds=40,
    )


def test_steady_skew_grows_linearly_in_u(make_scenario):
    us = [5e-8, 1e-7, 2e-7]
    skews = []
    for u in us:
        summary = sim_engine.run(_split_attack(make_scenario, u), seed=3).summary
        assert summary.verdict.passed, summary.verdict.violation_counts
        skews.append(summary.steady_state_skew)
    slope = fit_through_origin(us, skews)
    assert 2.0 * (1 - 1e-6) <= slope <= 4.0
    for u, skew in zip(us, skews):
        assert skew == pytest.approx(2 * u, rel=1e-6)


def test_steady_skew_is_nondecreasing_in_theta(make_scenario):
    template = make_scenario(
        name="drift_only",
        clock_policy={"kind": "drift_worstcase_split"},
        delay_policy={"kind": "constant_max"},
        rounds=40,
    )
    values = [1.0, 1.0005, 1.001, 1.002]
    rows = sweep(template, "theta", values, trials=2, base_seed=5)
    assert all(row.status == "pass" for row in rows)
    report = sweep_report("theta", rows)
    assert report["nondecreasing"] is True
    means = [point["mean_skew"] for point in report["points"]]
    assert means[-1] > means[0]


def test_fit_through_origin_ignores_missing_points():
    assert fit_through_origin([1.0, 2.0, float("nan")], [2.0, 4.0, 7.0]) == pytest.approx(2.0)
    assert is_nondecreasing([0.0, 1.0, 1.0, float("nan"), 3.0])
    assert not is_nondecreasing([2.0, 1.0])


def test_n_axis_trims_faults(make_scenario):
    template = make_scenario(
        system={"n": 7, "f": 2},
        faults={"faults": [{"node": 3, "strategy": "silent"}, {"node": 6, "strategy": "silent"}]},
    )
    scenario = apply_axis(template, "n", 4)
    assert scenario.system.n == 4 and scenario.system.f == 1
    assert [spec.node for spec in scenario.faults.faults] == [3]
    with pytest.raises(ConfigError):
        apply_axis(template, "colour", 1.0)
