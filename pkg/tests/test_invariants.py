"""Classement des dépassements, verdict et familles fréquentielles."""

from __future__ import annotations

import pytest

from app.models import Violation
from app.services import freq_sync, invariants, sim_engine
from app.services.artifacts import load_scenario
from app.utils.helpers import classify, slack


@pytest.fixture
def freq_result(scenario_dir):
    scenario = load_scenario(scenario_dir / "worst_drift.json").model_copy(update={"rounds": 12})
    return sim_engine.run(scenario)


def _fails(found: list[Violation]) -> set[str]:
    return {v.tag for v in found if v.severity == "fail"}


# ── Classement ──
def test_overshoot_within_slack_is_marginal():
    assert classify(1.0, 1.0) == "ok"
    assert classify(1.0 + 0.5 * slack(1.0), 1.0) == "marginal"


def test_overshoot_beyond_slack_fails():
    assert classify(1.0 + 2 * slack(1.0), 1.0) == "fail"
    assert classify(1.0 + 5e-7, 1.0) == "fail"
    assert classify(2.0, 1.0) == "fail"


def test_verdict_fails_on_small_real_overshoot():
    measured = 1.0 + 5e-7
    vio = Violation(
        family="envelope", tag="basic", round=3, measured=measured, bound=1.0,
        severity=classify(measured, 1.0),
    )
    result = invariants.verdict([vio])
    assert not result.passed
    assert result.violation_counts == {"envelope.basic": 1}


def test_verdict_passes_with_marginal_and_diagnostic_only():
    measured = 1.0 + 0.5 * slack(1.0)
    found = [
        Violation(family="envelope", tag="basic", measured=measured, bound=1.0,
                  severity=classify(measured, 1.0)),
        Violation(family=invariants.DIAGNOSTIC, tag="iteration", measured=2.0, bound=1.0),
    ]
    result = invariants.verdict(found)
    assert result.passed
    assert result.marginal_counts == {"diagnostic.iteration": 1, "envelope.basic": 1}


def test_steady_window_keeps_last_fifth():
    assert invariants.steady_window(list(range(10))) == [8, 9]
    assert invariants.steady_window([4]) == [4]
    assert invariants.steady_window([]) == []


# ── Famille fréquentielle ──
def test_clean_frequency_run_has_no_frequency_failures(freq_result):
    counts = freq_result.summary.verdict.violation_counts
    assert not any(key.startswith("frequency.") for key in counts), counts


def test_corrupted_rate_estimate_is_detected(freq_result):
    run, trace, nxt = freq_result.run, freq_result.traces[3], freq_result.traces[4]
    v = run.correct[0]
    rec = run.records[v][trace.r]
    w = next(w for w in run.correct if w != v and w in rec.rate_estimates)
    rec.rate_estimates[w] += 10 * freq_sync.freq_estimate_error_bound(run.sync)
    found = invariants.assert_round_invariants(run, trace, run.scenario.checks, nxt)
    assert "freq_est" in _fails(found)
    assert any(vio.tag == "freq_est" and vio.nodes == sorted([v, w]) for vio in found)


def test_rate_drift_within_round_is_detected(freq_result):
    run, trace, nxt = freq_result.run, freq_result.traces[3], freq_result.traces[4]
    v = run.correct[-1]
    trace.rho_bar[v] += 0.01
    found = invariants.assert_round_invariants(run, trace, run.scenario.checks, nxt)
    assert "stability" in _fails(found)


def test_steady_window_bounds_are_enforced(freq_result):
    run, traces = freq_result.run, freq_result.traces
    p = run.sync
    traces[-2].interval_spread = 2 * freq_sync.rate_floor(p)
    traces[-1].skew = 2 * freq_sync.steady_state_bound_freq(p)
    found = invariants.evaluate(run, traces)
    steady = {v.tag: v for v in found if v.family == "frequency" and v.tag in ("rate_floor", "steady_state")}
    assert set(steady) == {"rate_floor", "steady_state"}
    assert steady["rate_floor"].round == traces[-2].r
    assert steady["steady_state"].round == traces[-1].r
