from dataclasses import replace

import numpy as np
import pytest

from app.errors import InfeasibleError
from app.models import FreqParams, OracleConfig, ParamOverrides, PhaseParams, StabParams, SystemParams
from app.services.freq_sync import FREQ_LAYER
from app.services.phase_sync import PHASE_LAYER, Broadcast, RoundStarted, SetTimer, TimerFired
from app.services.solver import condition_reports
from app.services.stabilizer import (
    NEXT_EPOCH,
    BeatDelivered,
    EmitNext,
    ResetCalled,
    alpha_stab,
    alpha_stab_closed_form,
    check_condition3,
    corrupt_state,
    initial_stab_state,
    make_oracle,
    oracle_step,
    solve_condition3,
    stab_on_event,
)


def _system(theta: float) -> SystemParams:
    return SystemParams(n=4, theta=theta, d=1e-6, u=1e-7, big_f=1e-6)


# ── Condition 3 ──
@pytest.mark.parametrize("theta, variant", [(1.0005, "phase"), (1.03, "phase"), (1.0005, "freq"), (1.004, "freq")])
def test_condition3_is_feasible(theta, variant):
    system = _system(theta)
    sync, stab = solve_condition3(system, variant)
    assert isinstance(sync, PhaseParams if variant == "phase" else FreqParams)
    assert stab.m >= 2
    assert check_condition3(sync, stab, system).feasible
    assert all(report.feasible for report in condition_reports(system, sync, stab))


@pytest.mark.parametrize("theta, variant, threshold", [(1.05, "phase", "alpha_stab"), (1.02, "freq", "alpha_bar")])
def test_condition3_is_infeasible(theta, variant, threshold):
    with pytest.raises(InfeasibleError) as exc:
        solve_condition3(_system(theta), variant)
    assert exc.value.threshold == threshold


def test_alpha_stab_orders_drift_bounds():
    assert alpha_stab(_system(1.0)) == pytest.approx(0.0, abs=1e-12)
    assert alpha_stab(_system(1.03)) < 1 < alpha_stab(_system(1.05))
    assert alpha_stab_closed_form(1.03) > 0


def test_envelope_after_m_pulses_is_reported():
    system = _system(1.0005)
    sync, stab = solve_condition3(system)
    assert stab.e_m == pytest.approx(sync.e_schedule(stab.m)[-1], rel=1e-9)
    assert stab.e_m < sync.e1
    assert stab.theta_star == system.theta


def test_too_few_pulses_per_beat_is_infeasible():
    with pytest.raises(InfeasibleError):
        solve_condition3(_system(1.0005), overrides=ParamOverrides(m=2))


def test_windows_grow_with_beat_skew():
    system = _system(1.0005)
    _, tight = solve_condition3(system)
    _, loose = solve_condition3(system, overrides=ParamOverrides(p_skew=5e-6))
    assert loose.p_skew == 5e-6
    assert loose.b1 > tight.b1


# ── Réducteur ──
UNIT = PhaseParams(
    theta=1.0, d=1.0, u=0.1, big_f=1.0, schedule="constant",
    tau1=[2.0], tau2=[3.0], big_t=[10.0], alpha=0.5, beta=0.5, e_limit=0.4,
)
STAB = StabParams(
    m=3, r_minus=5.0, r_plus=8.0, p_skew=0.5, b1=1.0, b2=1.0, b3=2.0,
    d_f=1.0, theta_star=1.0, e_m=0.5,
)


def _step(state, event):
    return stab_on_event(state, PHASE_LAYER, UNIT, STAB, event)


def _started():
    state, actions = initial_stab_state(PHASE_LAYER, UNIT, 0, 4, 1)
    assert actions == [SetTimer("start", 1.0, 0)]
    state, actions = _step(state, TimerFired("start", 1.0, 0))
    assert actions == [RoundStarted(1, 1.0), SetTimer("pulse", 3.0, 0)]
    assert state.round_started
    return state


def test_pulse_counter_emits_next_every_m_pulses():
    state = replace(_started(), i=2)
    state, actions = _step(state, TimerFired("pulse", 3.0, 0))
    assert state.i == 0
    assert actions[0] == Broadcast(1)
    assert SetTimer("stab:next", 3.5, NEXT_EPOCH) in actions
    _, actions = _step(state, TimerFired("stab:next", 3.5, NEXT_EPOCH))
    assert actions == [EmitNext()]


def test_beat_with_nonzero_counter_resets():
    state = replace(_started(), i=1)
    state, actions = _step(state, BeatDelivered(2.0, 1))
    assert actions == [ResetCalled(8.0, "counter"), SetTimer("stab:reset", 10.0, 1)]
    assert state.resetting and state.sync.mode == "halted"


def test_early_pulse_is_suppressed_and_resets():
    state, actions = _step(_started(), BeatDelivered(1.5, 1))
    assert actions == []
    state, actions = _step(state, TimerFired("pulse", 3.0, 0))
    assert not any(isinstance(act, Broadcast) for act in actions)
    assert actions == [ResetCalled(6.5, "early_pulse"), SetTimer("stab:reset", 9.5, 1)]
    assert state.suppressed == 1


def test_reset_restarts_round_one_after_wait():
    state, _ = _step(replace(_started(), i=1), BeatDelivered(2.0, 1))
    state, actions = _step(state, TimerFired("stab:reset", 10.0, 1))
    assert not state.resetting and state.i == 0
    assert actions == [RoundStarted(1, 10.0), SetTimer("pulse", 12.0, 1)]


def test_beat_during_reset_restarts_the_wait():
    state, _ = _step(replace(_started(), i=1), BeatDelivered(2.0, 1))
    state, actions = _step(state, BeatDelivered(3.0, 2))
    assert actions[0] == ResetCalled(8.0, "beat_during_reset")
    # l'ancienne reprise est périmée
    _, actions = _step(state, TimerFired("stab:reset", 10.0, 1))
    assert actions == []


def test_late_round_triggers_immediate_reset():
    state = _started()
    state = replace(state, sync=replace(state.sync, mode="waiting_round_end"))
    state, actions = _step(state, BeatDelivered(2.0, 1))
    assert actions == [SetTimer("stab:late", 10.0, 0)]
    state, actions = _step(state, TimerFired("stab:late", 10.0, 0))
    assert actions == [ResetCalled(0.0, "late_round"), SetTimer("stab:reset", 10.0, 1)]


def test_round_started_in_time_disarms_late_guard():
    state = _started()
    state = replace(state, sync=replace(state.sync, mode="waiting_round_end"))
    state, _ = _step(state, BeatDelivered(2.0, 1))
    state, actions = _step(state, TimerFired("round_end", 6.0, 0))
    assert state.round_started and isinstance(actions[0], RoundStarted)
    state, actions = _step(state, TimerFired("stab:late", 10.0, 0))
    assert actions == [] and state.resets == 0


@pytest.mark.parametrize("variant", ["phase", "freq"])
def test_corrupted_states_only_schedule_future_timers(variant):
    system = _system(1.0005)
    sync, stab = solve_condition3(system, variant)
    layer = PHASE_LAYER if variant == "phase" else FREQ_LAYER
    rng = np.random.default_rng(11)
    now = 5e-7
    for node in range(40):
        state, actions = corrupt_state(layer, sync, stab, node % 4, 4, 1, now, rng)
        assert 0 <= state.i < stab.m
        for act in actions:
            assert isinstance(act, SetTimer)
            assert act.local >= now - 1e-15


# ── Oracle ──
def _oracle(policy="random", chaos=False):
    return make_oracle(OracleConfig(policy=policy, chaos=chaos), STAB, [0, 1, 2, 3], np.random.default_rng(5))


def test_first_cycle_starts_after_stabilization_delay():
    oracle = _oracle()
    beats, wakeup = oracle_step(oracle, 0.0, {})
    times = [t for _, t, cycle in beats if cycle == 1]
    assert len(times) == 4
    assert min(times) >= oracle.stabilization_delay
    assert max(times) - min(times) <= STAB.p_skew + 1e-12
    assert wakeup == pytest.approx(min(times) + 4.0)


def test_chaos_beats_precede_stabilization():
    oracle = make_oracle(
        OracleConfig(policy="random", chaos=True, chaos_beats=6.0), STAB, [0, 1, 2, 3], np.random.default_rng(2)
    )
    beats, _ = oracle_step(oracle, 0.0, {})
    chaos = [t for _, t, cycle in beats if cycle == 0]
    assert chaos
    assert all(t < oracle.stabilization_delay for t in chaos)


def test_next_signals_trigger_following_cycle():
    oracle = _oracle()
    oracle_step(oracle, 0.0, {})
    at = oracle.window_all + 0.5
    for v in range(3):
        beats, _ = oracle_step(oracle, at + 0.01 * v, {v: at + 0.01 * v})
        assert beats == []
    beats, _ = oracle_step(oracle, at + 0.03, {3: at + 0.03})
    times = [t for _, t, _ in beats]
    assert len(times) == 4 and oracle.cycle == 2
    assert min(times) >= at + 0.03
    assert max(times) <= at + 0.03 + STAB.p_skew + 1e-12


def test_early_next_signals_are_ignored():
    oracle = _oracle(policy="earliest")
    oracle_step(oracle, 0.0, {})
    early = oracle.bmin + 0.5 * STAB.b1
    beats, _ = oracle_step(oracle, early, {0: early})
    assert beats == [] and oracle.cycle == 1
    on_time = oracle.window_open + 0.1
    beats, _ = oracle_step(oracle, on_time, {1: on_time})
    assert len(beats) == 4 and oracle.cycle == 2
    assert min(t for _, t, _ in beats) == pytest.approx(on_time)


def test_deadline_forces_a_cycle():
    oracle = _oracle(policy="latest")
    oracle_step(oracle, 0.0, {})
    deadline = oracle.deadline
    beats, _ = oracle_step(oracle, deadline, {})
    assert [t for _, t, _ in beats] == [pytest.approx(deadline + STAB.p_skew)] * 4


def test_split_policy_uses_both_ends_of_the_window():
    oracle = _oracle(policy="split_P")
    beats, _ = oracle_step(oracle, 0.0, {})
    times = sorted(t for _, t, _ in beats)
    assert times[-1] - times[0] == pytest.approx(STAB.p_skew)
