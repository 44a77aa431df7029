"""Moteur de simulation à événements discrets.

Relie horloges, canal, adversaire, réducteurs de nœuds et oracle de
battements. La file est ordonnée par (instant, numéro d'insertion) : deux
exécutions d'un même scénario avec la même graine produisent exactement la
même suite d'événements.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np

from app.config import LIMIT_REL_SLACK
from app.errors import InfeasibleError
from app.models import (
    FreqParams,
    PhaseParams,
    RoundTrace,
    RunSummary,
    Scenario,
    StabParams,
    Violation,
)
from app.services import freq_sync, invariants
from app.services.adversary import Adversary, FaultPulse, inject_fault_schedule
from app.services.core_model import (
    HardwareClock,
    invert_local_time,
    local_time,
    rate_at,
    rate_extrema,
    sample_clocks,
    sample_delay,
    validate_clock,
    validate_delay_policy,
)
from app.services.phase_sync import (
    Broadcast,
    PulseReceived,
    RoundComputation,
    RoundComputed,
    RoundStarted,
    SetTimer,
    TimerFired,
)
from app.services.solver import condition_reports, layer_for, resolve_params
from app.services.stabilizer import (
    BeatDelivered,
    BeatOracle,
    EmitNext,
    ResetCalled,
    corrupt_state,
    initial_stab_state,
    make_oracle,
    oracle_step,
    stab_on_event,
)
from app.utils.helpers import diameter

logger = logging.getLogger(__name__)

SyncParams = Union[PhaseParams, FreqParams]
TIME_LIMIT_FACTOR = 2.0


# ── File d'événements ───────────────────────────────────────
class EventQueue:
    """Tas (instant, seq, type, charge) ; seq croît à chaque insertion."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, str, Any]] = []
        self._seq = 0

    def push(self, time: float, kind: str, payload: Any = None) -> None:
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def pop(self) -> tuple[float, str, Any]:
        time, _, kind, payload = heapq.heappop(self._heap)
        return time, kind, payload

    @property
    def inserted(self) -> int:
        return self._seq

    def __len__(self) -> int:
        return len(self._heap)

    def __repr__(self) -> str:
        return f"EventQueue(size={len(self._heap)})"


# ── Enregistrement d'une exécution ──────────────────────────
@dataclass(frozen=True)
class PulseRecord:
    node: int
    kind: int
    ordinal: int
    real: float
    local: float
    aligned: Optional[int]


@dataclass
class RunRecord:
    """Vérité terrain d'une exécution, lue par les vérifications a posteriori.

    Les rondes sont indexées par rang d'impulsion « aligné » : depuis le début
    pour les algorithmes simples, depuis le premier battement conforme reçu
    par le nœud pour les variantes stabilisantes.
    """

    scenario: Scenario
    sync: SyncParams
    stab: Optional[StabParams]
    correct: tuple[int, ...]
    clocks: dict[int, HardwareClock]
    target: int
    pulses: dict[tuple, PulseRecord] = field(default_factory=dict)
    aligned: dict[int, dict[int, PulseRecord]] = field(default_factory=dict)
    second: dict[int, dict[int, PulseRecord]] = field(default_factory=dict)
    records: dict[int, dict[int, RoundComputation]] = field(default_factory=dict)
    resets: list[tuple[int, float, str]] = field(default_factory=list)
    next_signals: dict[int, list[float]] = field(default_factory=dict)
    first_beat: dict[int, float] = field(default_factory=dict)
    oracle: Optional[BeatOracle] = None
    diagnostics: Counter = field(default_factory=Counter)

    @property
    def system(self):
        return self.scenario.system

    @property
    def is_freq(self) -> bool:
        return isinstance(self.sync, FreqParams)

    @property
    def self_estimate(self) -> bool:
        return isinstance(self.sync, PhaseParams) and self.sync.self_estimate

    def envelope(self, horizon: int) -> list[float]:
        return self.sync.e_schedule(max(horizon, 1))

    def resets_between(self, node: int, start: float, end: float) -> int:
        return sum(1 for v, t, _ in self.resets if v == node and start <= t < end)


@dataclass
class SimulationResult:
    run: RunRecord
    traces: list[RoundTrace]
    violations: list[Violation]
    summary: RunSummary


# ── Moteur ──────────────────────────────────────────────────
class Simulation:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None) -> None:
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        system = scenario.system
        sync, stab = resolve_params(scenario.algorithm, system, scenario.overrides)
        if scenario.checks.feasibility:
            for report in condition_reports(system, sync, stab):
                if not report.feasible:
                    bad = report.violations[0]
                    raise InfeasibleError(bad.name, bad.lhs - bad.rhs, report.condition)
        self.sync, self.stab = sync, stab
        self.layer = layer_for(scenario.algorithm)
        validate_delay_policy(scenario.delay_policy, system)

        streams = np.random.SeedSequence(self.seed).spawn(5)
        self.rng_clock, self.rng_delay, self.rng_fault, self.rng_oracle, self.rng_state = (
            np.random.default_rng(ss) for ss in streams
        )
        faulty = scenario.faults.faulty_set
        self.correct = tuple(v for v in range(system.n) if v not in faulty)
        self.horizon = self._horizon()
        clocks = sample_clocks(system, scenario.clock_policy, self.rng_clock, self.horizon, self.correct)
        for clock in clocks.values():
            validate_clock(clock, system.theta, system.nu if scenario.is_freq else None)

        target = scenario.rounds + 1
        if stab is not None:
            target = scenario.beat_cycles * stab.m + 1
        self.run = RunRecord(
            scenario=scenario, sync=sync, stab=stab, correct=self.correct,
            clocks=clocks, target=target,
        )
        for v in self.correct:
            self.run.aligned[v] = {}
            self.run.second[v] = {}
            self.run.records[v] = {}
            self.run.next_signals[v] = []
        self.queue = EventQueue()
        self.states: dict[int, Any] = {}
        self.ordinals: Counter = Counter()
        self.aligned_active = {v: stab is None for v in self.correct}
        self.aligned_count = {v: 0 for v in self.correct}
        self.current_aligned: dict[int, Optional[int]] = {v: None for v in self.correct}
        self.adversary = Adversary(scenario.faults, self.correct)
        self.oracle: Optional[BeatOracle] = None
        self._wakeups: set[float] = set()
        self.now = 0.0

    def _horizon(self) -> float:
        """Majorant généreux de la durée réelle nécessaire."""
        s = self.scenario.system
        sync = self.sync
        if isinstance(sync, PhaseParams):
            period = sync.big_t_at(1) + s.theta * (sync.e1 + s.u)
        else:
            period = sync.big_t + sync.theta_bar * (sync.e1 + s.u)
        if self.stab is None:
            return s.big_f + (self.scenario.rounds + 3) * period
        span = self.stab.b1 + self.stab.b2 + self.stab.b3
        cycles = self.scenario.beat_cycles + 2
        return s.big_f + 4 * span + cycles * (span + self.stab.r_plus + self.stab.m * period)

    # ── émission ──
    def _apply(self, v: int, local: float, actions: list) -> None:
        clock = self.run.clocks[v]
        for act in actions:
            if isinstance(act, SetTimer):
                real = invert_local_time(clock, max(act.local, clock.offset))
                self.queue.push(max(real, self.now), "timer", (v, act.tag, act.local, act.epoch))
            elif isinstance(act, Broadcast):
                self._broadcast(v, local, act)
            elif isinstance(act, RoundStarted):
                self.current_aligned[v] = None
            elif isinstance(act, RoundComputed):
                self._record_round(v, act.record)
            elif isinstance(act, EmitNext):
                self.run.next_signals[v].append(self.now)
                if self.oracle is not None:
                    self._oracle(oracle_step(self.oracle, self.now, {v: self.now}))
            elif isinstance(act, ResetCalled):
                self.run.resets.append((v, self.now, act.reason))
                self.run.diagnostics[f"reset_{act.reason}"] += 1

    def _broadcast(self, v: int, local: float, act: Broadcast) -> None:
        kind = act.kind
        self.ordinals[(v, kind)] += 1
        ordinal = self.ordinals[(v, kind)]
        aligned: Optional[int] = None
        if kind == 1:
            if self.aligned_active[v]:
                self.aligned_count[v] += 1
                aligned = self.aligned_count[v]
            self.current_aligned[v] = aligned
        else:
            aligned = self.current_aligned[v]
        ref = (v, kind, ordinal)
        record = PulseRecord(v, kind, ordinal, self.now, local, aligned)
        self.run.pulses[ref] = record
        if aligned is not None:
            (self.run.aligned if kind == 1 else self.run.second)[v][aligned] = record
        system = self.scenario.system
        for w in self.correct:
            if w == v and not act.include_self:
                continue
            delay = sample_delay(self.scenario.delay_policy, system, v, w, self.rng_delay)
            self.queue.push(self.now + delay, "deliver", (v, w, ref))
        for fp in self.adversary.on_correct_pulse(v, kind, ordinal, self.now):
            self._send_fault(fp)

    def _send_fault(self, fp: FaultPulse) -> None:
        self.ordinals[(fp.sender, fp.kind)] += 1
        ref = (fp.sender, fp.kind, self.ordinals[(fp.sender, fp.kind)])
        self.run.pulses[ref] = PulseRecord(fp.sender, fp.kind, ref[2], fp.time, math.nan, None)
        for w in fp.receivers:
            delay = sample_delay(self.scenario.delay_policy, self.scenario.system, fp.sender, w, self.rng_delay)
            self.queue.push(fp.time + delay, "deliver", (fp.sender, w, ref))
        self.run.diagnostics["fault_pulses"] += 1

    def _record_round(self, v: int, record: RoundComputation) -> None:
        self.run.diagnostics["fallbacks"] += int(record.fallback) + int(record.xi_fallback)
        self.run.diagnostics["late"] += int(record.late)
        self.run.diagnostics["clamps"] += int(record.clamped)
        aligned = self.current_aligned[v]
        if aligned is not None:
            self.run.records[v][aligned] = record

    def _oracle(self, output: tuple[list[tuple[int, float, int]], Optional[float]]) -> None:
        beats, wakeup = output
        for v, t, cycle in beats:
            self.queue.push(max(t, self.now), "beat", (v, cycle))
        if wakeup is not None and wakeup > self.now and wakeup not in self._wakeups:
            self._wakeups.add(wakeup)
            self.queue.push(wakeup, "oracle", None)

    # ── réception ──
    def _dispatch(self, v: int, local: float, event) -> None:
        if self.stab is not None:
            state, actions = stab_on_event(self.states[v], self.layer, self.sync, self.stab, event)
        else:
            state, actions = self.layer.on_event(self.states[v], self.sync, event)
        self.states[v] = state
        self._apply(v, local, actions)

    def _on_beat(self, v: int, cycle: int) -> None:
        local = local_time(self.run.clocks[v], self.now)
        if cycle >= 1 and v not in self.run.first_beat:
            self.run.first_beat[v] = self.now
            self.aligned_active[v] = True
        self.run.diagnostics["beats" if cycle >= 1 else "chaos_beats"] += 1
        self._dispatch(v, local, BeatDelivered(local, cycle))

    def _start(self) -> None:
        system = self.scenario.system
        for v in self.correct:
            clock = self.run.clocks[v]
            if self.stab is not None and self.scenario.corrupt_initial_state:
                state, actions = corrupt_state(
                    self.layer, self.sync, self.stab, v, system.n, system.f, clock.offset, self.rng_state
                )
            elif self.stab is not None:
                state, actions = initial_stab_state(self.layer, self.sync, v, system.n, system.f)
            else:
                state = self.layer.initial_state(v, system.n, system.f, self.sync)
                actions = self.layer.start_actions(state, self.sync)
            self.states[v] = state
            self._apply(v, clock.offset, actions)
        kinds = (1, 2) if self.scenario.is_freq else (1,)
        for fp in inject_fault_schedule(self.scenario.faults, self.correct, self.horizon, self.rng_fault, kinds):
            self._send_fault(fp)
        if self.stab is not None:
            self.oracle = make_oracle(self.scenario.oracle, self.stab, list(self.correct), self.rng_oracle)
            self.run.oracle = self.oracle
            self._oracle(oracle_step(self.oracle, 0.0, {}))

    def _done(self) -> bool:
        if min(self.aligned_count.values()) < self.run.target:
            return False
        if self.oracle is not None:
            return self.oracle.cycle > self.scenario.beat_cycles
        return True

    def execute(self) -> RunRecord:
        self._start()
        limit = TIME_LIMIT_FACTOR * self.horizon
        processed = 0
        while self.queue and not self._done():
            time, kind, payload = self.queue.pop()
            if time > limit:
                logger.warning("⚠️ horizon %.6g s dépassé, arrêt de la simulation", limit)
                self.run.diagnostics["horizon_exceeded"] += 1
                break
            self.now = time
            processed += 1
            if kind == "timer":
                v, tag, local, epoch = payload
                self._dispatch(v, local, TimerFired(tag, local, epoch))
            elif kind == "deliver":
                sender, w, ref = payload
                local = local_time(self.run.clocks[w], time)
                self._dispatch(w, local, PulseReceived(sender, local, ref))
            elif kind == "beat":
                self._on_beat(*payload)
            elif kind == "oracle":
                self._wakeups.discard(time)
                self._oracle(oracle_step(self.oracle, time, {}))
        self.run.diagnostics["events"] = processed
        for v in self.correct:
            state = self.states[v]
            sync_state = getattr(state, "sync", state)
            self.run.diagnostics["dropped"] += sync_state.dropped
            self.run.diagnostics["suppressed"] += getattr(state, "suppressed", 0)
        logger.debug("%d événements traités, %d insérés", processed, self.queue.inserted)
        return self.run


# ── Traces ──────────────────────────────────────────────────
def build_traces(run: RunRecord) -> list[RoundTrace]:
    """Une trace par rang aligné dont tous les nœuds corrects ont émis l'impulsion."""
    last = 0
    while all(last + 1 in run.aligned[v] for v in run.correct):
        last += 1
    last = min(last, run.target - 1)
    envelope = run.envelope(last)
    traces: list[RoundTrace] = []
    for r in range(1, last + 1):
        p = {v: run.aligned[v][r].real for v in run.correct}
        trace = RoundTrace(r=r, p_vector=p, skew=diameter(p.values()), envelope=envelope[r - 1])
        recs = {v: run.records[v].get(r) for v in run.correct}
        trace.deltas = {v: rec.delta for v, rec in recs.items() if rec is not None}
        nxt = {v: run.aligned[v][r + 1].real for v in run.correct if r + 1 in run.aligned[v]}
        start = min(p.values())
        end = min(nxt.values()) if len(nxt) == len(p) else math.inf
        trace.resets = sum(1 for v, t, _ in run.resets if start <= t < end)
        if run.is_freq:
            _freq_fields(run, trace, recs, nxt)
        traces.append(trace)
    return traces


def _freq_fields(run: RunRecord, trace: RoundTrace, recs: dict, nxt: dict[int, float]) -> None:
    r = trace.r
    q = {v: run.second[v][r].real for v in run.correct if r in run.second[v]}
    trace.q_vector = q
    if len(q) == len(run.correct):
        trace.q_skew = diameter(q.values())
    trace.xis = {v: rec.xi for v, rec in recs.items() if rec is not None and rec.xi is not None}
    trace.mus = {v: rec.mu for v, rec in recs.items() if rec is not None and rec.mu is not None}
    lows: list[float] = []
    highs: list[float] = []
    for v in run.correct:
        mu = trace.mus.get(v)
        if mu is None or v not in nxt:
            continue
        a, b = trace.p_vector[v], nxt[v]
        trace.rho_bar[v] = mu * rate_at(run.clocks[v], (a + b) / 2)
        lo, hi = rate_extrema(run.clocks[v], a, b)
        lows.append(mu * lo)
        highs.append(mu * hi)
    if len(trace.rho_bar) == len(run.correct):
        trace.rate_spread = diameter(trace.rho_bar.values())
        trace.interval_spread = max(highs) - min(lows)


# ── Résumé ──────────────────────────────────────────────────
def steady_state_skew(traces: list[RoundTrace]) -> float:
    """Écart maximal sur la dernière fraction des rondes (au moins une)."""
    if not traces:
        return math.nan
    return max(t.skew for t in invariants.steady_window(traces))


def summarize(run: RunRecord, traces: list[RoundTrace], violations: list[Violation], seed: int) -> RunSummary:
    scenario = run.scenario
    steady = steady_state_skew(traces)
    margin = max((t.skew - t.envelope for t in traces), default=math.nan)
    bounds: dict[str, float] = {"e1": run.sync.e1, "e_limit": run.sync.e_limit}
    soft: dict[str, float | bool] = {}
    if isinstance(run.sync, FreqParams):
        p = run.sync
        bounds.update(
            steady_state_bound=freq_sync.steady_state_bound_freq(p),
            rate_floor=freq_sync.rate_floor(p),
            stability_bound=freq_sync.stability_bound(p),
            estimate_error_bound=freq_sync.freq_estimate_error_bound(p),
        )
        regime = freq_sync.regime_28u(p)
        soft["regime_28u_applicable"] = bool(regime["applicable"])
        soft["skew_le_soft_28u"] = bool(steady <= float(regime["soft_bound"]))
        soft["skew_le_steady_bound"] = bool(steady <= bounds["steady_state_bound"])
        spreads = [t.rate_spread for t in traces if t.rate_spread is not None]
        if spreads:
            tail = invariants.steady_window(spreads)
            soft["steady_rate_spread"] = max(tail)
            soft["rate_spread_le_floor"] = bool(max(tail) <= bounds["rate_floor"] * (1 + LIMIT_REL_SLACK))
    resets_after = 0
    compliant = 0
    if run.stab is not None:
        bounds["e_M"] = run.stab.e_m
        oracle = run.oracle
        compliant = len(oracle.history) if oracle is not None else 0
        if oracle is not None and len(oracle.history) >= 2:
            beat2 = min(oracle.history[1].values())
            resets_after = sum(1 for _, t, _ in run.resets if t >= beat2)
    return RunSummary(
        scenario=scenario.name,
        algorithm=scenario.algorithm,
        seed=seed,
        verdict=invariants.verdict(violations),
        rounds_completed=len(traces),
        steady_state_skew=steady,
        e_limit=run.sync.e_limit,
        max_margin=margin,
        resets_total=len(run.resets),
        resets_after_beat2=resets_after,
        compliant_beats=compliant,
        diagnostics=dict(sorted(run.diagnostics.items())),
        bounds=bounds,
        soft_checks=soft,
    )


def run(scenario: Scenario, seed: Optional[int] = None) -> SimulationResult:
    """Exécute un scénario puis vérifie toutes les familles d'invariants."""
    sim = Simulation(scenario, seed)
    logger.info(
        "▶️ simulation %s (%s), n=%d, graine %d",
        scenario.name or "sans nom", scenario.algorithm, scenario.system.n, sim.seed,
    )
    record = sim.execute()
    traces = build_traces(record)
    violations = invariants.evaluate(record, traces)
    summary = summarize(record, traces, violations, sim.seed)
    if summary.verdict.passed:
        logger.info("✅ %d rondes, écart établi %.6g s", summary.rounds_completed, summary.steady_state_skew)
    else:
        logger.warning("❌ %d violation(s) d'invariants", sum(summary.verdict.violation_counts.values()))
    return SimulationResult(run=record, traces=traces, violations=violations, summary=summary)
