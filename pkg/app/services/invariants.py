"""Vérification a posteriori des propriétés garanties par l'analyse.

Chaque famille compare une grandeur mesurée sur la vérité terrain à sa borne
analytique ; une violation donne le tag de la propriété, la ronde, les nœuds,
la mesure et la borne. Les dépassements dans la tolérance numérique sont
« marginal », les autres « fail ».
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from typing import TYPE_CHECKING, Iterable, Optional, TypeVar

from app.config import LIMIT_REL_SLACK, STEADY_STATE_FRACTION
from app.errors import ModelViolationError
from app.models import ChecksConfig, FreqParams, RoundTrace, Verdict, Violation
from app.services import freq_sync
from app.services.core_model import rate_extrema
from app.services.phase_sync import (
    measurement_error_bound,
    self_estimate_error_bound,
    step_bound,
    step_spread_bound,
)
from app.utils.helpers import classify, diameter

if TYPE_CHECKING:
    from app.services.sim_engine import RunRecord

logger = logging.getLogger(__name__)

DIAGNOSTIC = "diagnostic"
FIRST_VIOLATIONS = 20


def _upper(
    out: list[Violation], family: str, tag: str, r: Optional[int], nodes: Iterable[int],
    measured: float, bound: float,
) -> None:
    """measured ≤ bound."""
    grade = classify(measured, bound)
    if grade != "ok":
        out.append(Violation(
            family=family, tag=tag, round=r, nodes=sorted(nodes),
            measured=measured, bound=bound, severity=grade,
        ))


def _lower(
    out: list[Violation], family: str, tag: str, r: Optional[int], nodes: Iterable[int],
    measured: float, bound: float,
) -> None:
    """measured ≥ bound."""
    grade = classify(bound, measured)
    if grade != "ok":
        out.append(Violation(
            family=family, tag=tag, round=r, nodes=sorted(nodes),
            measured=measured, bound=bound, severity=grade,
        ))


def _event(out: list[Violation], family: str, tag: str, r: Optional[int], nodes: Iterable[int]) -> None:
    out.append(Violation(family=family, tag=tag, round=r, nodes=sorted(nodes), measured=1.0, bound=0.0))


# ── Familles par ronde ──────────────────────────────────────
def _envelope(run: "RunRecord", trace: RoundTrace, out: list[Violation]) -> None:
    tag = "basic_freq" if run.is_freq else "basic"
    if run.stab is not None:
        tag = "stab_freq" if run.is_freq else "stab"
    _upper(out, "envelope", tag, trace.r, run.correct, trace.skew, trace.envelope)


def _period(run: "RunRecord", trace: RoundTrace, out: list[Violation]) -> None:
    """A_min ≤ p_v(r+1) − p_v(r) ≤ A_max."""
    s = run.system
    r = trace.r
    delta_max = step_bound(s, trace.envelope, run.self_estimate)
    sync = run.sync
    if isinstance(sync, FreqParams):
        low = (sync.big_t - delta_max) / s.theta**3
        high = sync.big_t + delta_max
    else:
        nominal = sync.big_t_at(r) + sync.tau1_at(r + 1) - sync.tau1_at(r)
        low = (nominal - delta_max) / s.theta
        high = nominal + delta_max
    for v in run.correct:
        cur = run.aligned[v].get(r)
        nxt = run.aligned[v].get(r + 1)
        if cur is None or nxt is None or run.resets_between(v, cur.real, nxt.real):
            continue
        span = nxt.real - cur.real
        _lower(out, "problem", "period_min", r, [v], span, low)
        _upper(out, "problem", "period_max", r, [v], span, high)


def _matches(run: "RunRecord", ref: Optional[tuple], r: int) -> bool:
    rec = run.pulses.get(ref) if ref is not None else None
    return rec is not None and rec.aligned == r


def _measurement(run: "RunRecord", trace: RoundTrace, out: list[Violation]) -> None:
    s = run.system
    r = trace.r
    for v in run.correct:
        rec = run.records[v].get(r)
        if rec is None:
            continue
        p_v = trace.p_vector[v]
        own = rec.arrivals.get(v)
        if not run.self_estimate and (own is None or not _matches(run, own.ref, r)):
            continue
        for w in run.correct:
            if w == v and run.self_estimate:
                continue
            arr = rec.arrivals.get(w)
            if w not in rec.estimates or arr is None or not _matches(run, arr.ref, r):
                continue
            truth = p_v - trace.p_vector[w]
            gap = abs(truth)
            bound = self_estimate_error_bound(s, gap) if run.self_estimate else measurement_error_bound(s, gap)
            _upper(out, "measurement", "est", r, [v, w], abs(rec.estimates[w] - truth), bound)


def _step(run: "RunRecord", trace: RoundTrace, out: list[Violation]) -> None:
    s = run.system
    r = trace.r
    recs = {v: run.records[v].get(r) for v in run.correct}
    for v, rec in recs.items():
        if rec is not None and not rec.fallback:
            _upper(out, "step", "step_magnitude", r, [v], abs(rec.delta), step_bound(s, trace.skew, run.self_estimate))
    if any(rec is None or rec.fallback for rec in recs.values()):
        return
    targets = {v: trace.p_vector[v] - recs[v].delta for v in run.correct}
    _upper(out, "step", "step_convergence", r, run.correct, diameter(targets.values()),
           step_spread_bound(s, trace.skew, run.self_estimate))
    delta = (self_estimate_error_bound if run.self_estimate else measurement_error_bound)(s, trace.skew)
    low, high = min(trace.p_vector.values()) - delta, max(trace.p_vector.values()) + delta
    for v, y in targets.items():
        _lower(out, "step", "step_validity", r, [v], y, low)
        _upper(out, "step", "step_validity", r, [v], y, high)


def _execution(run: "RunRecord", trace: RoundTrace, out: list[Violation]) -> None:
    r = trace.r
    for v in run.correct:
        rec = run.records[v].get(r)
        if rec is None:
            if r + 1 in run.aligned[v] and not run.resets_between(v, run.aligned[v][r].real, run.aligned[v][r + 1].real):
                _event(out, "execution", "missing_computation", r, [v])
            continue
        if rec.late:
            _event(out, "execution", "late_computation", r, [v])
        windows = [("", rec.arrivals, 1)]
        if run.is_freq:
            windows.append(("2", rec.arrivals2, 2))
        for suffix, arrivals, kind in windows:
            for w in run.correct:
                if kind == 1 and w == v and run.self_estimate:
                    continue
                arr = arrivals.get(w)
                if arr is None:
                    _event(out, "execution", f"missed_pulse{suffix}", r, [v, w])
                elif not _matches(run, arr.ref, r):
                    _event(out, "execution", f"foreign_pulse{suffix}", r, [v, w])


def _rate_estimates(run: "RunRecord", trace: RoundTrace, out: list[Violation], bound: float) -> None:
    """|estimation de ρ̄_w − ρ̄_v par v − vérité| ≤ borne, impulsions appariées seulement."""
    r = trace.r
    for v in run.correct:
        rec = run.records[v].get(r)
        if rec is None or v not in trace.rho_bar:
            continue
        for w, est in rec.rate_estimates.items():
            if w not in trace.rho_bar:
                continue
            first, second = rec.arrivals.get(w), rec.arrivals2.get(w)
            if first is None or second is None:
                continue
            if not (_matches(run, first.ref, r) and _matches(run, second.ref, r)):
                continue
            truth = trace.rho_bar[w] - trace.rho_bar[v]
            _upper(out, "frequency", "freq_est", r, [v, w], abs(est - truth), bound)


def _stability(run: "RunRecord", trace: RoundTrace, nxt: RoundTrace, out: list[Violation], bound: float) -> None:
    """|μ_v(r)h_v(t) − ρ̄_v(r)| ≤ borne sur [p_v(r), p_v(r+1)]."""
    r = trace.r
    for v, rho in trace.rho_bar.items():
        mu = trace.mus.get(v)
        a, b = trace.p_vector.get(v), nxt.p_vector.get(v)
        if mu is None or a is None or b is None or run.resets_between(v, a, b):
            continue
        lo, hi = rate_extrema(run.clocks[v], a, b)
        _upper(out, "frequency", "stability", r, [v], max(mu * hi - rho, rho - mu * lo), bound)


def _frequency(run: "RunRecord", trace: RoundTrace, nxt: Optional[RoundTrace], out: list[Violation]) -> None:
    p: FreqParams = run.sync  # type: ignore[assignment]
    r = trace.r
    top = p.theta**2
    for v, mu in trace.mus.items():
        _lower(out, "frequency", "multiplier_range", r, [v], mu, 1.0)
        _upper(out, "frequency", "multiplier_range", r, [v], mu, top)
    if trace.q_skew is not None:
        _upper(out, "frequency", "second_pulse", r, run.correct, trace.q_skew,
               freq_sync.second_pulse_skew_bound(p, trace.skew))
    _rate_estimates(run, trace, out, freq_sync.freq_estimate_error_bound(p))
    if nxt is None:
        return
    _stability(run, trace, nxt, out, freq_sync.stability_bound(p))
    if trace.rate_spread is not None and nxt.rate_spread is not None:
        _upper(out, "frequency", "freq_convergence", r + 1, run.correct, nxt.rate_spread,
               freq_sync.rate_recurrence_bound(p, trace.rate_spread))
    if trace.interval_spread is not None:
        _upper(out, DIAGNOSTIC, "iteration", r + 1, run.correct, nxt.skew,
               freq_sync.iteration_bound(p, trace.skew, trace.interval_spread))


def assert_round_invariants(
    run: "RunRecord", trace: RoundTrace, checks: ChecksConfig, nxt: Optional[RoundTrace] = None
) -> list[Violation]:
    """Toutes les familles actives pour une ronde ; `nxt` est la trace suivante si elle existe."""
    out: list[Violation] = []
    if checks.envelope:
        _envelope(run, trace, out)
    if checks.problem and nxt is not None:
        _period(run, trace, out)
    if checks.measurement:
        _measurement(run, trace, out)
    if checks.step:
        _step(run, trace, out)
    if checks.execution:
        _execution(run, trace, out)
    if checks.frequency and run.is_freq:
        _frequency(run, trace, nxt, out)
    return out


# ── Cycles de battements ────────────────────────────────────
def assert_cycle_invariants(run: "RunRecord", traces: list[RoundTrace]) -> list[Violation]:
    """Fenêtre après battement, placement des NEXT et des battements, absence de reset."""
    out: list[Violation] = []
    stab, oracle = run.stab, run.oracle
    if stab is None or oracle is None or not oracle.history:
        return out
    ts, m = stab.theta_star, stab.m
    tau1 = run.sync.tau1_at(1) if not run.is_freq else run.sync.tau1
    by_round = {t.r: t for t in traces}
    cycles = min(run.scenario.beat_cycles, len(oracle.history))
    for k in range(1, cycles + 1):
        beats = oracle.history[k - 1]
        bmin = min(beats.values())
        first = (k - 1) * m + 1
        for v in run.correct:
            pulse = run.aligned[v].get(first)
            if pulse is None:
                continue
            _lower(out, "stabilization", "init_stab_window", first, [v], pulse.real, bmin + stab.r_minus / ts)
            _upper(out, "stabilization", "init_stab_window", first, [v], pulse.real,
                   bmin + stab.p_skew + stab.r_plus + tau1)
        if k == 1 and first in by_round:
            _upper(out, "stabilization", "init_stab_skew", first, run.correct, by_round[first].skew, run.sync.e1)

        opened = bmin + stab.b1
        for v in run.correct:
            signal = next((t for t in run.next_signals[v] if t >= opened), None)
            if signal is None:
                if len(oracle.history) > k:
                    _event(out, "stabilization", "N_missing", k * m, [v])
                continue
            _lower(out, "stabilization", "N", k * m, [v], signal, opened + stab.b2)
            _upper(out, "stabilization", "N", k * m, [v], signal, opened + stab.b2 + stab.b3)

        if len(oracle.history) > k:
            following = oracle.history[k]
            reach = (ts + 1) * stab.e_m + stab.p_skew
            for v in run.correct:
                pulse = run.aligned[v].get(k * m)
                if pulse is None or v not in following:
                    continue
                _lower(out, "stabilization", "beat_placement", k * m, [v], following[v], pulse.real)
                _upper(out, "stabilization", "beat_placement", k * m, [v], following[v], pulse.real + reach)

    if len(oracle.history) >= 2:
        beat2 = min(oracle.history[1].values())
        for v, t, reason in run.resets:
            if t >= beat2:
                out.append(Violation(
                    family="stabilization", tag="no_reset", nodes=[v],
                    measured=t, bound=beat2,
                ))
                logger.debug("reset tardif du nœud %d à %.9g (%s)", v, t, reason)
    return out


# ── Régime établi ───────────────────────────────────────────
_T = TypeVar("_T")


def steady_window(items: list[_T]) -> list[_T]:
    """Dernière fraction STEADY_STATE_FRACTION des éléments (au moins un)."""
    if not items:
        return []
    return items[-max(1, math.ceil(STEADY_STATE_FRACTION * len(items))):]


def _steady_frequency(run: "RunRecord", traces: list[RoundTrace], out: list[Violation]) -> None:
    """Plancher de ‖ρ‖ et erreur établie, bornes asymptotiques avec LIMIT_REL_SLACK."""
    p: FreqParams = run.sync  # type: ignore[assignment]
    window = steady_window(traces)
    if not window:
        return
    nodes = run.correct
    spreads = [t for t in window if t.interval_spread is not None]
    if spreads:
        worst = max(spreads, key=lambda t: t.interval_spread)
        _upper(out, "frequency", "rate_floor", worst.r, nodes, worst.interval_spread,
               freq_sync.rate_floor(p) * (1 + LIMIT_REL_SLACK))
    bound = freq_sync.steady_state_bound_freq(p)
    if math.isfinite(bound):
        worst = max(window, key=lambda t: t.skew)
        _upper(out, "frequency", "steady_state", worst.r, nodes, worst.skew, bound * (1 + LIMIT_REL_SLACK))
    else:
        logger.debug("borne établie infinie (α′ ≥ 1 ou β ≥ 1), non vérifiée")


# ── Agrégation ──────────────────────────────────────────────
def evaluate(run: "RunRecord", traces: list[RoundTrace]) -> list[Violation]:
    """Vérifie chaque ronde et chaque cycle ; remplit `trace.violations`.

    En mode strict, la première violation d'exécution lève ModelViolationError.
    """
    checks = run.scenario.checks
    violations: list[Violation] = []
    for idx, trace in enumerate(traces):
        nxt = traces[idx + 1] if idx + 1 < len(traces) else None
        found = assert_round_invariants(run, trace, checks, nxt)
        trace.violations = found
        violations.extend(found)
        if checks.strict:
            for vio in found:
                if vio.family == "execution":
                    raise ModelViolationError(
                        f"{vio.tag} : nœud(s) {vio.nodes} en ronde {vio.round}",
                        node=vio.nodes[0] if vio.nodes else None, round_index=vio.round,
                    )
    if checks.frequency and run.is_freq:
        _steady_frequency(run, traces, violations)
    if checks.stabilization and run.stab is not None:
        violations.extend(assert_cycle_invariants(run, traces))
    if run.diagnostics.get("horizon_exceeded"):
        violations.append(Violation(
            family="execution", tag="incomplete_run", measured=float(len(traces)),
            bound=float(run.target - 1),
        ))
    return violations


def verdict(violations: list[Violation]) -> Verdict:
    """Réussite si aucune violation « fail » hors diagnostic."""
    fails: Counter = Counter()
    marginal: Counter = Counter()
    firsts: list[Violation] = []
    for vio in violations:
        if vio.severity == "marginal":
            marginal[f"{vio.family}.{vio.tag}"] += 1
            continue
        if vio.family == DIAGNOSTIC:
            marginal[f"{vio.family}.{vio.tag}"] += 1
            continue
        fails[f"{vio.family}.{vio.tag}"] += 1
        if len(firsts) < FIRST_VIOLATIONS:
            firsts.append(vio)
    return Verdict(
        passed=not fails,
        violation_counts=dict(sorted(fails.items())),
        marginal_counts=dict(sorted(marginal.items())),
        first_violations=firsts,
    )
