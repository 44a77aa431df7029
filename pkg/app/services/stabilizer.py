"""Couche d'auto-stabilisation au-dessus des protocoles de phase ou de fréquence.

Les nœuds comptent leurs impulsions modulo M. À chaque battement fourni par
l'oracle, un nœud vérifie que son compteur est nul et que sa prochaine
impulsion tombera dans la fenêtre locale [R⁻, R⁺] ; sinon il se réinitialise.
Toutes les M impulsions, un signal NEXT est émis pour caler le battement
suivant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Optional, Union

import numpy as np

from app.config import (
    ORACLE_CHAOS_BEATS,
    ORACLE_STABILIZATION_FACTOR,
    STAB_MAX_M,
)
from app.errors import InfeasibleError
from app.models import (
    ConditionReport,
    FreqParams,
    InequalityResult,
    OracleConfig,
    ParamOverrides,
    PhaseParams,
    StabParams,
    SystemParams,
)
from app.services.freq_sync import (
    FreqNodeState,
    _windows,
    alpha_bar,
    beta_bar,
    minimal_epsilon,
)
from app.services.phase_sync import (
    Arrival,
    Broadcast,
    Event,
    PhaseNodeState,
    RoundStarted,
    SetTimer,
    SyncLayer,
    TimerFired,
    alpha_phase,
    beta_phase,
    measurement_constant,
)
from app.utils.helpers import within

logger = logging.getLogger(__name__)

Variant = Literal["phase", "freq"]
SyncParams = Union[PhaseParams, FreqParams]

NEXT_EPOCH = -1  # minuteries NEXT : jamais invalidées par une réinitialisation


# ── Condition 3 ─────────────────────────────────────────────
@dataclass(frozen=True)
class _Affine:
    """slope·T + intercept."""

    slope: float
    intercept: float

    def __call__(self, t: float) -> float:
        return self.slope * t + self.intercept


@dataclass(frozen=True)
class _Constants:
    theta_star: float
    beta: float
    k: float
    d: float
    u: float
    p_skew: float
    sync: _Affine  # T ≥ sync.slope·e(1) + sync.intercept

    @property
    def c(self) -> float:
        return 1 - 1 / self.theta_star

    @property
    def limit(self) -> _Affine:
        """L(T) = ((1−1/θ*)T + K)/(1−β*), limite de l'enveloppe."""
        return _Affine(self.c / (1 - self.beta), self.k / (1 - self.beta))


def _constants(params: SystemParams, variant: Variant, p_skew: float, self_estimate: bool) -> _Constants:
    theta, d, u = params.theta, params.d, params.u
    ts = theta if variant == "phase" else theta**3
    if ts >= 2:
        raise InfeasibleError("alpha_stab", None, f"θ*={ts:.6g} ≥ 2")
    if variant == "phase":
        return _Constants(
            theta_star=ts, beta=beta_phase(ts), k=measurement_constant(theta, d, u, self_estimate),
            d=d, u=u, p_skew=p_skew, sync=_Affine(3 * ts, ts * (d + u)),
        )
    return _Constants(
        theta_star=ts, beta=beta_bar(ts), k=(3 * ts - 1) * u,
        d=d, u=u, p_skew=p_skew, sync=_Affine(ts * (6 - ts) / (2 - ts), 2 * ts * d / (2 - ts) + ts * u),
    )


def _e1_lines(cst: _Constants, kappa: float) -> Optional[list[_Affine]]:
    """Droites dont le maximum donne e(1) minimal en fonction de T.

    None si le poids de e(1) dans e(M) est trop fort (M trop petit).
    """
    ts, p, u = cst.theta_star, cst.p_skew, cst.u
    lim = cst.limit
    g = ts + 1 + 2 / ts
    denom = 1 - g * kappa
    if denom <= 0:
        return None
    skew_line = _Affine(
        ((1 - 1 / ts**2) + g * (1 - kappa) * lim.slope) / denom,
        ((1 + 1 / ts) * p + (ts + 1 / ts) * u + g * (1 - kappa) * lim.intercept) / denom,
    )
    return [lim, skew_line]


def _t_constraints(cst: _Constants, kappa: float, lines: list[_Affine]) -> list[_Affine]:
    """Contraintes T ≥ m·T + q, une par droite et par inégalité sur T."""
    ts, p, u, d = cst.theta_star, cst.p_skew, cst.u, cst.d
    lim = cst.limit
    out: list[_Affine] = []
    for line in lines:
        out.append(_Affine(cst.sync.slope * line.slope, cst.sync.slope * line.intercept + cst.sync.intercept))
        # pas d'impulsion parasite après réinitialisation (R⁻ à l'égalité)
        w = ts * (ts + 2)
        out.append(_Affine(
            ts**2 * line.slope + w * (kappa * line.slope + (1 - kappa) * lim.slope),
            ts**2 * line.intercept + w * (kappa * line.intercept + (1 - kappa) * lim.intercept)
            + ts * (u + (1 + ts) * p + ts * d),
        ))
    return out


def alpha_stab(params: SystemParams, variant: Variant = "phase", p_skew: Optional[float] = None) -> float:
    """Plus grande pente des contraintes sur T quand M → ∞ ; faisable ssi < 1."""
    cst = _constants(params, variant, params.d if p_skew is None else p_skew, False)
    lines = _e1_lines(cst, 0.0)
    return max(con.slope for con in _t_constraints(cst, 0.0, lines))


def alpha_stab_closed_form(theta: float, variant: Variant = "phase") -> float:
    """Coefficient en forme close de la littérature, donné à titre indicatif."""
    if variant == "phase":
        ts, lead = theta, (2 * theta**2 + theta) / (2 - theta)
        beta = beta_phase(ts)
        second = (2 - ts) * (1 - 1 / ts) / (1 - beta)
    else:
        ts = theta**3
        lead = (4 * ts**2 + 5 * ts) / (2 - ts)
        beta = beta_bar(ts)
        second = 0.0
    return lead * max(1 - 1 / ts**2 + 4 * (ts - 1) / (1 - beta), second)


def _sync_params(
    params: SystemParams, variant: Variant, cst: _Constants, e1: float, big_t: float,
    self_estimate: bool, overrides: Optional[ParamOverrides],
) -> SyncParams:
    ts = cst.theta_star
    e_limit = cst.limit(big_t)
    if variant == "phase":
        return PhaseParams(
            theta=params.theta, d=params.d, u=params.u, big_f=(2 - ts) * e1,
            schedule="constant", tau1=[ts * e1], tau2=[ts * (e1 + params.d)], big_t=[big_t],
            alpha=alpha_phase(params.theta), beta=cst.beta, e_limit=e_limit,
            self_estimate=self_estimate,
        )
    tau1, tau2, tau3, tau4 = _windows(ts, e1, params.d)
    epsilon = minimal_epsilon(params.theta, params.u, params.nu, tau2 + tau3, big_t)
    if overrides is not None and overrides.epsilon is not None:
        epsilon = overrides.epsilon
    return FreqParams(
        theta=params.theta, d=params.d, u=params.u, nu=params.nu, big_f=(2 - ts) * e1,
        tau1=tau1, tau2=tau2, tau3=tau3, tau4=tau4, big_t=big_t, epsilon=epsilon,
        theta_bar=ts, alpha_bar=alpha_bar(params.theta), beta_bar=cst.beta,
        e1=e1, e_limit=e_limit,
    )


def _beat_windows(
    cst: _Constants, m: int, e1: float, em: float, big_t: float, tau1: float, d_f: float
) -> tuple[StabParams, float, float]:
    """Construit R±, B₁..B₃ ; renvoie aussi (B₁+B₂, borne de B_2)."""
    ts, p, u, d = cst.theta_star, cst.p_skew, cst.u, cst.d
    r_plus = big_t + ts * (em + u) - tau1
    r_minus = big_t / ts - ((ts + 2) * em + u + p)
    b1 = max(p + ts * em, p + d)
    b12 = max(b1, p + r_plus + big_t + ts * (e1 + u))
    b2_cap = em + (m - 1) * (big_t / ts - tau1) + r_minus / ts
    b3_lhs = ts * em + (m - 1) * (big_t + ts * tau1) + p + r_plus + tau1
    b3 = max(b3_lhs - b12, b12)
    stab = StabParams(
        m=m, r_minus=r_minus, r_plus=r_plus, p_skew=p, b1=b1, b2=b12 - b1, b3=b3,
        d_f=d_f, theta_star=ts, e_m=em,
    )
    return stab, b12, b2_cap


def solve_condition3(
    params: SystemParams,
    variant: Variant = "phase",
    overrides: Optional[ParamOverrides] = None,
) -> tuple[SyncParams, StabParams]:
    """Plus petit M faisable puis T₀ minimal, toutes inégalités revérifiées."""
    overrides = overrides or ParamOverrides()
    p_skew = overrides.p_skew if overrides.p_skew is not None else params.d
    d_f = overrides.d_f if overrides.d_f is not None else params.d
    self_estimate = variant == "phase" and overrides.self_estimate
    cst = _constants(params, variant, p_skew, self_estimate)

    if variant == "freq":
        ab = alpha_bar(params.theta)
        if ab >= 1:
            raise InfeasibleError("alpha_bar", ab, f"θ={params.theta}")
    threshold = max(con.slope for con in _t_constraints(cst, 0.0, _e1_lines(cst, 0.0)))
    if threshold >= 1:
        raise InfeasibleError(
            "alpha_stab", threshold,
            f"forme close {alpha_stab_closed_form(params.theta, variant):.6g}",
        )

    candidates = [overrides.m] if overrides.m is not None else range(2, STAB_MAX_M + 1)
    last_failure = ("B_2", None)
    for m in candidates:
        kappa = cst.beta ** (m - 1)
        lines = _e1_lines(cst, kappa)
        if lines is None:
            last_failure = ("initial_skew", float(m))
            continue
        cons = _t_constraints(cst, kappa, lines)
        if max(con.slope for con in cons) >= 1:
            last_failure = ("alpha_stab", max(con.slope for con in cons))
            continue
        t0 = max(con.intercept / (1 - con.slope) for con in cons)
        big_t = overrides.big_t if overrides.big_t is not None else t0
        if big_t < t0 * (1 - 1e-12):
            last_failure = ("T0", big_t)
            continue
        e1 = max(line(big_t) for line in lines)
        em = kappa * e1 + (1 - kappa) * cst.limit(big_t)
        tau1 = cst.theta_star * e1
        stab, b12, b2_cap = _beat_windows(cst, m, e1, em, big_t, tau1, d_f)
        if not within(b12, b2_cap):
            last_failure = ("B_2", b12 - b2_cap)
            continue
        sync = _sync_params(params, variant, cst, e1, big_t, self_estimate, overrides)
        report = check_condition3(sync, stab, params)
        if not report.feasible:
            bad = report.violations[0]
            last_failure = (bad.name, bad.lhs - bad.rhs)
            continue
        logger.info(
            "Condition 3 (%s) : M=%d T=%.6g e(1)=%.6g e(M)=%.6g R⁻=%.6g R⁺=%.6g",
            variant, m, big_t, e1, em, stab.r_minus, stab.r_plus,
        )
        return sync, stab
    name, value = last_failure
    raise InfeasibleError(name, value, f"aucun M ≤ {STAB_MAX_M} ne convient" if overrides.m is None else f"M={overrides.m}")


def _sync_scalars(sync: SyncParams) -> tuple[float, float, float, float]:
    if isinstance(sync, PhaseParams):
        return sync.tau1_at(1), sync.tau2_at(1), sync.big_t_at(1), sync.e1
    return sync.tau1, sync.tau2, sync.big_t, sync.e1


def check_condition3(sync: SyncParams, stab: StabParams, s: SystemParams) -> ConditionReport:
    """Les dix inégalités de la couche de stabilisation, plus B₁ ≥ P + d."""
    ts, p, m = stab.theta_star, stab.p_skew, stab.m
    tau1, tau2, big_t, e1 = _sync_scalars(sync)
    schedule = sync.e_schedule(m)
    em = schedule[-1]
    rm, rp = stab.r_minus, stab.r_plus
    b1, b12, b123 = stab.b1, stab.b1 + stab.b2, stab.b1 + stab.b2 + stab.b3
    d, u = s.d, s.u
    checks = [
        ("initial_skew", p + rp + tau1 - rm / ts, e1),
        ("listen_on_time", p + rp, rm / ts),
        ("receive_on_time", p + rp + tau1 + d, (rm + tau2) / ts),
        ("no_early", p + d, (rm - tau1) / ts),
        ("beat_trivial", p + rp + big_t + ts * (e1 + u), b12),
        ("B_1", p + ts * em, b1),
        ("B_2", b12, em + (m - 1) * (big_t / ts - tau1) + rm / ts),
        ("B_3", ts * em + (m - 1) * (big_t + ts * tau1) + p + rp + tau1, b123),
        ("no_early_round", rm, big_t / ts - ((ts + 2) * em + u + p)),
        ("no_late_round", big_t + ts * (em + u) - tau1, rp),
        ("beats_B1", p + d, b1),
    ]
    results = [
        InequalityResult(name=name, lhs=lhs, rhs=rhs, ok=within(lhs, rhs)) for name, lhs, rhs in checks
    ]
    return ConditionReport(condition="condition3", results=results, e_schedule=schedule)


# ── Protocole d'interface ───────────────────────────────────
@dataclass(frozen=True)
class BeatDelivered:
    local: float
    cycle: int = 0


@dataclass(frozen=True)
class EmitNext:
    pass


@dataclass(frozen=True)
class ResetCalled:
    wait: float
    reason: str


@dataclass
class StabNodeState:
    node: int
    sync: Union[PhaseNodeState, FreqNodeState]
    i: int = 0
    epoch: int = 0
    resetting: bool = False
    guard_beat_local: Optional[float] = None
    guard_early_until: Optional[float] = None
    late_armed: bool = False
    round_started: bool = False
    resets: int = 0
    suppressed: int = 0


def on_pulse(state: StabNodeState, stab: StabParams, local: float) -> tuple[StabNodeState, list]:
    """i := i+1 mod M ; au passage à 0, NEXT après θ*e(M) de temps local."""
    i = (state.i + 1) % stab.m
    state = replace(state, i=i)
    if i == 0:
        return state, [SetTimer("stab:next", local + stab.theta_star * stab.e_m, NEXT_EPOCH)]
    return state, []


def reset(
    state: StabNodeState, layer: SyncLayer, wait: float, local: float, reason: str
) -> tuple[StabNodeState, list]:
    """Arrête l'instance de synchronisation et programme sa reprise après `wait`."""
    wait = max(wait, 0.0)
    state = replace(
        state, sync=layer.halt(state.sync), epoch=state.epoch + 1, resetting=True,
        guard_beat_local=None, guard_early_until=None, late_armed=False,
        resets=state.resets + 1,
    )
    logger.debug("nœud %d : reset(%.6g) [%s]", state.node, wait, reason)
    return state, [ResetCalled(wait, reason), SetTimer("stab:reset", local + wait, state.epoch)]


def on_beat(
    state: StabNodeState, layer: SyncLayer, params: SyncParams, stab: StabParams, local: float
) -> tuple[StabNodeState, list]:
    if state.resetting:
        return reset(state, layer, stab.r_plus, local, "beat_during_reset")
    if state.i != 0:
        return reset(state, layer, stab.r_plus, local, "counter")
    # la vérification « impulsion trop tôt » se fait à l'instant de l'impulsion
    state = replace(state, guard_beat_local=local, guard_early_until=local + stab.r_minus)
    if layer.next_pulse_local(state.sync, params) is not None:
        return replace(state, late_armed=False), []
    state = replace(state, late_armed=True, round_started=False)
    return state, [SetTimer("stab:late", local + stab.r_plus, state.epoch)]


def _forward(
    state: StabNodeState, layer: SyncLayer, stab: StabParams, actions: list, local: float
) -> tuple[StabNodeState, list]:
    out: list = []
    for act in actions:
        if isinstance(act, Broadcast) and act.kind == 1:
            if state.guard_early_until is not None and local < state.guard_early_until:
                elapsed = local - state.guard_beat_local
                state = replace(state, suppressed=state.suppressed + 1)
                state, extra = reset(state, layer, stab.r_plus - elapsed, local, "early_pulse")
                out.extend(extra)
                return state, out
            state = replace(state, guard_early_until=None)
            state, extra = on_pulse(state, stab, local)
            out.append(act)
            out.extend(extra)
        elif isinstance(act, RoundStarted):
            state = replace(state, round_started=True)
            out.append(act)
        else:
            out.append(act)
    return state, out


def stab_on_event(
    state: StabNodeState,
    layer: SyncLayer,
    params: SyncParams,
    stab: StabParams,
    event: Union[Event, BeatDelivered],
) -> tuple[StabNodeState, list]:
    if isinstance(event, BeatDelivered):
        return on_beat(state, layer, params, stab, event.local)
    if isinstance(event, TimerFired) and event.tag.startswith("stab:"):
        if event.tag == "stab:next":
            return state, [EmitNext()]
        if event.epoch != state.epoch:
            return state, []
        if event.tag == "stab:reset" and state.resetting:
            sync, actions = layer.restart(state.sync, params, event.local)
            state = replace(state, sync=sync, i=0, resetting=False)
            return _forward(state, layer, stab, actions, event.local)
        if event.tag == "stab:late" and state.late_armed:
            state = replace(state, late_armed=False)
            if not state.round_started:
                return reset(state, layer, 0.0, event.local, "late_round")
        return state, []
    sync, actions = layer.on_event(state.sync, params, event)
    state = replace(state, sync=sync)
    return _forward(state, layer, stab, actions, event.local)


def initial_stab_state(
    layer: SyncLayer, params: SyncParams, node: int, n: int, f: int
) -> tuple[StabNodeState, list]:
    sync = layer.initial_state(node, n, f, params)
    return StabNodeState(node=node, sync=sync), layer.start_actions(sync, params)


# ── États initiaux arbitraires ──────────────────────────────
def _stale_buffer(
    rng: np.random.Generator, n: int, now: float, span: float
) -> dict[int, Arrival]:
    senders = rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)
    return {int(w): Arrival(now - float(rng.uniform(0.0, span))) for w in sorted(senders)}


def corrupt_state(
    layer: SyncLayer,
    params: SyncParams,
    stab: StabParams,
    node: int,
    n: int,
    f: int,
    now: float,
    rng: np.random.Generator,
) -> tuple[StabNodeState, list]:
    """État arbitraire mais cohérent : compteur, ronde en cours, minuteries, tampons.

    Toutes les minuteries rendues sont à une heure locale ≥ `now`.
    """
    tau1, tau2, big_t, e1 = _sync_scalars(params)
    is_freq = isinstance(params, FreqParams)
    modes = ["pre_pulse", "listening", "waiting_round_end", "halted", "resetting"]
    if is_freq:
        modes[2:2] = ["pre_pulse2", "listening2"]
    mode = str(rng.choice(modes))
    r = int(rng.integers(1, 2 * stab.m + 1))
    delta = float(rng.uniform(-e1, e1))
    stale = _stale_buffer(rng, n, now, big_t)
    actions: list = []

    if is_freq:
        lo, hi = 1.0, params.theta**2
        mus = [float(rng.uniform(lo, hi)) for _ in range(3)]
        base = layer.initial_state(node, n, f, params)
        sync = replace(base, mu_prev=mus[0], mu=mus[1], mu_next=mus[2])
        scale_first, scale = mus[0], mus[1]
        tau23 = params.tau23
        tau4 = params.tau4
    else:
        sync = layer.initial_state(node, n, f, params)
        scale_first = scale = 1.0
        tau23 = tau4 = 0.0

    w1 = tau1 / scale_first
    if mode == "pre_pulse":
        start = now - float(rng.uniform(0.0, w1))
        sync = replace(sync, round=r, round_start_local=start, mode="pre_pulse", received=stale)
        actions.append(SetTimer("pulse", start + w1, sync.epoch))
    elif mode == "listening":
        listen = tau2 / scale
        pulse = now - float(rng.uniform(0.0, listen))
        sync = replace(
            sync, round=r, round_start_local=pulse - w1, mode="listening",
            pulse_local=pulse, received=stale,
        )
        close = pulse + listen if is_freq else pulse - w1 + tau1 + tau2
        actions.append(SetTimer("window_close", max(close, now), sync.epoch))
    elif mode in ("pre_pulse2", "listening2"):
        pulse = now - float(rng.uniform(tau2 / scale, (tau23 + tau4) / scale))
        sync = replace(
            sync, round=r, round_start_local=pulse - w1, pulse_local=pulse,
            delta=delta, received=stale, received2={},
        )
        if pulse + tau23 / scale >= now:
            sync = replace(sync, mode="pre_pulse2")
            actions.append(SetTimer("pulse2", pulse + tau23 / scale, sync.epoch))
        else:
            sync = replace(sync, mode="listening2", pulse2_local=pulse + tau23 / scale)
            actions.append(SetTimer("window2_close", pulse + (tau23 + tau4) / scale, sync.epoch))
    elif mode == "waiting_round_end":
        sync = replace(
            sync, round=r, round_start_local=now - float(rng.uniform(0.0, big_t)),
            mode="waiting_round_end", delta=delta, received=stale,
        )
        actions.append(SetTimer("round_end", now + float(rng.uniform(0.0, big_t)), sync.epoch))
    else:
        sync = replace(sync, round=r, mode="halted", received=stale)

    state = StabNodeState(node=node, sync=sync, i=int(rng.integers(0, stab.m)))
    if mode == "resetting":
        state = replace(state, resetting=True)
        actions.append(SetTimer("stab:reset", now + float(rng.uniform(0.0, stab.r_plus)), state.epoch))
    if rng.random() < 0.5:
        actions.append(SetTimer("stab:next", now + float(rng.uniform(0.0, stab.theta_star * stab.e_m)), NEXT_EPOCH))
    return state, actions


# ── Oracle de battements ────────────────────────────────────
@dataclass
class BeatOracle:
    """Générateur de battements respectant le contrat de l'algorithme de battement.

    Avant `stabilization_delay`, des battements parasites peuvent être émis ;
    ensuite chaque cycle k suit les trois propriétés du contrat, la liberté
    restante étant exploitée selon `policy`.
    """

    policy: str
    stab: StabParams
    correct: tuple[int, ...]
    rng: np.random.Generator
    stabilization_delay: float
    chaos: bool = True
    chaos_beats: float = ORACLE_CHAOS_BEATS
    started: bool = False
    cycle: int = 0
    bmin: Optional[float] = None
    deadline: Optional[float] = None
    decided: bool = False
    next_times: dict[int, float] = field(default_factory=dict)
    history: list[dict[int, float]] = field(default_factory=list)
    chaos_log: list[tuple[int, float]] = field(default_factory=list)

    @property
    def window_open(self) -> float:
        return self.bmin + self.stab.b1

    @property
    def window_all(self) -> float:
        return self.bmin + self.stab.b1 + self.stab.b2


def make_oracle(
    config: OracleConfig, stab: StabParams, correct: list[int], rng: np.random.Generator
) -> BeatOracle:
    span = stab.b1 + stab.b2 + stab.b3
    delay = config.stabilization_delay
    if delay is None:
        delay = ORACLE_STABILIZATION_FACTOR * span
    beats = ORACLE_CHAOS_BEATS if config.chaos_beats is None else config.chaos_beats
    return BeatOracle(
        policy=config.policy, stab=stab, correct=tuple(sorted(correct)), rng=rng,
        stabilization_delay=delay, chaos=config.chaos, chaos_beats=beats,
    )


def _offsets(oracle: BeatOracle) -> dict[int, float]:
    p = oracle.stab.p_skew
    nodes = oracle.correct
    rng = oracle.rng
    if oracle.policy == "latest":
        return {v: p for v in nodes}
    if oracle.policy == "split_P":
        half = len(nodes) // 2
        return {v: (0.0 if idx < half else p) for idx, v in enumerate(nodes)}
    offsets = {v: float(rng.uniform(0.0, p)) for v in nodes}
    if oracle.policy == "earliest":
        offsets[nodes[int(rng.integers(0, len(nodes)))]] = 0.0
    return offsets


def _emit_cycle(oracle: BeatOracle, base: float, all_next: Optional[float]) -> list[tuple[int, float, int]]:
    beats = {v: base + off for v, off in _offsets(oracle).items()}
    low, high = min(beats.values()), max(beats.values())
    p = oracle.stab.p_skew
    assert high - low <= p * (1 + 1e-12) + 1e-15, "écart de battements > P"
    assert low >= base - 1e-15, "battement avant la fin de la fenêtre sans NEXT"
    if all_next is not None:
        assert high <= all_next + p * (1 + 1e-12) + 1e-15, "battement après t + P"
    oracle.cycle += 1
    oracle.bmin = low
    oracle.deadline = low + oracle.stab.b1 + oracle.stab.b2 + oracle.stab.b3
    oracle.decided = False
    oracle.next_times = {}
    oracle.history.append(beats)
    logger.debug("oracle : cycle %d, battements dans [%.9g, %.9g]", oracle.cycle, low, high)
    return [(v, t, oracle.cycle) for v, t in sorted(beats.items())]


def oracle_step(
    oracle: BeatOracle, now: float, next_signals: Mapping[int, float]
) -> tuple[list[tuple[int, float, int]], Optional[float]]:
    """Avance l'oracle ; renvoie les battements (nœud, instant, cycle) et le prochain réveil.

    L'oracle est modifié en place.
    """
    beats: list[tuple[int, float, int]] = []
    if not oracle.started:
        oracle.started = True
        if oracle.chaos:
            for v in oracle.correct:
                count = int(oracle.rng.poisson(oracle.chaos_beats))
                for t in sorted(oracle.rng.uniform(0.0, oracle.stabilization_delay, count)):
                    beats.append((v, float(t), 0))
                    oracle.chaos_log.append((v, float(t)))
        beats.extend(_emit_cycle(oracle, oracle.stabilization_delay, None))
        return beats, oracle.deadline

    if oracle.decided or oracle.bmin is None:
        return beats, None
    for v, t in sorted(next_signals.items(), key=lambda item: (item[1], item[0])):
        if v in oracle.correct and t >= oracle.window_open and v not in oracle.next_times:
            oracle.next_times[v] = t

    times = oracle.next_times
    if times and oracle.policy == "earliest":
        base = min(times.values())
        oracle.decided = True
        beats.extend(_emit_cycle(oracle, base, None))
    elif len(times) == len(oracle.correct) and min(times.values()) >= oracle.window_all and max(times.values()) <= oracle.deadline:
        base = max(times.values())
        oracle.decided = True
        beats.extend(_emit_cycle(oracle, base, base))
    elif now >= oracle.deadline:
        oracle.decided = True
        beats.extend(_emit_cycle(oracle, oracle.deadline, None))
    return beats, oracle.deadline
