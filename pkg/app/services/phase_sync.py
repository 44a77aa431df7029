"""Synchronisation de phase : protocole de ronde par nœud et solveur de la condition 1.

Un nœud attend τ₁ après le début de sa ronde, diffuse une impulsion, écoute
jusqu'à τ₁+τ₂ puis applique une étape d'accord approché sur les écarts de phase
mesurés. La ronde suivante démarre à l'heure locale H(t(r−1)) + T(r) − Δ(r).

Le nœud est un réducteur déterministe `(état, événement) → (état′, actions)` ;
le moteur de simulation exécute les actions (minuteries, diffusions).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Optional, Union

from app.config import SCHEDULE_CONVERGENCE, SCHEDULE_MAX_ROUNDS
from app.errors import InfeasibleError, InsufficientDataError
from app.models import (
    ConditionReport,
    InequalityResult,
    ParamOverrides,
    PhaseParams,
    SystemParams,
)
from app.services.approx_agreement import ValueMultiset, select_midpoint
from app.utils.helpers import within

logger = logging.getLogger(__name__)


# ── Constantes de convergence ───────────────────────────────
def beta_phase(theta: float) -> float:
    """β = (2θ²+5θ−5)/(2(θ+1)), coefficient de la récurrence d'enveloppe."""
    return (2 * theta**2 + 5 * theta - 5) / (2 * (theta + 1))


def alpha_phase(theta: float) -> float:
    """α = (6θ²+5θ−9)/(2(θ+1)(2−θ)) ; la condition 1 est soluble ssi α < 1."""
    if theta >= 2:
        raise InfeasibleError("alpha", None, f"θ={theta} ≥ 2, division par 2−θ")
    return (6 * theta**2 + 5 * theta - 9) / (2 * (theta + 1) * (2 - theta))


def measurement_constant(theta: float, d: float, u: float, self_estimate: bool = False) -> float:
    if self_estimate:
        return (3 * theta - 1) * (u / 2 + (theta - 1) * d / (theta * (theta + 1)))
    return (3 * theta - 1) * u


def steady_state_bound(theta: float, d: float, u: float, self_estimate: bool = False) -> float:
    """Limite de e(r) pour le calendrier à égalité : (K + (θ−1)(d+U))/((2−θ)(1−α))."""
    alpha = alpha_phase(theta)
    if alpha >= 1:
        raise InfeasibleError("alpha", alpha)
    k = measurement_constant(theta, d, u, self_estimate)
    return (k + (theta - 1) * (d + u)) / ((2 - theta) * (1 - alpha))


# ── Solveur de la condition 1 ───────────────────────────────
def solve_condition1(
    params: SystemParams,
    *,
    schedule: Literal["per_round", "constant"] = "per_round",
    self_estimate: bool = False,
    overrides: Optional[ParamOverrides] = None,
) -> PhaseParams:
    """Calendrier minimal satisfaisant toutes les inégalités à l'égalité.

    Avec des surcharges τ₁/τ₂/T, le calendrier devient constant et les valeurs
    non fournies reprennent le minimum constant ; `check_condition1` dira si
    l'ensemble reste faisable.
    """
    theta, d, u, big_f = params.theta, params.d, params.u, params.big_f
    alpha = alpha_phase(theta)
    if alpha >= 1:
        raise InfeasibleError("alpha", alpha, f"θ={theta}")
    beta = beta_phase(theta)
    self_estimate = self_estimate or bool(overrides and overrides.self_estimate)
    k = measurement_constant(theta, d, u, self_estimate)
    const = (k + (theta - 1) * (d + u)) / (2 - theta)
    e_limit = const / (1 - alpha)

    has_override = overrides is not None and any(
        v is not None for v in (overrides.tau1, overrides.tau2, overrides.big_t)
    )
    if schedule == "constant" or has_override:
        e_max = max(big_f / (2 - theta), e_limit)
        tau1 = theta * e_max
        tau2 = theta * (e_max + d)
        big_t = theta * (3 * e_max + d + u)
        if overrides is not None:
            tau1 = overrides.tau1 if overrides.tau1 is not None else tau1
            tau2 = overrides.tau2 if overrides.tau2 is not None else tau2
            big_t = overrides.big_t if overrides.big_t is not None else big_t
        limit = (k + (1 - 1 / theta) * big_t) / (1 - beta)
        result = PhaseParams(
            theta=theta, d=d, u=u, big_f=big_f, schedule="constant",
            tau1=[tau1], tau2=[tau2], big_t=[big_t],
            alpha=alpha, beta=beta, e_limit=limit, self_estimate=self_estimate,
        )
        logger.info("Condition 1 (constante) : T=%.6g τ₁=%.6g τ₂=%.6g E=%.6g", big_t, tau1, tau2, limit)
        return result

    e = big_f / (2 - theta)
    tau1s: list[float] = []
    tau2s: list[float] = []
    big_ts: list[float] = []
    for _ in range(SCHEDULE_MAX_ROUNDS):
        tau1s.append(theta * e)
        tau2s.append(theta * (e + d))
        big_ts.append(theta * (3 * e + d + u))
        if abs(e - e_limit) <= SCHEDULE_CONVERGENCE * max(e_limit, 1e-300):
            break
        e = alpha * e + const
    result = PhaseParams(
        theta=theta, d=d, u=u, big_f=big_f, schedule="per_round",
        tau1=tau1s, tau2=tau2s, big_t=big_ts,
        alpha=alpha, beta=beta, e_limit=e_limit, self_estimate=self_estimate,
    )
    logger.info(
        "Condition 1 : α=%.6g, %d rondes calculées, E=%.6g", alpha, len(tau1s), e_limit
    )
    return result


def check_condition1(p: PhaseParams, s: SystemParams, horizon: int) -> ConditionReport:
    """Évalue les trois inégalités ronde par ronde sur `horizon` rondes."""
    theta, d, u = s.theta, s.d, s.u
    envelope = p.e_schedule(horizon)
    results: list[InequalityResult] = []
    for r, e in enumerate(envelope, start=1):
        tau1, tau2, big_t = p.tau1_at(r), p.tau2_at(r), p.big_t_at(r)
        checks = (
            ("tau1", theta * e, tau1),
            ("tau2", theta * (e + d), tau2),
            ("T", tau1 + tau2 + theta * (e + u), big_t),
        )
        for name, lhs, rhs in checks:
            results.append(InequalityResult(name=name, round=r, lhs=lhs, rhs=rhs, ok=within(lhs, rhs)))
    return ConditionReport(condition="condition1", results=results, e_schedule=envelope)


# ── Bornes d'analyse ────────────────────────────────────────
def measurement_error_bound(s: SystemParams, skew: float) -> float:
    """θU + ((θ−1)/(θ+1))‖p‖ : erreur d'une mesure d'écart de phase."""
    th = s.theta
    return th * s.u + (th - 1) / (th + 1) * skew


def self_estimate_error_bound(s: SystemParams, skew: float) -> float:
    """θU/2 + ((θ−1)/(θ+1))(‖p‖+d) : variante sans message à soi-même."""
    th = s.theta
    return th * s.u / 2 + (th - 1) / (th + 1) * (skew + s.d)


def step_bound(s: SystemParams, skew: float, self_estimate: bool = False) -> float:
    """Majorant de |Δ_v(r)|."""
    if self_estimate:
        return skew + self_estimate_error_bound(s, skew)
    return s.theta * (skew + s.u)


def step_spread_bound(s: SystemParams, skew: float, self_estimate: bool = False) -> float:
    """Diamètre des cibles p_v − Δ_v après une étape : ‖p‖/2 + 2δ."""
    delta = self_estimate_error_bound(s, skew) if self_estimate else measurement_error_bound(s, skew)
    return skew / 2 + 2 * delta


# ── Protocole de nœud ───────────────────────────────────────
@dataclass(frozen=True)
class Arrival:
    """Première réception d'un émetteur dans une fenêtre d'écoute."""

    local: float
    ref: Optional[tuple] = None


@dataclass(frozen=True)
class TimerFired:
    tag: str
    local: float
    epoch: int


@dataclass(frozen=True)
class PulseReceived:
    sender: int
    local: float
    ref: Optional[tuple] = None


Event = Union[TimerFired, PulseReceived]


@dataclass(frozen=True)
class SetTimer:
    tag: str
    local: float
    epoch: int


@dataclass(frozen=True)
class Broadcast:
    kind: int = 1
    include_self: bool = True


@dataclass(frozen=True)
class RoundStarted:
    round: int
    local: float


@dataclass
class RoundComputation:
    """Ce qu'un nœud a mesuré et décidé à la fermeture de ses fenêtres."""

    node: int
    round: int
    start_local: float
    pulse_local: Optional[float]
    close_local: float
    end_local: float
    delta: float
    estimates: dict[int, float]
    arrivals: dict[int, Arrival]
    fallback: bool = False
    late: bool = False
    # variante fréquentielle
    pulse2_local: Optional[float] = None
    arrivals2: dict[int, Arrival] = field(default_factory=dict)
    rate_estimates: dict[int, float] = field(default_factory=dict)
    xi: Optional[float] = None
    mu_prev: Optional[float] = None
    mu: Optional[float] = None
    mu_hat: Optional[float] = None
    mu_next: Optional[float] = None
    clamped: bool = False
    xi_fallback: bool = False


@dataclass(frozen=True)
class RoundComputed:
    record: RoundComputation


Action = Union[SetTimer, Broadcast, RoundStarted, RoundComputed]

Mode = Literal[
    "waiting_init", "pre_pulse", "listening", "pre_pulse2", "listening2",
    "waiting_round_end", "halted",
]


@dataclass
class PhaseNodeState:
    node: int
    n: int
    f: int
    round: int = 0
    round_start_local: float = 0.0
    received: dict[int, Arrival] = field(default_factory=dict)
    delta: Optional[float] = None
    mode: Mode = "waiting_init"
    epoch: int = 0
    pulse_local: Optional[float] = None
    dropped: int = 0
    fallbacks: int = 0


def initial_state(node: int, n: int, f: int) -> PhaseNodeState:
    return PhaseNodeState(node=node, n=n, f=f)


def start_actions(state: PhaseNodeState, params: PhaseParams) -> list[Action]:
    """Attente de H(t(0)) = F."""
    return [SetTimer("start", params.big_f, state.epoch)]


def begin_round(
    state: PhaseNodeState, params: PhaseParams, local: float, round_index: Optional[int] = None
) -> tuple[PhaseNodeState, list[Action]]:
    r = state.round + 1 if round_index is None else round_index
    state = replace(
        state, round=r, round_start_local=local, received={}, delta=None,
        mode="pre_pulse", pulse_local=None,
    )
    return state, [RoundStarted(r, local), SetTimer("pulse", local + params.tau1_at(r), state.epoch)]


def on_event(
    state: PhaseNodeState, params: PhaseParams, event: Event
) -> tuple[PhaseNodeState, list[Action]]:
    if isinstance(event, PulseReceived):
        if state.mode not in ("pre_pulse", "listening"):
            return replace(state, dropped=state.dropped + 1), []
        if event.sender in state.received:
            # seul le premier message d'un émetteur compte
            return replace(state, dropped=state.dropped + 1), []
        received = dict(state.received)
        received[event.sender] = Arrival(event.local, event.ref)
        return replace(state, received=received), []

    if event.epoch != state.epoch:
        return state, []
    if event.tag in ("start", "round_end"):
        return begin_round(state, params, event.local)
    if event.tag == "pulse":
        r = state.round
        close = state.round_start_local + params.tau1_at(r) + params.tau2_at(r)
        state = replace(state, mode="listening", pulse_local=event.local)
        return state, [
            Broadcast(1, include_self=not params.self_estimate),
            SetTimer("window_close", close, state.epoch),
        ]
    if event.tag == "window_close":
        return _close_window(state, params, event.local)
    logger.debug("minuterie inconnue ignorée: %s", event.tag)
    return state, []


def phase_estimates(
    node: int,
    received: dict[int, Arrival],
    pulse_local: Optional[float],
    theta: float,
    d: float,
    u: float,
    self_estimate: bool,
) -> dict[int, float]:
    """Estimations finies de p_v − p_w ; un émetteur absent n'a pas d'entrée."""
    scale = 2.0 / (theta + 1)
    estimates: dict[int, float] = {}
    if self_estimate:
        if pulse_local is None:
            return estimates
        for w, arr in received.items():
            if w == node:
                continue
            estimates[w] = (d - u / 2) - scale * (arr.local - pulse_local)
        estimates[node] = 0.0
        return estimates
    own = received.get(node)
    if own is None:
        return estimates
    for w, arr in received.items():
        estimates[w] = scale * (own.local - arr.local)
    return estimates


def midpoint_or_zero(n: int, f: int, estimates: dict[int, float], what: str, node: int) -> tuple[float, bool]:
    try:
        return select_midpoint(ValueMultiset.from_received(n, f, estimates)), False
    except InsufficientDataError as exc:
        logger.warning("⚠️ nœud %d : %s, %s := 0", node, exc, what)
        return 0.0, True


def _close_window(
    state: PhaseNodeState, params: PhaseParams, local: float
) -> tuple[PhaseNodeState, list[Action]]:
    r = state.round
    estimates = phase_estimates(
        state.node, state.received, state.pulse_local,
        params.theta, params.d, params.u, params.self_estimate,
    )
    delta, fallback = midpoint_or_zero(state.n, state.f, estimates, "Δ", state.node)
    end = state.round_start_local + params.big_t_at(r) - delta
    late = end < local
    if late:
        logger.warning("⚠️ nœud %d ronde %d : fin de ronde %.9g déjà passée (%.9g)", state.node, r, end, local)
    record = RoundComputation(
        node=state.node, round=r, start_local=state.round_start_local,
        pulse_local=state.pulse_local, close_local=local, end_local=end,
        delta=delta, estimates=estimates, arrivals=dict(state.received),
        fallback=fallback, late=late,
    )
    state = replace(
        state, delta=delta, mode="waiting_round_end",
        fallbacks=state.fallbacks + int(fallback),
    )
    return state, [RoundComputed(record), SetTimer("round_end", max(end, local), state.epoch)]


def halt(state: PhaseNodeState) -> PhaseNodeState:
    """Invalide toutes les minuteries en cours et vide les tampons."""
    return replace(state, epoch=state.epoch + 1, mode="halted", received={}, delta=None, pulse_local=None)


def restart(state: PhaseNodeState, params: PhaseParams, local: float) -> tuple[PhaseNodeState, list[Action]]:
    """Reprise en ronde 1 avec H(t(0)) = heure courante."""
    return begin_round(state, params, local, round_index=1)


def next_pulse_local(state: PhaseNodeState, params: PhaseParams) -> Optional[float]:
    """Heure locale de la prochaine impulsion si la ronde qui la porte a commencé."""
    if state.mode == "pre_pulse":
        return state.round_start_local + params.tau1_at(state.round)
    return None


# ── Couche de synchronisation ───────────────────────────────
@dataclass(frozen=True)
class SyncLayer:
    """Interface commune aux protocoles de phase et de fréquence.

    Le moteur et le stabilisateur ne manipulent un nœud qu'à travers elle.
    """

    name: str
    initial_state: Callable[[int, int, int, object], object]
    start_actions: Callable[[object, object], list]
    on_event: Callable[[object, object, Event], tuple]
    halt: Callable[[object], object]
    restart: Callable[[object, object, float], tuple]
    next_pulse_local: Callable[[object, object], Optional[float]]


PHASE_LAYER = SyncLayer(
    name="phase",
    initial_state=lambda node, n, f, params: initial_state(node, n, f),
    start_actions=start_actions,
    on_event=on_event,
    halt=halt,
    restart=restart,
    next_pulse_local=next_pulse_local,
)
