"""Synchronisation de phase et de fréquence.

Deux impulsions par ronde : la première sert la correction de phase comme en
synchronisation de phase seule, l'écart local entre les deux impulsions d'un
émetteur donne une estimation de sa vitesse relative. Une seconde étape
d'accord approché fixe le multiplicateur μ de la ronde suivante, ramené de ε
vers la valeur nominale θ et borné à [1, θ²].

Toutes les attentes sont exprimées en temps local divisé par μ ; l'écart
logique entre deux premières impulsions vaut T − Δ.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

from app.config import SOFT_28U_FACTOR
from app.errors import InfeasibleError
from app.models import (
    ConditionReport,
    FreqParams,
    InequalityResult,
    ParamOverrides,
    SystemParams,
)
from app.services.phase_sync import (
    Action,
    Arrival,
    Broadcast,
    Event,
    PhaseNodeState,
    PulseReceived,
    RoundComputation,
    RoundComputed,
    RoundStarted,
    SetTimer,
    SyncLayer,
    midpoint_or_zero,
    phase_estimates,
)
from app.utils.helpers import within

logger = logging.getLogger(__name__)


# ── Constantes ──────────────────────────────────────────────
def beta_bar(theta_bar: float) -> float:
    return (2 * theta_bar**2 + 5 * theta_bar - 5) / (2 * (theta_bar + 1))


def alpha_bar(theta: float) -> float:
    """ᾱ = β̄ + (4θ̄+3)(θ̄−1) avec θ̄ = θ³."""
    tb = theta**3
    return beta_bar(tb) + (4 * tb + 3) * (tb - 1)


def alpha_prime(theta_bar: float) -> float:
    """Facteur de contraction de la phase une fois les fréquences accordées."""
    return (4 * theta_bar**2 + 5 * theta_bar - 7) / (2 * (theta_bar + 1))


def rate_beta(theta: float) -> float:
    return (2 * theta - 1) / 2


def minimal_epsilon(theta: float, u: float, nu: float, tau23: float, big_t: float) -> float:
    tb = theta**3
    return 2 * (
        (theta - 1) * (tb - 1)
        + 2 * tb * (1 - 1 / tb) ** 2
        + 2 * tb * u / tau23
        + 2 * (tb + 1) * nu * big_t
    )


def _windows(theta_bar: float, e1: float, d: float) -> tuple[float, float, float, float]:
    """τ₁..τ₄ minimaux pour une enveloppe initiale e(1)."""
    c = 1 - 1 / theta_bar
    tau1 = theta_bar * e1
    tau2 = theta_bar * (e1 + d)
    # τ₃ = θ̄(e(1) + c(τ₂+τ₃)) résolu en τ₃
    tau3 = theta_bar * (theta_bar * e1 + (theta_bar - 1) * d) / (2 - theta_bar)
    tau4 = theta_bar * (e1 + d + c * (tau2 + tau3))
    return tau1, tau2, tau3, tau4


# ── Solveur de la condition 2 ───────────────────────────────
def minimal_round_length(params: SystemParams) -> float:
    """T₀ : plus petite longueur de ronde admissible."""
    theta = params.theta
    tb = theta**3
    if tb >= 2:
        raise InfeasibleError("alpha_bar", alpha_bar(theta), f"θ̄={tb:.6g} ≥ 2")
    ab = alpha_bar(theta)
    if ab >= 1:
        raise InfeasibleError("alpha_bar", ab, f"θ={theta}")
    bb = beta_bar(tb)
    c = 1 - 1 / tb
    d, u = params.d, params.u
    # T ≥ a·e(1) + b pour chacune des deux branches de e(1)
    a = tb * (6 - tb) / (2 - tb)
    b = 2 * tb * d / (2 - tb) + tb * u
    fixed = a * params.big_f / (2 - tb) + b
    slope = a * c / (1 - bb)  # < 1 dès que ᾱ < 1
    intercept = a * (3 * tb - 1) * u / (1 - bb) + b
    return max(fixed, intercept / (1 - slope))


def solve_condition2(
    params: SystemParams,
    big_t: Optional[float] = None,
    *,
    overrides: Optional[ParamOverrides] = None,
) -> FreqParams:
    theta = params.theta
    tb = theta**3
    t0 = minimal_round_length(params)
    if big_t is None and overrides is not None:
        big_t = overrides.big_t
    if big_t is None:
        big_t = t0
    elif big_t < t0 * (1 - 1e-12):
        raise InfeasibleError("T0", big_t, f"T={big_t:.6g} < T₀={t0:.6g}")

    bb = beta_bar(tb)
    c = 1 - 1 / tb
    e_limit = (c * big_t + (3 * tb - 1) * params.u) / (1 - bb)
    e1 = max(params.big_f / (2 - tb), e_limit)
    tau1, tau2, tau3, tau4 = _windows(tb, e1, params.d)
    if overrides is not None:
        tau1 = overrides.tau1 if overrides.tau1 is not None else tau1
        tau2 = overrides.tau2 if overrides.tau2 is not None else tau2
        tau3 = overrides.tau3 if overrides.tau3 is not None else tau3
        tau4 = overrides.tau4 if overrides.tau4 is not None else tau4
    eps_min = minimal_epsilon(theta, params.u, params.nu, tau2 + tau3, big_t)
    epsilon = eps_min
    if overrides is not None and overrides.epsilon is not None:
        epsilon = overrides.epsilon

    result = FreqParams(
        theta=theta, d=params.d, u=params.u, nu=params.nu, big_f=params.big_f,
        tau1=tau1, tau2=tau2, tau3=tau3, tau4=tau4, big_t=big_t, epsilon=epsilon,
        theta_bar=tb, alpha_bar=alpha_bar(theta), beta_bar=bb,
        e1=max(params.big_f + c * tau1, e_limit), e_limit=e_limit,
    )
    logger.info(
        "Condition 2 : ᾱ=%.6g T=%.6g (T₀=%.6g) ε=%.6g E=%.6g",
        result.alpha_bar, big_t, t0, epsilon, e_limit,
    )
    return result


def check_condition2(p: FreqParams, s: SystemParams, horizon: int = 1) -> ConditionReport:
    """Inégalités de la condition 2 (toutes portent sur e(1), l'enveloppe décroît)."""
    tb = p.theta_bar
    c = 1 - 1 / tb
    e1 = p.e1
    d, u = s.d, s.u
    checks = [
        ("alpha_bar", p.alpha_bar, 1.0),
        ("e1_limit", (c * p.big_t + (3 * tb - 1) * u) / (1 - p.beta_bar), e1),
        ("e1_anchor", p.big_f + c * p.tau1, e1),
        ("tau1", tb * e1, p.tau1),
        ("tau2", tb * (e1 + d), p.tau2),
        ("tau3", tb * (e1 + c * p.tau23), p.tau3),
        ("tau4", tb * (e1 + d + c * p.tau23), p.tau4),
        ("T", p.tau1 + p.tau2 + p.tau3 + p.tau4 + tb * (e1 + u), p.big_t),
        ("epsilon", minimal_epsilon(s.theta, u, s.nu, p.tau23, p.big_t), p.epsilon),
    ]
    results = []
    for name, lhs, rhs in checks:
        ok = lhs < rhs if name == "alpha_bar" else within(lhs, rhs)
        results.append(InequalityResult(name=name, round=1, lhs=lhs, rhs=rhs, ok=ok))
    return ConditionReport(condition="condition2", results=results, e_schedule=p.e_schedule(horizon))


# ── Estimation et mise à jour du multiplicateur ─────────────
def rate_estimate(mu: float, delta_wv: float, tau23: float) -> float:
    """1 − μΔ_wv/(τ₂+τ₃), estimation de ρ̄_w − ρ̄_v."""
    if not delta_wv > 0:
        raise ValueError(f"Δ_wv doit être > 0 (reçu {delta_wv})")
    return 1.0 - mu * delta_wv / tau23


def update_multiplier_detail(
    mu: float, xi: float, epsilon: float, theta: float
) -> tuple[float, float, bool]:
    """(μ̂, μ′, borne externe engagée)."""
    mu_hat = mu + 2 * xi / (theta + 1)
    if mu_hat <= theta:
        result = max(mu_hat + epsilon, 1.0)
    else:
        result = min(mu_hat - epsilon, theta**2)
    clamped = not (1.0 <= result <= theta**2)
    if clamped:
        result = min(max(result, 1.0), theta**2)
    return mu_hat, result, clamped


def update_multiplier(mu: float, xi: float, epsilon: float, theta: float) -> float:
    return update_multiplier_detail(mu, xi, epsilon, theta)[1]


# ── Bornes d'analyse ────────────────────────────────────────
def freq_estimate_error_bound(p: FreqParams) -> float:
    tb = p.theta_bar
    return tb * (1 - 1 / tb) ** 2 + tb * p.u / p.tau23 + (tb + 1) * p.nu * p.big_t


def stability_bound(p: FreqParams) -> float:
    """Écart maximal entre μh(t) et ρ̄ sur une ronde."""
    return p.nu * (p.big_t + p.tau2) / 2


def rate_recurrence_bound(p: FreqParams, spread: float) -> float:
    drift = 2 * p.nu * (p.big_t + p.tau2)
    return max(rate_beta(p.theta) * spread + 3 * p.theta * p.epsilon, spread - p.epsilon / 2) + drift


def rate_floor(p: FreqParams) -> float:
    """Limite supérieure de ‖ρ‖ en régime établi."""
    beta = rate_beta(p.theta)
    if beta >= 1:
        return float("inf")
    span = p.nu * (p.big_t + p.tau2)
    return (3 * p.theta * p.epsilon + 2 * span) / (1 - beta) + span


def second_pulse_skew_bound(p: FreqParams, skew: float) -> float:
    """‖q(r)‖ ≤ ‖p(r)‖ + (1 − 1/θ̄)(τ₂+τ₃)."""
    return skew + (1 - 1 / p.theta_bar) * p.tau23


def iteration_bound(p: FreqParams, skew: float, interval_spread: float) -> float:
    """‖p(r+1)‖ ≤ α′‖p(r)‖ + (4θ̄−2)U + ‖ρ(r)‖T."""
    tb = p.theta_bar
    return alpha_prime(tb) * skew + (4 * tb - 2) * p.u + interval_spread * p.big_t


def steady_state_bound_freq(p: FreqParams) -> float:
    """Erreur établie une fois les fréquences accordées (∞ si α′ ≥ 1 ou β ≥ 1)."""
    a = alpha_prime(p.theta_bar)
    beta = rate_beta(p.theta)
    if a >= 1 or beta >= 1:
        return float("inf")
    span = p.nu * (p.big_t + p.tau2)
    tb = p.theta_bar
    return ((4 * tb - 2) * p.u + span * p.big_t) / (1 - a) + (
        3 * p.theta * p.epsilon + 2 * span
    ) * p.big_t / ((1 - a) * (1 - beta))


def regime_28u(p: FreqParams, eps_min: Optional[float] = None) -> dict[str, float | bool]:
    """Hypothèses du régime « ≈ 28U » et borne approchée correspondante."""
    tb = p.theta_bar
    if eps_min is None:
        eps_min = minimal_epsilon(p.theta, p.u, p.nu, p.tau23, p.big_t)
    alpha_half = abs(alpha_prime(tb) - 0.5) <= 0.05
    eps_minimal = p.epsilon <= eps_min * (1 + 1e-9)
    long_round = p.tau3 >= 0.5 * p.big_t and p.tau2 <= 0.1 * p.big_t
    slow_drift = max((tb - 1) ** 2 * p.big_t, p.nu * p.big_t**2) <= 0.01 * p.u
    approx = (4 + 24 * p.big_t / p.tau23) * p.u + 72 * (tb - 1) ** 2 * p.big_t + 58 * p.nu * p.big_t**2
    return {
        "alpha_near_half": alpha_half,
        "epsilon_minimal": eps_minimal,
        "round_dominated_by_tau3": long_round,
        "drift_negligible": slow_drift,
        "applicable": alpha_half and eps_minimal and long_round and slow_drift,
        "approx_bound": approx,
        "soft_bound": 28 * p.u * SOFT_28U_FACTOR,
    }


# ── Protocole de nœud ───────────────────────────────────────
@dataclass
class FreqNodeState(PhaseNodeState):
    mu: float = 1.0
    mu_prev: float = 1.0
    mu_next: float = 1.0
    received2: dict[int, Arrival] = field(default_factory=dict)
    pulse2_local: Optional[float] = None
    estimates: dict[int, float] = field(default_factory=dict)
    fallback: bool = False
    clamps: int = 0


def initial_state_freq(node: int, n: int, f: int, params: FreqParams) -> FreqNodeState:
    th = params.theta
    return FreqNodeState(node=node, n=n, f=f, mu=th, mu_prev=th, mu_next=th)


def start_actions_freq(state: FreqNodeState, params: FreqParams) -> list[Action]:
    return [SetTimer("start", params.big_f, state.epoch)]


def begin_round_freq(
    state: FreqNodeState, params: FreqParams, local: float, round_index: Optional[int] = None
) -> tuple[FreqNodeState, list[Action]]:
    r = state.round + 1 if round_index is None else round_index
    state = replace(
        state, round=r, round_start_local=local, mode="pre_pulse",
        mu_prev=state.mu, mu=state.mu_next,
        received={}, received2={}, delta=None, pulse_local=None, pulse2_local=None,
        estimates={}, fallback=False,
    )
    pulse = local + params.tau1 / state.mu_prev
    return state, [RoundStarted(r, local), SetTimer("pulse", pulse, state.epoch)]


def on_event_freq(
    state: FreqNodeState, params: FreqParams, event: Event
) -> tuple[FreqNodeState, list[Action]]:
    if isinstance(event, PulseReceived):
        if state.mode in ("pre_pulse", "listening"):
            slot = "received"
        elif state.mode in ("pre_pulse2", "listening2"):
            slot = "received2"
        else:
            return replace(state, dropped=state.dropped + 1), []
        current: dict[int, Arrival] = getattr(state, slot)
        if event.sender in current:
            return replace(state, dropped=state.dropped + 1), []
        updated = dict(current)
        updated[event.sender] = Arrival(event.local, event.ref)
        return replace(state, **{slot: updated}), []

    if event.epoch != state.epoch:
        return state, []
    tag = event.tag
    if tag in ("start", "round_end"):
        return begin_round_freq(state, params, event.local)
    if tag == "pulse":
        state = replace(state, mode="listening", pulse_local=event.local)
        return state, [
            Broadcast(1),
            SetTimer("window_close", event.local + params.tau2 / state.mu, state.epoch),
        ]
    if tag == "window_close":
        estimates = phase_estimates(
            state.node, state.received, state.pulse_local,
            params.theta, params.d, params.u, False,
        )
        delta, fallback = midpoint_or_zero(state.n, state.f, estimates, "Δ", state.node)
        pulse2 = state.pulse_local + params.tau23 / state.mu
        state = replace(
            state, mode="pre_pulse2", delta=delta, estimates=estimates, fallback=fallback,
            fallbacks=state.fallbacks + int(fallback),
        )
        return state, [SetTimer("pulse2", pulse2, state.epoch)]
    if tag == "pulse2":
        close2 = state.pulse_local + (params.tau23 + params.tau4) / state.mu
        state = replace(state, mode="listening2", pulse2_local=event.local)
        return state, [Broadcast(2), SetTimer("window2_close", close2, state.epoch)]
    if tag == "window2_close":
        return _close_round(state, params, event.local)
    logger.debug("minuterie inconnue ignorée: %s", tag)
    return state, []


def rate_estimates(
    first: dict[int, Arrival], second: dict[int, Arrival], mu: float, tau23: float
) -> dict[int, float]:
    """Émetteurs dont les deux impulsions ont été reçues, dans l'ordre."""
    out: dict[int, float] = {}
    for w, arr in first.items():
        arr2 = second.get(w)
        if arr2 is None or not arr2.local > arr.local:
            continue
        out[w] = rate_estimate(mu, arr2.local - arr.local, tau23)
    return out


def _close_round(
    state: FreqNodeState, params: FreqParams, local: float
) -> tuple[FreqNodeState, list[Action]]:
    r = state.round
    rates = rate_estimates(state.received, state.received2, state.mu, params.tau23)
    xi, xi_fallback = midpoint_or_zero(state.n, state.f, rates, "ξ", state.node)
    mu_hat, mu_next, clamped = update_multiplier_detail(state.mu, xi, params.epsilon, params.theta)
    if clamped:
        logger.debug("nœud %d ronde %d : μ′ ramené dans [1, θ²]", state.node, r)
    delta = state.delta or 0.0
    end = state.pulse_local + (params.big_t - delta - params.tau1) / state.mu
    late = end < local
    if late:
        logger.warning("⚠️ nœud %d ronde %d : fin de ronde %.9g déjà passée (%.9g)", state.node, r, end, local)
    record = RoundComputation(
        node=state.node, round=r, start_local=state.round_start_local,
        pulse_local=state.pulse_local, close_local=local, end_local=end,
        delta=delta, estimates=dict(state.estimates), arrivals=dict(state.received),
        fallback=state.fallback, late=late,
        pulse2_local=state.pulse2_local, arrivals2=dict(state.received2),
        rate_estimates=rates, xi=xi, mu_prev=state.mu_prev, mu=state.mu,
        mu_hat=mu_hat, mu_next=mu_next, clamped=clamped, xi_fallback=xi_fallback,
    )
    state = replace(
        state, mode="waiting_round_end", mu_next=mu_next,
        clamps=state.clamps + int(clamped), fallbacks=state.fallbacks + int(xi_fallback),
    )
    return state, [RoundComputed(record), SetTimer("round_end", max(end, local), state.epoch)]


def halt_freq(state: FreqNodeState) -> FreqNodeState:
    return replace(
        state, epoch=state.epoch + 1, mode="halted", received={}, received2={},
        delta=None, pulse_local=None, pulse2_local=None, estimates={},
    )


def restart_freq(
    state: FreqNodeState, params: FreqParams, local: float
) -> tuple[FreqNodeState, list[Action]]:
    # μ conservé à travers la réinitialisation
    return begin_round_freq(state, params, local, round_index=1)


def next_pulse_local_freq(state: FreqNodeState, params: FreqParams) -> Optional[float]:
    if state.mode == "pre_pulse":
        return state.round_start_local + params.tau1 / state.mu_prev
    return None


FREQ_LAYER = SyncLayer(
    name="freq",
    initial_state=initial_state_freq,
    start_actions=start_actions_freq,
    on_event=on_event_freq,
    halt=halt_freq,
    restart=restart_freq,
    next_pulse_local=next_pulse_local_freq,
)
