"""Façade des solveurs : choix de la condition selon l'algorithme, document de paramètres."""

from __future__ import annotations

import logging
from typing import Optional, Union

from app.models import (
    Algorithm,
    ConditionReport,
    FreqParams,
    ParameterDocument,
    ParamOverrides,
    PhaseParams,
    StabParams,
    SystemParams,
)
from app.services import freq_sync, phase_sync, stabilizer
from app.services.phase_sync import PHASE_LAYER, SyncLayer
from app.services.freq_sync import FREQ_LAYER
from app.errors import ConfigError

logger = logging.getLogger(__name__)

SyncParams = Union[PhaseParams, FreqParams]

BINDING_REL = 1e-9


def normalize_algorithm(name: str) -> Algorithm:
    """Accepte `phase-stab` comme `phase_stab`."""
    value = name.strip().lower().replace("-", "_")
    if value not in ("phase", "freq", "phase_stab", "freq_stab"):
        raise ConfigError(f"algorithme inconnu: {name!r}")
    return value  # type: ignore[return-value]


def layer_for(algorithm: Algorithm) -> SyncLayer:
    return FREQ_LAYER if algorithm.startswith("freq") else PHASE_LAYER


def resolve_params(
    algorithm: Algorithm, system: SystemParams, overrides: Optional[ParamOverrides] = None
) -> tuple[SyncParams, Optional[StabParams]]:
    """Résout la condition 1, 2 ou 3 selon l'algorithme."""
    overrides = overrides or ParamOverrides()
    if algorithm == "phase":
        return phase_sync.solve_condition1(system, overrides=overrides), None
    if algorithm == "freq":
        return freq_sync.solve_condition2(system, overrides=overrides), None
    variant = "phase" if algorithm == "phase_stab" else "freq"
    return stabilizer.solve_condition3(system, variant, overrides)


def condition_reports(
    system: SystemParams,
    sync: SyncParams,
    stab: Optional[StabParams],
    horizon: Optional[int] = None,
) -> list[ConditionReport]:
    if isinstance(sync, PhaseParams):
        rounds = horizon or max(len(sync.tau1), len(sync.big_t)) + 1
        reports = [phase_sync.check_condition1(sync, system, rounds)]
    else:
        reports = [freq_sync.check_condition2(sync, system, horizon or 1)]
    if stab is not None:
        reports.append(stabilizer.check_condition3(sync, stab, system))
    return reports


def binding_inequalities(reports: list[ConditionReport]) -> list[str]:
    """Inégalités satisfaites à l'égalité (à BINDING_REL près), sans doublon."""
    names: list[str] = []
    for report in reports:
        for res in report.results:
            scale = max(abs(res.lhs), abs(res.rhs), 1e-300)
            if res.ok and abs(res.rhs - res.lhs) <= BINDING_REL * scale:
                label = f"{report.condition}.{res.name}"
                if label not in names:
                    names.append(label)
    return names


def derived_values(algorithm: Algorithm, system: SystemParams, sync: SyncParams, stab: Optional[StabParams]) -> dict[str, float]:
    out: dict[str, float] = {"e1": sync.e1, "e_limit": sync.e_limit}
    if isinstance(sync, PhaseParams):
        out.update(alpha=sync.alpha, beta=sync.beta, rounds_scheduled=float(len(sync.tau1)))
        out["T1"] = sync.big_t_at(1)
    else:
        tb = sync.theta_bar
        out.update(
            alpha_bar=sync.alpha_bar, beta_bar=sync.beta_bar, theta_bar=tb,
            alpha_prime=freq_sync.alpha_prime(tb), rate_beta=freq_sync.rate_beta(sync.theta),
            epsilon_min=freq_sync.minimal_epsilon(sync.theta, sync.u, sync.nu, sync.tau23, sync.big_t),
            steady_state_bound=freq_sync.steady_state_bound_freq(sync),
            rate_floor=freq_sync.rate_floor(sync),
            stability_bound=freq_sync.stability_bound(sync),
            estimate_error_bound=freq_sync.freq_estimate_error_bound(sync),
        )
        if algorithm == "freq":
            out["T0"] = freq_sync.minimal_round_length(system)
        regime = freq_sync.regime_28u(sync)
        out["approx_28u_bound"] = float(regime["approx_bound"])
    if stab is not None:
        variant = "phase" if algorithm == "phase_stab" else "freq"
        out["alpha_stab"] = stabilizer.alpha_stab(system, variant, stab.p_skew)
        out["alpha_stab_closed_form"] = stabilizer.alpha_stab_closed_form(system.theta, variant)
        out["e_M"] = stab.e_m
    return out


def build_document(
    algorithm: Algorithm, system: SystemParams, overrides: Optional[ParamOverrides] = None
) -> ParameterDocument:
    sync, stab = resolve_params(algorithm, system, overrides)
    reports = condition_reports(system, sync, stab)
    return ParameterDocument(
        algorithm=algorithm,
        system=system,
        phase=sync if isinstance(sync, PhaseParams) else None,
        freq=sync if isinstance(sync, FreqParams) else None,
        stab=stab,
        derived=derived_values(algorithm, system, sync, stab),
        binding=binding_inequalities(reports),
    )


def check_document(doc: ParameterDocument) -> list[ConditionReport]:
    sync = doc.phase if doc.phase is not None else doc.freq
    if sync is None:
        raise ConfigError("document sans paramètres phase/freq")
    if doc.algorithm.endswith("_stab") and doc.stab is None:
        raise ConfigError("document stabilisant sans bloc 'stab'")
    if doc.algorithm.startswith("freq") != isinstance(sync, FreqParams):
        raise ConfigError(f"bloc de paramètres incohérent avec l'algorithme {doc.algorithm}")
    reports = condition_reports(doc.system, sync, doc.stab)
    for report in reports:
        if not report.feasible:
            logger.warning("⚠️ %s : %d inégalité(s) violée(s)", report.condition, len(report.violations))
    return reports
