"""Modèles Pydantic : paramètres système, scénarios, paramètres résolus, traces."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import SCHEMA_VERSION

__all__ = [
    "Algorithm", "SystemParams", "ClockPolicy", "DelayPolicy",
    "ScheduledPulse", "FaultSpec", "FaultConfig",
    "PhaseParams", "FreqParams", "StabParams",
    "ParamOverrides", "OracleConfig", "ChecksConfig", "Scenario",
    "InequalityResult", "ConditionReport", "ParameterDocument",
    "Violation", "RoundTrace", "Verdict", "RunSummary",
]

Algorithm = Literal["phase", "freq", "phase_stab", "freq_stab"]

_STRICT = ConfigDict(extra="forbid")
_FROZEN = ConfigDict(extra="forbid", frozen=True)


# ── Modèle système ──────────────────────────────────────────
class SystemParams(BaseModel):
    """Constantes globales partagées par l'algorithme et l'adversaire."""

    model_config = _FROZEN

    n: int = Field(..., ge=4, description="Nombre de nœuds")
    f: int = Field(..., ge=0, description="Budget de fautes (défaut ⌊(n−1)/3⌋)")
    theta: float = Field(..., ge=1.0, description="Borne de dérive θ")
    nu: float = Field(0.0, ge=0.0, description="Borne Lipschitz ν sur le taux")
    d: float = Field(..., gt=0.0, description="Délai maximal (s)")
    u: float = Field(..., gt=0.0, description="Incertitude de délai U (s)")
    big_f: float = Field(..., gt=0.0, description="Fenêtre d'initialisation F (s locales)")

    @model_validator(mode="before")
    @classmethod
    def _default_f(cls, data):
        if isinstance(data, dict) and data.get("f") is None:
            data = dict(data)
            try:
                data["f"] = (int(data.get("n", 4)) - 1) // 3
            except (TypeError, ValueError):
                pass
        return data

    @model_validator(mode="after")
    def _check(self) -> "SystemParams":
        if self.f > self.f_max:
            raise ValueError(f"f={self.f} dépasse ⌊(n−1)/3⌋={self.f_max}")
        if self.u > self.d:
            raise ValueError("U doit vérifier 0 < U ≤ d")
        return self

    @property
    def f_max(self) -> int:
        return (self.n - 1) // 3


# ── Politiques adverses ─────────────────────────────────────
class ClockPolicy(BaseModel):
    model_config = _STRICT

    kind: Literal[
        "all_nominal", "all_max_drift", "random_constant",
        "drift_worstcase_split", "sinusoid_bounded",
    ] = "random_constant"
    offsets: Literal["random", "zero"] = Field(
        "random", description="H(0) tiré dans [0, F) ou nul pour tous"
    )
    period: Optional[float] = Field(None, gt=0, description="Période (s), sinusoid_bounded")
    amplitude: float = Field(1.0, gt=0, le=1.0, description="Fraction de (θ−1)/2, sinusoid_bounded")
    breakpoints_per_period: int = Field(16, ge=4)


class DelayPolicy(BaseModel):
    model_config = _STRICT

    kind: Literal[
        "constant_max", "constant_min", "uniform_random",
        "adversarial_split", "per_link_table",
    ] = "uniform_random"
    table: Optional[list[list[float]]] = Field(
        None, description="Délais fixes table[émetteur][récepteur], per_link_table"
    )


class ScheduledPulse(BaseModel):
    model_config = _STRICT

    time: float = Field(..., ge=0)
    receivers: Optional[list[int]] = Field(None, description="None = tous les nœuds")
    kind: Literal[1, 2] = 1


class FaultSpec(BaseModel):
    model_config = _STRICT

    node: int = Field(..., ge=0)
    strategy: Literal[
        "silent", "random_pulses", "split_early_late", "mirror_extreme", "custom_schedule",
    ] = "silent"
    rate: Optional[float] = Field(None, gt=0, description="Impulsions/s, random_pulses")
    schedule: list[ScheduledPulse] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "FaultSpec":
        if self.strategy == "random_pulses" and self.rate is None:
            raise ValueError("random_pulses exige 'rate'")
        return self


class FaultConfig(BaseModel):
    model_config = _STRICT

    faults: list[FaultSpec] = Field(default_factory=list)

    @property
    def faulty_set(self) -> set[int]:
        return {spec.node for spec in self.faults}


# ── Paramètres résolus ──────────────────────────────────────
class PhaseParams(BaseModel):
    """Constantes de l'algorithme de phase.

    Les budgets τ₁, τ₂, T sont des listes indexées par ronde (r = 1 en tête) ;
    au-delà de la liste, la dernière valeur s'applique. Un calendrier constant
    est une liste de longueur 1.
    """

    model_config = _FROZEN

    theta: float
    d: float
    u: float
    big_f: float
    schedule: Literal["per_round", "constant"]
    tau1: list[float]
    tau2: list[float]
    big_t: list[float]
    alpha: float
    beta: float
    e_limit: float
    self_estimate: bool = False

    @staticmethod
    def _at(values: list[float], r: int) -> float:
        return values[min(max(r, 1), len(values)) - 1]

    def tau1_at(self, r: int) -> float:
        return self._at(self.tau1, r)

    def tau2_at(self, r: int) -> float:
        return self._at(self.tau2, r)

    def big_t_at(self, r: int) -> float:
        return self._at(self.big_t, r)

    def measurement_constant(self) -> float:
        """Terme constant de la récurrence d'enveloppe (dépend du mode de mesure)."""
        th = self.theta
        if self.self_estimate:
            return (3 * th - 1) * (self.u / 2 + (th - 1) * self.d / (th * (th + 1)))
        return (3 * th - 1) * self.u

    @property
    def e1(self) -> float:
        return self.big_f + (1 - 1 / self.theta) * self.tau1_at(1)

    def e_schedule(self, horizon: int) -> list[float]:
        """e(1..horizon) par la récurrence de la condition 1."""
        c = 1 - 1 / self.theta
        k = self.measurement_constant()
        out = [self.e1]
        for r in range(1, horizon):
            nxt = (
                self.beta * out[-1] + k
                + c * (self.big_t_at(r) + self.tau1_at(r + 1) - self.tau1_at(r))
            )
            out.append(nxt)
        return out


class FreqParams(BaseModel):
    model_config = _FROZEN

    theta: float
    d: float
    u: float
    nu: float
    big_f: float
    tau1: float
    tau2: float
    tau3: float
    tau4: float
    big_t: float
    epsilon: float
    theta_bar: float
    alpha_bar: float
    beta_bar: float
    e1: float
    e_limit: float

    @property
    def tau23(self) -> float:
        return self.tau2 + self.tau3

    def e_schedule(self, horizon: int) -> list[float]:
        c = 1 - 1 / self.theta_bar
        k = (3 * self.theta_bar - 1) * self.u + c * self.big_t
        out = [self.e1]
        for _ in range(1, horizon):
            out.append(self.beta_bar * out[-1] + k)
        return out


class StabParams(BaseModel):
    model_config = _FROZEN

    m: int = Field(..., ge=2, description="Impulsions par cycle de battement M")
    r_minus: float
    r_plus: float
    p_skew: float = Field(..., ge=0)
    b1: float
    b2: float
    b3: float
    d_f: float = Field(..., ge=0)
    theta_star: float = Field(..., description="θ pour la phase, θ̄ pour la fréquence")
    e_m: float = Field(..., description="e(M) de l'enveloppe constante")


# ── Scénario ────────────────────────────────────────────────
class ParamOverrides(BaseModel):
    model_config = _STRICT

    big_t: Optional[float] = Field(None, gt=0)
    tau1: Optional[float] = Field(None, gt=0)
    tau2: Optional[float] = Field(None, gt=0)
    tau3: Optional[float] = Field(None, gt=0)
    tau4: Optional[float] = Field(None, gt=0)
    epsilon: Optional[float] = Field(None, ge=0)
    m: Optional[int] = Field(None, ge=2)
    p_skew: Optional[float] = Field(None, ge=0)
    d_f: Optional[float] = Field(None, ge=0)
    self_estimate: bool = False


class OracleConfig(BaseModel):
    model_config = _STRICT

    policy: Literal["earliest", "latest", "random", "split_P"] = "random"
    stabilization_delay: Optional[float] = Field(None, ge=0)
    chaos: bool = True
    chaos_beats: Optional[float] = Field(None, ge=0, description="Battements parasites moyens par nœud")


class ChecksConfig(BaseModel):
    model_config = _STRICT

    feasibility: bool = Field(True, description="False : lancer même si les conditions échouent")
    envelope: bool = True
    measurement: bool = True
    step: bool = True
    execution: bool = True
    problem: bool = True
    frequency: bool = True
    stabilization: bool = True
    strict: bool = Field(False, description="Échec d'exécution d'un nœud correct → exception")


class Scenario(BaseModel):
    model_config = _STRICT

    schema_version: Literal[1] = SCHEMA_VERSION
    name: str = ""
    system: SystemParams
    algorithm: Algorithm = "phase"
    rounds: int = Field(60, ge=1)
    beat_cycles: int = Field(3, ge=1)
    seed: int = 0
    clock_policy: ClockPolicy = Field(default_factory=ClockPolicy)
    delay_policy: DelayPolicy = Field(default_factory=DelayPolicy)
    faults: FaultConfig = Field(default_factory=FaultConfig)
    overrides: ParamOverrides = Field(default_factory=ParamOverrides)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    checks: ChecksConfig = Field(default_factory=ChecksConfig)
    corrupt_initial_state: bool = Field(True, description="État initial arbitraire (variantes stab)")

    @model_validator(mode="after")
    def _check_faults(self) -> "Scenario":
        nodes = [spec.node for spec in self.faults.faults]
        if len(nodes) != len(set(nodes)):
            raise ValueError("un nœud fautif est déclaré deux fois")
        if len(nodes) > self.system.f:
            raise ValueError(f"{len(nodes)} nœuds fautifs > f={self.system.f}")
        if any(v >= self.system.n for v in nodes):
            raise ValueError("identifiant de nœud fautif hors de [0, n)")
        return self

    @property
    def is_freq(self) -> bool:
        return self.algorithm.startswith("freq")


# ── Rapports de conditions ──────────────────────────────────
class InequalityResult(BaseModel):
    name: str
    round: Optional[int] = None
    lhs: float
    rhs: float
    ok: bool

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


class ConditionReport(BaseModel):
    condition: str
    results: list[InequalityResult] = Field(default_factory=list)
    e_schedule: list[float] = Field(default_factory=list)

    @property
    def violations(self) -> list[InequalityResult]:
        return [res for res in self.results if not res.ok]

    @property
    def feasible(self) -> bool:
        return not self.violations


class ParameterDocument(BaseModel):
    """Document produit par `solve` et relu par `check`."""

    model_config = _STRICT

    schema_version: Literal[1] = SCHEMA_VERSION
    algorithm: Algorithm
    system: SystemParams
    phase: Optional[PhaseParams] = None
    freq: Optional[FreqParams] = None
    stab: Optional[StabParams] = None
    derived: dict[str, float] = Field(default_factory=dict)
    binding: list[str] = Field(default_factory=list)


# ── Traces et verdict ───────────────────────────────────────
class Violation(BaseModel):
    family: str
    tag: str
    round: Optional[int] = None
    nodes: list[int] = Field(default_factory=list)
    measured: float
    bound: float
    severity: Literal["marginal", "fail"] = "fail"


class RoundTrace(BaseModel):
    """Vérité terrain d'une ronde (nœuds corrects uniquement)."""

    r: int
    p_vector: dict[int, float]
    q_vector: dict[int, float] = Field(default_factory=dict)
    skew: float
    q_skew: Optional[float] = None
    rate_spread: Optional[float] = None
    interval_spread: Optional[float] = None
    rho_bar: dict[int, float] = Field(default_factory=dict)
    deltas: dict[int, float] = Field(default_factory=dict)
    xis: dict[int, float] = Field(default_factory=dict)
    mus: dict[int, float] = Field(default_factory=dict)
    envelope: Optional[float] = None
    resets: int = 0
    violations: list[Violation] = Field(default_factory=list)


class Verdict(BaseModel):
    passed: bool
    violation_counts: dict[str, int] = Field(default_factory=dict)
    marginal_counts: dict[str, int] = Field(default_factory=dict)
    first_violations: list[Violation] = Field(default_factory=list)


class RunSummary(BaseModel):
    scenario: str
    algorithm: Algorithm
    seed: int
    verdict: Verdict
    rounds_completed: int
    steady_state_skew: float
    e_limit: float
    max_margin: float
    resets_total: int = 0
    resets_after_beat2: int = 0
    compliant_beats: int = 0
    diagnostics: dict[str, int] = Field(default_factory=dict)
    bounds: dict[str, float] = Field(default_factory=dict)
    soft_checks: dict[str, float | bool] = Field(default_factory=dict)
