"""Balayage d'un paramètre : une exécution par (point, essai), graines dérivées."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.errors import ConfigError, InfeasibleError, ModelViolationError
from app.models import FaultConfig, Scenario, SystemParams
from app.services import sim_engine
from app.services.artifacts import to_csv

logger = logging.getLogger(__name__)

AXES = ("theta", "u", "d", "nu", "T", "n")
SWEEP_COLUMNS = [
    "axis", "value", "trial", "seed", "status", "steady_skew", "envelope",
    "violations", "resets_after_beat2",
]


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    trial: int
    seed: int
    status: str
    steady_skew: float
    envelope: float
    violations: int
    resets_after_beat2: int = 0

    def as_list(self) -> list[object]:
        return [
            self.axis, self.value, self.trial, self.seed, self.status,
            self.steady_skew, self.envelope, self.violations, self.resets_after_beat2,
        ]


def apply_axis(template: Scenario, axis: str, value: float) -> Scenario:
    """Copie validée du gabarit avec le paramètre `axis` fixé à `value`."""
    if axis not in AXES:
        raise ConfigError(f"axe inconnu {axis!r} (attendu : {', '.join(AXES)})")
    data = template.model_dump()
    system = dict(data["system"])
    if axis == "T":
        data["overrides"] = {**data["overrides"], "big_t": value}
    elif axis == "n":
        n = int(value)
        system["n"] = n
        system["f"] = (n - 1) // 3
        faults = [spec for spec in data["faults"]["faults"] if spec["node"] < n]
        data["faults"] = {"faults": faults[: system["f"]]}
    else:
        system[axis] = value
    data["system"] = system
    try:
        SystemParams.model_validate(system)
        FaultConfig.model_validate(data["faults"])
        return Scenario.model_validate(data)
    except ValueError as exc:
        raise ConfigError(f"point {axis}={value} invalide: {exc}") from exc


def trial_seed(base_seed: int, point: int, trial: int) -> int:
    return int(np.random.SeedSequence([base_seed, point, trial]).generate_state(1)[0])


def _run_one(job: tuple[Scenario, str, float, int, int]) -> SweepRow:
    scenario, axis, value, trial, seed = job
    try:
        result = sim_engine.run(scenario, seed=seed)
    except InfeasibleError as exc:
        logger.warning("⚠️ %s=%s infaisable : %s", axis, value, exc)
        return SweepRow(axis, value, trial, seed, "infeasible", math.nan, math.nan, 0)
    except ModelViolationError as exc:
        logger.warning("⚠️ %s=%s essai %d : %s", axis, value, trial, exc)
        return SweepRow(axis, value, trial, seed, "model_violation", math.nan, math.nan, 1)
    summary = result.summary
    count = sum(summary.verdict.violation_counts.values())
    return SweepRow(
        axis, value, trial, seed, "pass" if summary.verdict.passed else "violation",
        summary.steady_state_skew, summary.e_limit, count, summary.resets_after_beat2,
    )


def sweep(
    template: Scenario,
    axis: str,
    values: Sequence[float],
    trials: int,
    base_seed: Optional[int] = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Lignes dans l'ordre (point, essai), quel que soit le nombre de processus."""
    base = template.seed if base_seed is None else base_seed
    jobs = []
    for point, value in enumerate(values):
        scenario = apply_axis(template, axis, value)
        for trial in range(trials):
            jobs.append((scenario, axis, float(value), trial, trial_seed(base, point, trial)))
    logger.info("🔁 balayage %s : %d points × %d essais", axis, len(values), trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def sweep_csv(rows: list[SweepRow]) -> str:
    return to_csv(SWEEP_COLUMNS, (row.as_list() for row in rows))


def point_statistics(rows: list[SweepRow]) -> list[dict[str, float]]:
    """Moyenne et maximum de l'écart établi par point (essais faisables)."""
    stats: list[dict[str, float]] = []
    values = sorted({row.value for row in rows})
    for value in values:
        skews = [row.steady_skew for row in rows if row.value == value and not math.isnan(row.steady_skew)]
        stats.append({
            "value": value,
            "trials": float(len(skews)),
            "mean_skew": float(np.mean(skews)) if skews else math.nan,
            "max_skew": float(np.max(skews)) if skews else math.nan,
        })
    return stats


def fit_through_origin(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pente c des moindres carrés de y = c·x."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    mask = ~(np.isnan(x) | np.isnan(y))
    x, y = x[mask], y[mask]
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return math.nan
    return float(np.dot(x, y) / denom)


def is_nondecreasing(values: Sequence[float], rel: float = 1e-6) -> bool:
    seq = [v for v in values if not math.isnan(v)]
    return all(b >= a * (1 - rel) for a, b in zip(seq, seq[1:]))


def sweep_report(axis: str, rows: list[SweepRow]) -> dict[str, object]:
    stats = point_statistics(rows)
    report: dict[str, object] = {
        "axis": axis,
        "rows": len(rows),
        "passed": sum(1 for row in rows if row.status == "pass"),
        "points": stats,
        "nondecreasing": is_nondecreasing([s["mean_skew"] for s in stats]),
    }
    if axis == "u":
        report["skew_per_u"] = fit_through_origin(
            [row.value for row in rows], [row.steady_skew for row in rows]
        )
    return report
