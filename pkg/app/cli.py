"""Interface en ligne de commande : solve, check, simulate, sweep.

Codes de sortie : 0 succès, 1 violation d'invariant, 2 infaisable,
3 configuration invalide.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from app import config
from app.errors import ConfigError, InfeasibleError, ModelViolationError
from app.models import ParamOverrides, SystemParams
from app.services import sim_engine, solver
from app.services.artifacts import load_document, load_scenario, write_artifacts
from app.services.sweep import AXES, sweep, sweep_csv, sweep_report
from app.utils.helpers import atomic_write_text, dump_json

logger = logging.getLogger("pulsesync")

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def resolve_seed(cli_seed: Optional[int], scenario_seed: int) -> int:
    """--seed explicite > PULSESYNC_SEED > graine du scénario."""
    if cli_seed is not None:
        return cli_seed
    if config.PULSESYNC_SEED is not None:
        return config.PULSESYNC_SEED
    return scenario_seed


def _emit(data: object) -> None:
    sys.stdout.write(dump_json(data))
    sys.stdout.flush()


# ── Commandes ───────────────────────────────────────────────
def cmd_solve(args: argparse.Namespace) -> int:
    try:
        system = SystemParams(
            n=args.n, f=args.f, theta=args.theta, nu=args.nu, d=args.d, u=args.u,
            big_f=args.big_f if args.big_f is not None else args.d,
        )
        overrides = ParamOverrides(
            big_t=args.big_t, m=args.m, p_skew=args.p_skew, self_estimate=args.self_estimate,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    algorithm = solver.normalize_algorithm(args.algorithm)
    doc = solver.build_document(algorithm, system, overrides)
    _emit(doc.model_dump(mode="json"))
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    doc = load_document(Path(args.params))
    reports = solver.check_document(doc)
    feasible = all(report.feasible for report in reports)
    _emit({
        "algorithm": doc.algorithm,
        "feasible": feasible,
        "reports": [report.model_dump(mode="json") for report in reports],
    })
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(Path(args.scenario))
    seed = resolve_seed(args.seed, scenario.seed)
    out = Path(args.out) if args.out else config.OUTPUT_DIR / (scenario.name or Path(args.scenario).stem)
    result = sim_engine.run(scenario, seed=seed)
    write_artifacts(out, result)
    verdict = result.summary.verdict
    logger.info("verdict : %s", "succès" if verdict.passed else f"échec {verdict.violation_counts}")
    return EXIT_OK if verdict.passed else EXIT_VIOLATION


def _parse_values(raw: str) -> list[float]:
    try:
        return [float(item) for item in raw.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values invalide: {raw!r}") from exc


def cmd_sweep(args: argparse.Namespace) -> int:
    template = load_scenario(Path(args.template))
    values = _parse_values(args.values)
    if not values:
        raise ConfigError("--values vide")
    seed = resolve_seed(args.seed, template.seed)
    rows = sweep(template, args.axis, values, args.trials, base_seed=seed, workers=args.workers)
    atomic_write_text(Path(args.out), sweep_csv(rows))
    report = sweep_report(args.axis, rows)
    _emit(report)
    return EXIT_OK if all(row.status == "pass" for row in rows) else EXIT_VIOLATION


# ── Analyseur ───────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsesync",
        description="Synchronisation d'impulsions tolérante aux fautes byzantines : solveur et simulateur.",
    )
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="DEBUG, INFO, WARNING…")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="Résoudre les conditions de paramètres")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--big-f", dest="big_f", type=float, default=None, help="F (défaut : d)")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--f", type=int, default=None, help="défaut ⌊(n−1)/3⌋")
    p.add_argument("--algorithm", default="phase", help="phase | freq | phase-stab | freq-stab")
    p.add_argument("--T", dest="big_t", type=float, default=None, help="longueur de ronde imposée")
    p.add_argument("--m", type=int, default=None, help="impulsions par battement (stab)")
    p.add_argument("--p-skew", dest="p_skew", type=float, default=None, help="écart de battement P")
    p.add_argument("--self-estimate", action="store_true", help="pas de message à soi-même")
    p.add_argument("--seed", type=int, default=None, help="sans effet, accepté partout")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("check", help="Vérifier un document de paramètres")
    p.add_argument("--params", required=True)
    p.add_argument("--seed", type=int, default=None, help="sans effet, accepté partout")
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("simulate", help="Simuler un scénario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("sweep", help="Balayer un paramètre")
    p.add_argument("--template", required=True)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="liste séparée par des virgules")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    _setup_logging(args.log_level)
    try:
        return args.handler(args)
    except InfeasibleError as exc:
        logger.error("❌ %s", exc)
        sys.stderr.write(json.dumps({"error": "infeasible", "threshold": exc.threshold, "value": exc.value}) + "\n")
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        logger.error("❌ configuration invalide : %s", exc)
        return EXIT_CONFIG
    except ModelViolationError as exc:
        logger.error("❌ %s (nœud %s, ronde %s)", exc, exc.node, exc.round_index)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
