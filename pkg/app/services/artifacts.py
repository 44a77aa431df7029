"""Lecture des fichiers d'entrée et écriture des artefacts d'exécution.

Les CSV sont triés (ronde puis nœud) et les flottants écrits en `repr`, ce qui
rend deux exécutions identiques comparables octet à octet.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from pydantic import ValidationError

from app.errors import ConfigError
from app.models import ParameterDocument, RoundTrace, RunSummary, Scenario
from app.utils.helpers import atomic_write_text, dump_json

if TYPE_CHECKING:
    from app.services.sim_engine import RunRecord, SimulationResult

logger = logging.getLogger(__name__)

PULSE_COLUMNS = ["round", "node", "pulse_index", "real_time", "local_time"]
SKEW_COLUMNS = ["round", "skew", "envelope", "margin"]
RATE_COLUMNS = ["round", "node", "mu", "mu_hat", "xi", "rho_bar", "clamped"]


# ── Entrées ─────────────────────────────────────────────────
def _read_json(path: Path) -> object:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"fichier introuvable: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON invalide dans {path}: {exc}") from exc


def load_scenario(path: Path) -> Scenario:
    try:
        return Scenario.model_validate(_read_json(path))
    except ValidationError as exc:
        raise ConfigError(f"scénario invalide ({path}): {exc}") from exc


def load_document(path: Path) -> ParameterDocument:
    try:
        return ParameterDocument.model_validate(_read_json(path))
    except ValidationError as exc:
        raise ConfigError(f"document de paramètres invalide ({path}): {exc}") from exc


# ── CSV ─────────────────────────────────────────────────────
def _fmt(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_csv(columns: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def pulse_rows(run: "RunRecord") -> list[list[object]]:
    """Impulsions alignées des nœuds corrects ; pulse_index 1 ou 2 (fréquence)."""
    rows: list[list[object]] = []
    for index, table in ((1, run.aligned), (2, run.second)):
        for v in run.correct:
            for r, rec in table[v].items():
                if r < run.target:
                    rows.append([r, v, index, rec.real, rec.local])
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    return rows


def skew_rows(traces: list[RoundTrace]) -> list[list[object]]:
    return [[t.r, t.skew, t.envelope, t.envelope - t.skew] for t in traces]


def rate_rows(run: "RunRecord", traces: list[RoundTrace]) -> list[list[object]]:
    rows: list[list[object]] = []
    for t in traces:
        for v in run.correct:
            rec = run.records[v].get(t.r)
            if rec is None or rec.mu is None:
                continue
            rows.append([t.r, v, rec.mu, rec.mu_hat, rec.xi, t.rho_bar.get(v), rec.clamped])
    return rows


def summary_json(summary: RunSummary) -> str:
    return dump_json(summary.model_dump(mode="json"))


def write_artifacts(out_dir: Path, result: "SimulationResult") -> dict[str, Path]:
    """pulses.csv, skew.csv, summary.json et, en fréquence, rates.csv.

    Les fichiers sont écrits dans un répertoire temporaire voisin puis publiés
    par renommage : un échec ne laisse pas de répertoire d'exécution partiel.
    Un répertoire existant reçoit les fichiers un par un (os.replace).
    """
    out_dir = Path(out_dir)
    files = {
        "pulses.csv": to_csv(PULSE_COLUMNS, pulse_rows(result.run)),
        "skew.csv": to_csv(SKEW_COLUMNS, skew_rows(result.traces)),
    }
    if result.run.is_freq:
        files["rates.csv"] = to_csv(RATE_COLUMNS, rate_rows(result.run, result.traces))
    files["summary.json"] = summary_json(result.summary)

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", suffix=".tmp", dir=out_dir.parent))
    try:
        for name, content in files.items():
            atomic_write_text(staging / name, content)
        if out_dir.exists():
            for name in files:
                os.replace(staging / name, out_dir / name)
            staging.rmdir()
        else:
            os.replace(staging, out_dir)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    written = {name: out_dir / name for name in files}
    logger.info("💾 %d artefacts écrits dans %s", len(written), out_dir)
    return written
