"""Utilitaires communs."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

from app.config import ARITH_SLACK, ENVELOPE_REL_SLACK, SCALE_FLOOR


def slack(bound: float, rel: float = ENVELOPE_REL_SLACK) -> float:
    """Tolérance absolue rel·max(|bound|, SCALE_FLOOR)."""
    return rel * max(abs(bound), SCALE_FLOOR)


def within(value: float, bound: float, rel: float = ENVELOPE_REL_SLACK) -> bool:
    """Vrai si value ≤ bound à la tolérance près."""
    return value <= bound + slack(bound, rel)


def classify(value: float, bound: float, rel: float = ENVELOPE_REL_SLACK) -> str:
    """Retourne "ok", "marginal" ou "fail" pour une comparaison value ≤ bound.

    "marginal" : dépassement absorbé par la tolérance ; au-delà, "fail".
    """
    if value <= bound:
        return "ok"
    excess = value - bound
    tol = slack(bound, rel)
    if excess <= tol:
        return "marginal"
    return "fail"


def diameter(values: Iterable[float]) -> float:
    """‖x‖ = max − min (0 pour moins de deux valeurs)."""
    vals = list(values)
    if len(vals) < 2:
        return 0.0
    return max(vals) - min(vals)


def close(a: float, b: float, rel: float = ARITH_SLACK) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), SCALE_FLOOR)


def atomic_write_text(path: Path, content: str) -> None:
    """Écrit un fichier de façon atomique (fichier temporaire + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(data: object) -> str:
    """JSON stable (clés triées) pour des sorties comparables octet à octet."""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
