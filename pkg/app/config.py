"""Configuration de l'application pulsesync."""

import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()


def _optional_int(name: str) -> int | None:
    raw = os.getenv(name, "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


# ── Répertoires ──────────────────────────────────────────────
BASE_DIR = Path(__file__).resolve().parent.parent
OUTPUT_DIR = Path(os.getenv("PULSESYNC_OUTPUT_DIR", str(BASE_DIR / "output")))
SCENARIO_DIR = Path(os.getenv("PULSESYNC_SCENARIO_DIR", str(BASE_DIR / "scenarios")))

# ── Exécution ────────────────────────────────────────────────
# Graine imposée par l'environnement (prioritaire sur celle du scénario,
# mais pas sur un --seed explicite).
PULSESYNC_SEED: int | None = _optional_int("PULSESYNC_SEED")
LOG_LEVEL = os.getenv("PULSESYNC_LOG_LEVEL", "INFO").upper()

# ── Schéma des scénarios ─────────────────────────────────────
SCHEMA_VERSION = 1

# ── Tolérances numériques ────────────────────────────────────
ENVELOPE_REL_SLACK = 1e-9      # comparaisons aux enveloppes analytiques
ARITH_SLACK = 1e-12            # propriétés exactes (AA, inversion d'horloge)
SCALE_FLOOR = 1e-12           # échelle minimale des tolérances relatives (s)

# ── Solveurs ─────────────────────────────────────────────────
SCHEDULE_MAX_ROUNDS = 10_000   # longueur max d'un calendrier par ronde
SCHEDULE_CONVERGENCE = 1e-12   # arrêt quand e(r) a rejoint sa limite
STAB_MAX_M = 10_000            # borne de recherche sur M
SOFT_28U_FACTOR = 1.5          # marge sur la borne "≈ 28U"

# ── Mesures ──────────────────────────────────────────────────
STEADY_STATE_FRACTION = 0.2    # dernière fraction des rondes
LIMIT_REL_SLACK = 1e-3         # bornes asymptotiques comparées sur la fenêtre établie

# ── Oracle de battements ─────────────────────────────────────
ORACLE_STABILIZATION_FACTOR = 2.0   # délai de stabilisation / (B1+B2+B3)
ORACLE_CHAOS_BEATS = 3.0            # battements parasites moyens par nœud
