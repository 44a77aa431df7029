"""pulsesync — API HTTP de lot : résolution, vérification et simulation."""

from __future__ import annotations

import logging
import re
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from app.config import LOG_LEVEL, OUTPUT_DIR
from app.errors import ConfigError, InfeasibleError, ModelViolationError
from app.models import (
    Algorithm,
    ConditionReport,
    ParameterDocument,
    ParamOverrides,
    RunSummary,
    Scenario,
    SystemParams,
)
from app.services import sim_engine, solver
from app.services.artifacts import write_artifacts

# ── Logging ─────────────────────────────────────────────────
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
)
logger = logging.getLogger("pulsesync")

# ── App FastAPI ─────────────────────────────────────────────
app = FastAPI(
    title="pulsesync — synchronisation d'impulsions byzantine",
    description=(
        "Résout les conditions de paramètres des algorithmes de phase, de "
        "fréquence et de stabilisation, et simule des scénarios avec "
        "vérification des invariants."
    ),
    version="1.0.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)

ARTIFACTS = ("pulses.csv", "skew.csv", "rates.csv", "summary.json")
_RUN_ID = re.compile(r"^[0-9a-f]{32}$")


class SolveRequest(BaseModel):
    system: SystemParams
    algorithm: str = Field("phase", description="phase | freq | phase_stab | freq_stab")
    overrides: ParamOverrides = Field(default_factory=ParamOverrides)


class CheckResponse(BaseModel):
    algorithm: Algorithm
    feasible: bool
    reports: list[ConditionReport]


class SimulateResponse(BaseModel):
    run_id: str
    summary: RunSummary
    files: list[str]


# ─────────────────────────────────────────────────────────────
#  ROUTES
# ─────────────────────────────────────────────────────────────

@app.get("/")
def root():
    return {
        "app": "pulsesync",
        "version": "1.0.0",
        "description": "Solveur de paramètres et simulateur de synchronisation d'impulsions.",
        "endpoints": {
            "POST /solve": "Paramètres minimaux pour un algorithme",
            "POST /check": "Vérifier un document de paramètres",
            "POST /simulate": "Simuler un scénario et écrire les artefacts",
            "GET /download/{run_id}/{name}": "Télécharger un artefact",
            "GET /health": "Vérification santé",
        },
    }


@app.get("/health")
def health():
    return {"status": "ok", "output_dir": str(OUTPUT_DIR)}


@app.post("/solve", response_model=ParameterDocument)
def solve(request: SolveRequest):
    try:
        algorithm = solver.normalize_algorithm(request.algorithm)
        doc = solver.build_document(algorithm, request.system, request.overrides)
    except InfeasibleError as e:
        logger.warning("⚠️ Infaisable: %s", e)
        raise HTTPException(status_code=409, detail={"threshold": e.threshold, "value": e.value, "message": str(e)})
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    logger.info("✅ Paramètres résolus (%s)", algorithm)
    return doc


@app.post("/check", response_model=CheckResponse)
def check(doc: ParameterDocument):
    try:
        reports = solver.check_document(doc)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return CheckResponse(
        algorithm=doc.algorithm,
        feasible=all(r.feasible for r in reports),
        reports=reports,
    )


@app.post("/simulate", response_model=SimulateResponse)
def simulate(scenario: Scenario):
    run_id = uuid.uuid4().hex
    logger.info("▶️ Simulation %s (%s)", run_id, scenario.name or scenario.algorithm)
    try:
        result = sim_engine.run(scenario)
    except InfeasibleError as e:
        raise HTTPException(status_code=409, detail={"threshold": e.threshold, "value": e.value, "message": str(e)})
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except ModelViolationError as e:
        raise HTTPException(
            status_code=422,
            detail={"message": str(e), "node": e.node, "round": e.round_index},
        )
    except Exception as e:
        logger.exception("Erreur lors de la simulation")
        raise HTTPException(status_code=500, detail=f"Erreur interne: {str(e)}")
    written = write_artifacts(OUTPUT_DIR / run_id, result)
    return SimulateResponse(run_id=run_id, summary=result.summary, files=sorted(written))


@app.get("/download/{run_id}/{name}")
def download(run_id: str, name: str):
    if not _RUN_ID.match(run_id) or name not in ARTIFACTS:
        raise HTTPException(status_code=404, detail="Artefact inconnu.")
    path: Path = OUTPUT_DIR / run_id / name
    if not path.exists():
        raise HTTPException(status_code=404, detail="Artefact introuvable.")
    media = "application/json" if name.endswith(".json") else "text/csv"
    return FileResponse(path, media_type=media, filename=name)
