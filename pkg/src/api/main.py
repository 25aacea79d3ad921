"""
FastAPI application for the phase-field simulator.

This module exposes HTTP endpoints that run a configured simulation in
memory, audit it, and run the brute-force oracle suite.
"""
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel
from typing import Any, Dict, List
import logging
import asyncio
import math
import numpy as np
from dotenv import load_dotenv

from src.cli.config import config_from_dict
from src.cli.oracle import SUITES, run_oracle_suite
from src.cli.output import read_trajectory
from src.diagnostics.audit import audit_trajectory
from src.model.errors import ConfigError, SimulationFailed
from src.solvers.stepper import run_simulation

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

# Create FastAPI app
app = FastAPI(
    title="Phase-Field Damage API",
    description="API for running incremental minimisation simulations of phase separation with elasticity and damage",
    version="1.0.0"
)

# Request and response models
class SimulationRequest(BaseModel):
    config: Dict[str, Any]

class SimulationResponse(BaseModel):
    status: str
    steps: int
    times: List[float] = []
    energy: List[float] = []
    min_damage: List[float] = []
    audit_passed: bool = False
    audit_failures: List[str] = []
    solver_workflow: list = []

class AuditRequest(BaseModel):
    config: Dict[str, Any]
    trajectory_dir: str

class AuditResponse(BaseModel):
    passed: bool
    steps: int
    failures: List[str] = []
    rows: List[Dict[str, Any]] = []

class OracleRequest(BaseModel):
    suite: str = "small"

class OracleResponse(BaseModel):
    passed: bool
    results: List[Dict[str, Any]] = []


def _simulate(config_data: Dict[str, Any]) -> SimulationResponse:
    config = config_from_dict(config_data)
    setup = config.build()
    try:
        traj = run_simulation(setup)
        status = "completed"
    except SimulationFailed as e:
        traj = e.trajectory
        status = "solver-failure"
    report = audit_trajectory(traj, setup.settings, seed=config.seed)
    return SimulationResponse(
        status=status,
        steps=traj.steps,
        times=[s.t for s in traj.states],
        energy=[ledger.total for ledger in traj.ledgers],
        min_damage=[float(s.z.min()) for s in traj.states],
        audit_passed=report.passed and status == "completed",
        audit_failures=report.failures,
        solver_workflow=traj.diagnostics[-1]["solver_workflow"] if traj.diagnostics else [],
    )


@app.get("/")
async def root():
    """Root endpoint that returns API information."""
    return {
        "name": "Phase-Field Damage API",
        "version": "1.0.0",
        "description": "API for running incremental minimisation simulations of phase separation with elasticity and damage"
    }

@app.post("/api/simulate", response_model=SimulationResponse)
async def simulate(request: SimulationRequest):
    """
    Run a simulation in memory and audit it.

    Args:
        request: SimulationRequest holding the configuration mapping

    Returns:
        SimulationResponse with the energy history, audit verdict and the last step's solver workflow
    """
    try:
        logger.info(f"Received simulation request ({request.config.get('mode', 'cahn-hilliard')})")
        result = await asyncio.to_thread(_simulate, request.config)
        logger.info(f"Simulation finished: {result.status}, {result.steps} steps")
        return result
    except ConfigError as e:
        logger.error(f"Invalid configuration: {str(e)}")
        raise HTTPException(status_code=422, detail={"message": str(e), "violations": e.violations})
    except Exception as e:
        logger.error(f"Error running simulation: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Error running simulation: {str(e)}")

def _json_row(row: Dict[str, Any]) -> Dict[str, Any]:
    out = {}
    for key, value in row.items():
        value = value.item() if isinstance(value, np.generic) else value
        # JSON has no NaN
        out[key] = None if isinstance(value, float) and math.isnan(value) else value
    return out

def _audit(config_data: Dict[str, Any], trajectory_dir: str) -> AuditResponse:
    config = config_from_dict(config_data)
    setup = config.build()
    try:
        traj = read_trajectory(trajectory_dir, setup)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot read trajectory {trajectory_dir}", [str(e)]) from e
    report = audit_trajectory(traj, setup.settings, seed=config.seed)
    return AuditResponse(passed=report.passed, steps=traj.steps, failures=report.failures, rows=[_json_row(row) for row in report.rows()])

@app.post("/api/audit", response_model=AuditResponse)
async def audit(request: AuditRequest):
    """Audit a trajectory written by the simulate command."""
    try:
        return await asyncio.to_thread(_audit, request.config, request.trajectory_dir)
    except ConfigError as e:
        logger.error(f"Invalid audit request: {str(e)}")
        raise HTTPException(status_code=422, detail={"message": str(e), "violations": e.violations})
    except Exception as e:
        logger.error(f"Error running audit: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Error running audit: {str(e)}")

@app.post("/api/oracle-check", response_model=OracleResponse)
async def oracle_check(request: OracleRequest):
    """Compare single steps with the brute-force optimiser."""
    if request.suite not in SUITES:
        raise HTTPException(status_code=422, detail=f"unknown suite {request.suite!r}")
    try:
        results = await asyncio.to_thread(run_oracle_suite, request.suite)
    except Exception as e:
        logger.error(f"Error running oracle suite: {str(e)}")
        raise HTTPException(status_code=500, detail=f"Error running oracle suite: {str(e)}")
    return OracleResponse(
        passed=all(r.passed for r in results),
        results=[
            {"name": r.name, "passed": r.passed, "energy_gap": r.energy_gap, "field_gaps": r.field_gaps}
            for r in results
        ],
    )

@app.get("/api/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "healthy"}

# Run the application
if __name__ == "__main__":
    import uvicorn
    uvicorn.run("src.api.main:app", host="0.0.0.0", port=8000, reload=True)
