from typing import Optional

from fastapi import APIRouter, Query

from app.api.jobs import run_job
from app.schemas.report import OrbitReport, SurvivorReport
from app.schemas.scenario import ScenarioConfig
from app.services.orbit_service import StroboscopicMap, multistart, survivor_search
from app.services.scenario_service import build_runtime, integrator_settings

router = APIRouter()


def _find_orbit(scenario: ScenarioConfig) -> OrbitReport:
    runtime = build_runtime(scenario)
    solver = scenario.solver
    smap = StroboscopicMap.for_system(runtime.system, runtime.integrator, fd_step=solver.fd_step)
    orbit = multistart(
        smap, runtime.energy_cap, solver.tol, solver.max_iter,
        seed=scenario.seed, per_axis=solver.seeds_per_axis,
    )
    return orbit.to_report()


def _survivor(scenario: ScenarioConfig, horizon: Optional[float]) -> SurvivorReport:
    runtime = build_runtime(scenario)
    search = scenario.survivor
    cfg = integrator_settings(scenario, search.steps_per_period)
    horizon = horizon or search.horizon_periods * scenario.period
    return survivor_search(runtime.block, horizon, search.budget, cfg, search.keep, search.grid).to_report()


@router.post("/", response_model=OrbitReport)
async def find_orbit(scenario: ScenarioConfig):
    """Newton shooting on the stroboscopic map from the equilibrium and a seed grid"""
    return await run_job("orbit search", lambda: _find_orbit(scenario))


@router.post("/survivor", response_model=SurvivorReport)
async def find_survivor(scenario: ScenarioConfig, horizon: Optional[float] = Query(None, gt=0)):
    return await run_job("survivor search", lambda: _survivor(scenario, horizon))
