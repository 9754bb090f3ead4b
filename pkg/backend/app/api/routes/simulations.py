from typing import Any, Dict, Optional

import numpy as np
from fastapi import APIRouter, Query

from app.api.jobs import run_job
from app.core.errors import ConfigError
from app.schemas.report import WitnessReport
from app.schemas.scenario import ScenarioConfig
from app.services.dynamics_service import PendulumParams
from app.services.geometry_service import State, top_point
from app.services.integration_service import integrate_until
from app.services.scenario_service import build_runtime
from app.services.wazewski_validator import demo_nonconvexity

router = APIRouter()


def _simulate(scenario: ScenarioConfig, t_end: Optional[float], every: int) -> Dict[str, Any]:
    runtime = build_runtime(scenario)
    system = runtime.system
    initial = scenario.initial
    if initial is not None:
        start = State(initial.t, np.asarray(initial.position), np.asarray(initial.velocity))
    else:
        start = State(0.0, top_point(system.surface, system.frame, 0.0), np.zeros(3))
    t_end = start.t + scenario.period if t_end is None else t_end
    trajectory, events = integrate_until(start, system, runtime.integrator, t_end, energy_cap=runtime.energy_cap)
    frame = trajectory.to_dataframe()
    return {
        "samples": len(frame),
        "t_end": float(frame["t"].iloc[-1]),
        "max_constraint_residual": float(frame["s_res"].abs().max()),
        "trajectory": frame.iloc[::every].to_dict(orient="list"),
        "events": [e.to_dict() for e in events],
        "header": runtime.header(),
    }


def _witness(scenario: ScenarioConfig) -> WitnessReport:
    if scenario.system != "pendulum":
        raise ConfigError("the non-convexity witness needs a pendulum scenario")
    p = scenario.params
    try:
        params = PendulumParams(p.m, p.g, p.mu or 0.0)
        return demo_nonconvexity(scenario.forcing.B.constant, params)
    except ValueError as e:
        raise ConfigError(str(e))


@router.post("/")
async def simulate(
    scenario: ScenarioConfig,
    t_end: Optional[float] = None,
    every: int = Query(1, ge=1, description="keep every n-th sample"),
):
    """Integrate from the scenario's initial state and return the sampled trajectory"""
    return await run_job("simulation", lambda: _simulate(scenario, t_end, every))


@router.post("/nonconvexity", response_model=WitnessReport)
async def nonconvexity(scenario: ScenarioConfig):
    return await run_job("non-convexity witness", lambda: _witness(scenario))
