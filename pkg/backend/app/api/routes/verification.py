from typing import Optional

from fastapi import APIRouter, Query

from app.api.jobs import run_job
from app.schemas.report import VerificationBundle
from app.schemas.scenario import ScenarioConfig
from app.services.scenario_service import build_runtime
from app.workflows.verification_workflow import verify_scenario

router = APIRouter()


@router.post("/", response_model=VerificationBundle)
async def verify(
    scenario: ScenarioConfig,
    resolution: Optional[int] = Query(None, ge=4),
    forward_invariance: bool = False,
):
    """Check every block hypothesis of a scenario; unsatisfied checks come back in the bundle"""
    return await run_job(
        "verification",
        lambda: verify_scenario(build_runtime(scenario), resolution, forward_invariance),
    )
