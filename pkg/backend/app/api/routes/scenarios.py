from pathlib import Path
from typing import List

from fastapi import APIRouter, HTTPException

from app.core.config import settings
from app.core.errors import ConfigError
from app.schemas.scenario import ScenarioConfig
from app.services.scenario_service import load_scenario

router = APIRouter()

SCENARIO_DIR = Path(__file__).resolve().parents[3] / "scenarios"


def _load(name: str) -> ScenarioConfig:
    path = SCENARIO_DIR / f"{name}.json"
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"Scenario {name!r} not found")
    try:
        return load_scenario(path)
    except ConfigError as e:
        raise HTTPException(status_code=500, detail=e.to_dict())


@router.get("/", response_model=List[str])
async def list_scenarios():
    """Names of the bundled scenario files"""
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


@router.get("/default", response_model=ScenarioConfig)
async def default_scenario():
    if not settings.DEFAULT_SCENARIO:
        raise HTTPException(status_code=404, detail="No default scenario configured (ORBITMATE_DEFAULT_SCENARIO)")
    return _load(settings.DEFAULT_SCENARIO)


@router.get("/{name}", response_model=ScenarioConfig)
async def get_scenario(name: str):
    return _load(name)
