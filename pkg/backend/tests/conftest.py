import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from app.schemas.scenario import ScenarioConfig  # noqa: E402
from app.services.dynamics_service import PendulumParams, PendulumSystem, RotatingSurfaceSystem  # noqa: E402
from app.services.forcing_service import ForcingBundle, HarmonicTerm, PeriodicSignal  # noqa: E402
from app.services.geometry_service import Ellipsoid, FixedFrame, PrecessionFrame, Sphere  # noqa: E402
from app.services.wazewski_validator import Block, friction_threshold  # noqa: E402

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def harmonic_force(amplitude: float, period: float = 1.0) -> PeriodicSignal:
    """F_x = amplitude * sin(2 pi t / period)"""
    return PeriodicSignal(period=period, constant=np.zeros(3), terms=(HarmonicTerm(0, 1, 0.0, amplitude),))


def pendulum_forcing(amplitude: float = 0.1, B=(0.0, 0.0, 0.5), period: float = 1.0) -> ForcingBundle:
    return ForcingBundle(
        harmonic_force(amplitude, period),
        PeriodicSignal.constant_vector(B, period),
        PeriodicSignal.zero(3, period),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def forced_pendulum():
    """m = g = 1, c = 0.5, B || e_z, F_x = 0.1 sin 2 pi t, mu = 1.2 x threshold"""
    forcing = pendulum_forcing()
    base = PendulumParams(1.0, 1.0, 0.0)
    mu = 1.2 * friction_threshold(forcing, 0.5, base)
    return PendulumSystem(base.with_friction(mu), forcing)


@pytest.fixture
def pendulum_block(forced_pendulum):
    return Block(forced_pendulum, 0.5)


@pytest.fixture
def static_sphere():
    return RotatingSurfaceSystem(PendulumParams(1.0, 1.0, 1.0), Sphere(), FixedFrame(1.0))


@pytest.fixture
def precessing_ellipsoid():
    return RotatingSurfaceSystem(
        PendulumParams(1.0, 1.0, 4.0), Ellipsoid((1.0, 1.0, 1.5)), PrecessionFrame(0.05, 2.0 * np.pi)
    )


@pytest.fixture
def scenario_json():
    def load(name: str) -> str:
        return (SCENARIO_DIR / f"{name}.json").read_text(encoding="utf-8")
    return load


@pytest.fixture
def pendulum_scenario(scenario_json) -> ScenarioConfig:
    return ScenarioConfig.model_validate_json(scenario_json("pendulum_orbit"))
