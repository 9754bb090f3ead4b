"""
Scenario Service
Loads scenario files with line-precise error messages and turns a
ScenarioConfig into the runtime objects the other services work on.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import ConfigError
from app.schemas.report import EnergyCapReport
from app.schemas.scenario import ScenarioConfig, SignalConfig
from app.services.dynamics_service import MechanicalSystem, PendulumParams, PendulumSystem, RotatingSurfaceSystem
from app.services.forcing_service import ForcingBundle, PeriodicSignal
from app.services.geometry_service import (
    Ellipsoid,
    FixedFrame,
    FrameOrientation,
    IntegratedFrame,
    PrecessionFrame,
    Sphere,
    SpinFrame,
    Surface,
)
from app.services.integration_service import IntegratorSettings
from app.services.wazewski_validator import Block, find_energy_cap, friction_threshold

logger = logging.getLogger(__name__)


def _locate(text: str, loc: Sequence[Union[str, int]]) -> Optional[int]:
    """Line of the innermost key of an error location, found by scanning keys in order"""
    pos, found = 0, False
    for key in loc:
        if not isinstance(key, str):
            continue
        idx = text.find(f'"{key}"', pos)
        if idx < 0:
            break
        pos, found = idx, True
    return text.count("\n", 0, pos) + 1 if found else None


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}", {"line": e.lineno, "column": e.colno})
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        messages, where = [], []
        for err in e.errors():
            loc = err.get("loc", ())
            line = _locate(text, loc)
            path = ".".join(str(k) for k in loc) or "<root>"
            prefix = f"{source}:{line}" if line else source
            messages.append(f"{prefix}: {path}: {err['msg']}")
            where.append({"loc": [str(k) for k in loc], "line": line, "message": err["msg"]})
        raise ConfigError("; ".join(messages), {"errors": where})


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e}")
    return parse_scenario(text, str(path))


def build_signal(config: SignalConfig, period: float) -> PeriodicSignal:
    return PeriodicSignal.from_records(period, config.constant, (t.model_dump() for t in config.terms))


def build_surface(config: ScenarioConfig) -> Surface:
    if config.surface.type == "sphere":
        return Sphere()
    return Ellipsoid(config.surface.semi_axes)


def build_frame(config: ScenarioConfig) -> FrameOrientation:
    rotation, tau = config.rotation, config.period
    if rotation.type == "spin":
        return SpinFrame(rotation.axis, rotation.rate, tau, rotation.initial_rotvec)
    if rotation.type == "precession":
        return PrecessionFrame(rotation.tilt, tau, rotation.harmonic)
    if rotation.type == "fourier":
        return IntegratedFrame(build_signal(rotation.omega, tau), rotation.steps, rotation.initial_rotvec)
    return FixedFrame(tau)


def build_forcing(config: ScenarioConfig) -> ForcingBundle:
    tau = config.period
    B = build_signal(config.forcing.B, tau)
    if config.forcing.pivot is not None:
        return ForcingBundle.from_pivot_motion(build_signal(config.forcing.pivot, tau), config.params.m, B)
    try:
        return ForcingBundle(build_signal(config.forcing.F, tau), B, PeriodicSignal.zero(3, tau))
    except ValueError as e:
        raise ConfigError(str(e))


def integrator_settings(config: ScenarioConfig, steps_per_period: Optional[int] = None) -> IntegratorSettings:
    cfg = config.integrator
    return IntegratorSettings.for_period(
        config.period,
        steps_per_period or cfg.steps_per_period,
        projection_tol=cfg.projection_tol,
        max_projection_iter=cfg.max_projection_iter,
        event_tol=cfg.event_tol,
    )


@dataclass
class ScenarioRuntime:
    """Everything a command needs: config, system, block and integrator settings"""
    config: ScenarioConfig
    system: MechanicalSystem
    block: Block
    integrator: IntegratorSettings
    forcing: Optional[ForcingBundle] = None
    energy: Optional[EnergyCapReport] = None
    friction_threshold: Optional[float] = None
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def energy_cap(self) -> float:
        return self.block.energy_cap

    def header(self) -> Dict[str, Any]:
        """Echo of the fully-defaulted scenario, derived constants and settings"""
        return {
            "scenario": self.config.dump(),
            "derived": {
                "energy_cap": self.energy_cap,
                "mu": self.system.params.mu,
                "friction_threshold": self.friction_threshold,
                "energy_cap_report": self.energy.model_dump() if self.energy else None,
                **self.notes,
            },
            "settings": settings.model_dump(),
        }


def build_runtime(config: ScenarioConfig) -> ScenarioRuntime:
    p = config.params
    base = PendulumParams(m=p.m, g=p.g, mu=p.mu or 0.0)
    try:
        if config.system == "pendulum":
            return _pendulum_runtime(config, base)
        return _surface_runtime(config, base)
    except ValueError as e:
        raise ConfigError(f"{config.name}: {e}")


def _pendulum_runtime(config: ScenarioConfig, base: PendulumParams) -> ScenarioRuntime:
    forcing = build_forcing(config)
    c = config.energy_cap
    threshold = friction_threshold(forcing, c, base)
    params = base
    if config.params.mu_factor is not None:
        params = base.with_friction(config.params.mu_factor * threshold)
        logger.info(f"Friction set to {config.params.mu_factor} x threshold = {params.mu:.6g}")
    system = PendulumSystem(params, forcing)
    return ScenarioRuntime(
        config=config,
        system=system,
        block=Block(system, c),
        integrator=integrator_settings(config),
        forcing=forcing,
        friction_threshold=threshold,
    )


def _surface_runtime(config: ScenarioConfig, params: PendulumParams) -> ScenarioRuntime:
    system = RotatingSurfaceSystem(
        params, build_surface(config), build_frame(config), config.energy_cap, config.rotation_bound
    )
    energy = None
    c = config.energy_cap
    if c is None:
        energy = find_energy_cap(system, config.rotation_bound, config.verification.resolution)
        c = energy.energy_cap
        system.energy_cap = c
        logger.info(f"Energy cap computed for {config.name}: c = {c:.6g}")
    return ScenarioRuntime(
        config=config,
        system=system,
        block=Block(system, c),
        integrator=integrator_settings(config),
        energy=energy,
    )


def load_runtime(path: Union[str, Path]) -> ScenarioRuntime:
    return build_runtime(load_scenario(path))
