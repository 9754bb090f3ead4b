"""
Scenario configuration (JSON, schema version 1).

Units: mass m in kg, gravity g in m/s^2, friction mu in kg/s, force F in N,
magnetic field B in T (the Lorentz term is v x B with unit charge), angular
velocity omega in rad/s, period tau in s, energy cap c in J.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class HarmonicTermConfig(BaseModel):
    """a cos(2 pi k t / tau) + b sin(2 pi k t / tau) on one vector component"""
    model_config = ConfigDict(extra="forbid")

    component: int = Field(ge=0, le=2)
    k: int = Field(ge=1)
    a: float = 0.0
    b: float = 0.0


class SignalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    constant: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])
    terms: List[HarmonicTermConfig] = Field(default_factory=list)

    @field_validator("constant")
    @classmethod
    def three_components(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError(f"constant must have 3 components, got {len(value)}")
        return value

    def is_zero(self) -> bool:
        return not any(self.constant) and not any(t.a or t.b for t in self.terms)

    def has_vertical_part(self) -> bool:
        return self.constant[2] != 0.0 or any(t.component == 2 and (t.a or t.b) for t in self.terms)


class ParamsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    m: float = Field(1.0, gt=0, description="mass, kg")
    g: float = Field(1.0, ge=0, description="gravity, m/s^2")
    mu: Optional[float] = Field(None, ge=0, description="friction coefficient, kg/s")
    mu_factor: Optional[float] = Field(
        None, gt=0, description="pendulum only: mu = mu_factor * friction threshold"
    )

    @model_validator(mode="after")
    def friction_given_once(self) -> "ParamsConfig":
        if self.mu is not None and self.mu_factor is not None:
            raise ValueError("give either mu or mu_factor, not both")
        return self


class ForcingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    F: SignalConfig = Field(default_factory=SignalConfig, description="horizontal force, N")
    B: SignalConfig = Field(default_factory=SignalConfig, description="magnetic field, T")
    pivot: Optional[SignalConfig] = Field(None, description="horizontal pivot displacement, m; replaces F")

    @model_validator(mode="after")
    def horizontal_force(self) -> "ForcingConfig":
        if self.F.has_vertical_part():
            raise ValueError("F must be horizontal")
        if self.pivot is not None and self.pivot.has_vertical_part():
            raise ValueError("pivot displacement must be horizontal")
        return self


class SurfaceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["sphere", "ellipsoid"] = "sphere"
    semi_axes: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0])

    @field_validator("semi_axes")
    @classmethod
    def positive_axes(cls, value: List[float]) -> List[float]:
        if len(value) != 3 or any(a <= 0 for a in value):
            raise ValueError("semi_axes must be three positive numbers")
        return value


class RotationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["none", "spin", "precession", "fourier"] = "none"
    axis: List[float] = Field(default_factory=lambda: [0.0, 0.0, 1.0])
    rate: float = Field(0.0, description="spin rate, rad/s")
    tilt: float = Field(0.0, ge=0, description="precession cone half-angle, rad")
    harmonic: int = Field(1, ge=1)
    omega: Optional[SignalConfig] = Field(None, description="body angular velocity, rad/s")
    steps: int = Field(4096, ge=16, description="orientation table steps per period")
    initial_rotvec: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    @model_validator(mode="after")
    def fourier_needs_omega(self) -> "RotationConfig":
        if self.type == "fourier" and self.omega is None:
            raise ValueError("rotation type 'fourier' needs an omega signal")
        return self


class IntegratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps_per_period: int = Field(2000, ge=10)
    projection_tol: float = Field(1e-13, gt=0)
    max_projection_iter: int = Field(20, ge=1)
    event_tol: float = Field(1e-12, gt=0)


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol: float = Field(1e-10, gt=0)
    max_iter: int = Field(30, ge=1)
    fd_step: float = Field(1e-6, gt=0)
    seeds_per_axis: int = Field(3, ge=2)
    record_samples: int = Field(2000, ge=10)


class SurvivorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    horizon_periods: float = Field(20.0, gt=0)
    budget: int = Field(2000, ge=1)
    keep: int = Field(8, ge=1)
    grid: int = Field(15, ge=3)
    steps_per_period: Optional[int] = Field(500, ge=10)


class VerificationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    resolution: int = Field(24, ge=4)
    forward_starts: int = Field(100, ge=1)
    forward_periods: float = Field(5.0, gt=0)
    certify_rotation: bool = False


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    parameter: Literal["mu_factor", "mu", "energy_cap"] = "mu_factor"
    start: float = 0.5
    stop: float = 2.0
    points: int = Field(7, ge=2)
    find_orbits: bool = True


class InitialStateConfig(BaseModel):
    """Start of a simulation; projected onto the manifold once if slightly off"""
    model_config = ConfigDict(extra="forbid")

    t: float = 0.0
    position: List[float]
    velocity: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    @field_validator("position", "velocity")
    @classmethod
    def three_components(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError(f"expected 3 components, got {len(value)}")
        return value


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: Optional[str] = None
    write_strata: bool = False


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    name: str = "scenario"
    system: Literal["pendulum", "rotating_surface"]
    period: float = Field(1.0, gt=0, description="tau, s")
    params: ParamsConfig = Field(default_factory=ParamsConfig)
    energy_cap: Optional[float] = Field(None, gt=0, description="c, J; computed for the surface when absent")
    rotation_bound: Optional[float] = Field(None, gt=0, description="b, bound on |omega| and |omega'|")
    forcing: ForcingConfig = Field(default_factory=ForcingConfig)
    surface: SurfaceConfig = Field(default_factory=SurfaceConfig)
    rotation: RotationConfig = Field(default_factory=RotationConfig)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    survivor: SurvivorConfig = Field(default_factory=SurvivorConfig)
    verification: VerificationConfig = Field(default_factory=VerificationConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    initial: Optional[InitialStateConfig] = Field(None, description="defaults to rest at the top of the surface")
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = 0

    @model_validator(mode="after")
    def consistent_system(self) -> "ScenarioConfig":
        if self.system == "pendulum":
            if self.energy_cap is None:
                raise ValueError("the pendulum needs an energy_cap")
            if self.surface.type != "sphere":
                raise ValueError("the pendulum moves on the unit sphere")
            if self.rotation.type != "none":
                raise ValueError("the pendulum frame does not rotate")
        else:
            if self.params.mu_factor is not None:
                raise ValueError("mu_factor applies to the pendulum only")
            forcing = self.forcing
            if not (forcing.F.is_zero() and forcing.B.is_zero() and forcing.pivot is None):
                raise ValueError("the rotating surface is driven by its rotation only (no F, B or pivot)")
        return self

    def dump(self) -> dict:
        """Fully-defaulted echo for output headers"""
        return self.model_dump(mode="json", by_alias=True)
