from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class SamplePoint(BaseModel):
    t: float
    position: List[float]
    velocity: List[float]


class ConditionReport(BaseModel):
    name: str
    satisfied: bool
    margin: float
    worst_case: Optional[SamplePoint] = None
    resolution: Dict[str, Any] = Field(default_factory=dict)
    details: Dict[str, Any] = Field(default_factory=dict)


class EnergyCapReport(BaseModel):
    energy_cap: float
    friction: float
    driving_force_max: float
    threshold: float  # analytic c below which dissipation fails on T = c
    safety_factor: float
    sweep_steps: int
    uniform_bound: Optional[float] = None
    worst_case: Optional[SamplePoint] = None

    def as_condition(self) -> ConditionReport:
        return ConditionReport(
            name="energy_cap",
            satisfied=True,
            margin=self.energy_cap - self.threshold,
            worst_case=self.worst_case,
            details=self.model_dump(exclude={"worst_case"}),
        )


class ClassificationSummary(BaseModel):
    total: int
    counts: Dict[str, Dict[str, int]]
    violations: int
    egress_samples: int
    analytic_match_rate: float
    band_samples: int
    min_plane_margin: float
    max_energy_rate: float
    resolution: Dict[str, Any] = Field(default_factory=dict)


class TopologyReport(BaseModel):
    chi_block: int
    chi_egress: int
    difference: int
    egress_curve_points: int
    min_fibre_margin: float
    verified: bool = True


class WitnessReport(BaseModel):
    position: List[float]
    velocity: List[float]
    speed: float
    required_speed: float
    gyroscopic_lift: float  # ([v0, B], e_z)
    weight: float  # m g
    vertical_acceleration: float
    arc_duration: float
    arc_min_plane: float
    arc_samples: int


class OrbitReport(BaseModel):
    status: str  # "interior" or "outside_block"
    tau: float
    residual: float
    reverified_residual: float
    min_f: float
    min_c_minus_T: Optional[float] = None
    initial: SamplePoint
    chart_point: List[float]
    iterations: int
    multipliers: List[List[float]] = Field(default_factory=list)  # (re, im) pairs
    drift_3_periods: Optional[float] = None
    samples: int


class SurvivorGeneration(BaseModel):
    generation: int
    evaluated: int
    best_exit_time: float
    best_point: List[float]
    cell_half_width: float


class SurvivorReport(BaseModel):
    initial: SamplePoint
    disk_point: List[float]
    requested_horizon: float
    verified_horizon: float
    reached_horizon: bool
    budget_exhausted: bool
    min_f: float
    max_T: float
    evaluations: int
    history: List[SurvivorGeneration]
    degenerate_disk: bool = False


class VerificationBundle(BaseModel):
    scenario: str
    system: str
    all_satisfied: bool
    reports: List[ConditionReport]
    classification: Optional[ClassificationSummary] = None
    topology: Optional[TopologyReport] = None
    errors: List[str] = Field(default_factory=list)
    header: Dict[str, Any] = Field(default_factory=dict)
