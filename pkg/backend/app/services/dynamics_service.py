"""
Dynamics Service
Right-hand sides of the two constrained systems in ambient coordinates:

* spherical pendulum with viscous friction in a magnetic field
      m rho'' = -mu rho' + F(t) + rho' x B(t) - m g e_z + R
* point on a rotating closed convex surface (body frame)
      m rho'' = -m g e_z + R - m omega' x rho - m omega x (omega x rho) - 2 m omega x rho' - mu rho'

The reaction R = lambda * grad s is found from the twice differentiated
constraint grad s . rho'' + rho'^T H_s rho' = 0, valid on the whole surface.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.errors import ManifoldError
from app.services.forcing_service import ForcingBundle
from app.services.geometry_service import E_Z, FixedFrame, FrameOrientation, Sphere, State, Surface

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PendulumParams:
    """Mass m (kg), gravity g (m/s^2), friction coefficient mu (kg/s)"""
    m: float = 1.0
    g: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if self.g < 0:
            raise ValueError(f"gravity must be non-negative, got {self.g}")
        if self.mu < 0:
            raise ValueError(f"friction coefficient must be non-negative, got {self.mu}")

    def with_friction(self, mu: float) -> "PendulumParams":
        return PendulumParams(self.m, self.g, mu)


PhysicalParams = PendulumParams


@dataclass(frozen=True)
class ConstraintForce:
    """Reaction R = multiplier * grad s"""
    multiplier: np.ndarray
    reaction: np.ndarray


def constrained_acceleration(
    surface: Surface, rho: np.ndarray, v: np.ndarray, applied: np.ndarray, m: float
) -> Tuple[np.ndarray, ConstraintForce]:
    """Acceleration (applied + lambda grad s) / m with lambda from the differentiated constraint"""
    grad = surface.gradient(rho)
    grad2 = np.sum(grad * grad, axis=-1)
    if np.any(grad2 < 1e-300):
        raise ManifoldError("degenerate surface gradient")
    curvature = np.einsum("...i,...ij,...j->...", v, surface.hessian(rho), v)
    lam = (-m * curvature - np.sum(grad * applied, axis=-1)) / grad2
    reaction = lam[..., None] * grad
    return (applied + reaction) / m, ConstraintForce(lam, reaction)


class MechanicalSystem:
    """Common interface used by the integrator, the block verifiers and the shooting solver"""

    kind = "system"
    surface: Surface
    frame: FrameOrientation
    params: PendulumParams

    @property
    def period(self) -> float:
        return self.frame.period

    def applied_force(self, t: float, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def acceleration(self, t: float, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        accel, _ = constrained_acceleration(self.surface, rho, v, self.applied_force(t, rho, v), self.params.m)
        return accel

    def reaction(self, t: float, rho: np.ndarray, v: np.ndarray) -> ConstraintForce:
        return constrained_acceleration(self.surface, rho, v, self.applied_force(t, rho, v), self.params.m)[1]

    def kinetic_energy(self, v: np.ndarray) -> np.ndarray:
        return kinetic_energy(v, self.params.m)

    def check_state(self, state: State, tol: Optional[float] = None):
        tol = settings.DRIFT_TOL if tol is None else tol
        s_res, tan_res = self.surface.residuals(state.position, state.velocity)
        if np.any(s_res > tol) or np.any(tan_res > tol):
            raise ManifoldError(
                "state is off the constraint manifold",
                {"s_residual": float(np.max(s_res)), "tangency_residual": float(np.max(tan_res))},
            )


class PendulumSystem(MechanicalSystem):
    """Unit-length spherical pendulum; world frame, f = rho_z"""

    kind = "pendulum"

    def __init__(self, params: PendulumParams, forcing: ForcingBundle):
        self.params = params
        self.forcing = forcing
        self.surface = Sphere()
        self.frame = FixedFrame(forcing.period)

    def applied_force(self, t, rho, v):
        p = self.params
        return -p.mu * v + self.forcing.F.value(t) + np.cross(v, self.forcing.B.value(t)) - p.m * p.g * E_Z


class RotatingSurfaceSystem(MechanicalSystem):
    """Mass point on a closed strictly convex surface rotating about the origin; body frame"""

    kind = "rotating_surface"

    def __init__(
        self,
        params: PendulumParams,
        surface: Surface,
        frame: FrameOrientation,
        energy_cap: Optional[float] = None,
        rotation_bound: Optional[float] = None,
    ):
        self.params = params
        self.surface = surface
        self.frame = frame
        self.energy_cap = energy_cap
        self.rotation_bound = rotation_bound

    @property
    def forcing(self) -> ForcingBundle:
        tau = self.frame.period
        unforced = ForcingBundle.unforced(tau)
        return ForcingBundle(unforced.F, unforced.B, self.frame.omega_signal)

    def inertial_force(self, t, rho, v):
        """Euler, centrifugal and Coriolis terms"""
        m = self.params.m
        w, w_dot = self.frame.omega(t), self.frame.omega_dot(t)
        return -m * np.cross(w_dot, rho) - m * np.cross(w, np.cross(w, rho)) - 2.0 * m * np.cross(w, v)

    def applied_force(self, t, rho, v):
        p = self.params
        gravity = -p.m * p.g * self.frame.vertical(t)
        return gravity + self.inertial_force(t, rho, v) - p.mu * v


SurfaceScenario = RotatingSurfaceSystem
Scenario = Union[PendulumSystem, RotatingSurfaceSystem]


def pendulum_accel(state: State, params: PendulumParams, forcing: ForcingBundle) -> np.ndarray:
    """rho'' of the pendulum; rho . rho'' = -|v|^2 holds for the result"""
    system = PendulumSystem(params, forcing)
    system.check_state(state)
    return system.acceleration(state.t, state.position, state.velocity)


def surface_accel(state: State, scenario: RotatingSurfaceSystem, frame: Optional[FrameOrientation] = None) -> np.ndarray:
    """rho'' of the point on the rotating surface (body frame)"""
    if frame is not None and frame is not scenario.frame:
        scenario = RotatingSurfaceSystem(scenario.params, scenario.surface, frame,
                                         scenario.energy_cap, scenario.rotation_bound)
    scenario.check_state(state)
    return scenario.acceleration(state.t, state.position, state.velocity)


def kinetic_energy(v: np.ndarray, m: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return 0.5 * m * np.sum(v * v, axis=-1)


def kinetic_derivative(v: np.ndarray, accel: np.ndarray, m: float) -> np.ndarray:
    """dT/dt = m (rho'' . rho')"""
    return m * np.sum(np.asarray(accel) * np.asarray(v), axis=-1)


def constraint_residual(surface: Surface, rho: np.ndarray, v: np.ndarray, accel: np.ndarray) -> np.ndarray:
    """grad s . rho'' + rho'^T H rho'; zero along exact constrained motion"""
    return np.sum(surface.gradient(rho) * accel, axis=-1) + np.einsum(
        "...i,...ij,...j->...", v, surface.hessian(rho), v
    )
