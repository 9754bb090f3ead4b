"""
Wazewski Validator
The block N_c = {f(t, rho) >= 0, T <= c} in extended phase space for both
systems, sampling-based classification of its boundary, and checks of the
quantitative hypotheses that make it a Wazewski block: the magnetic bound,
the friction threshold, the energy cap and the tangency lemma.

Every check is sampling-based: reports carry the resolution used and the
margin in the safe direction, never a proof.
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import (
    EmptyTangencySetError,
    StructureMismatchError,
    SweepExhaustedError,
    WitnessNotFoundError,
)
from app.schemas.report import (
    ClassificationSummary,
    ConditionReport,
    EnergyCapReport,
    SamplePoint,
    TopologyReport,
    WitnessReport,
)
from app.services.dynamics_service import MechanicalSystem, PendulumParams, PendulumSystem, constrained_acceleration
from app.services.forcing_service import ForcingBundle, PeriodicSignal
from app.services.geometry_service import (
    E_Z,
    State,
    Surface,
    fibonacci_directions,
    orthonormal_complement,
    plane_f,
    plane_f_ddot,
    plane_f_dot,
)
from app.services.integration_service import (
    EXIT_ENERGY,
    EXIT_PLANE,
    IntegratorSettings,
    advance,
    exit_scan,
    integrate_until,
)

logger = logging.getLogger(__name__)

STRICT_EGRESS = "strict_egress"
INGRESS = "ingress"
EXTERNAL_TANGENCY = "external_tangency"
INTERNAL_TANGENCY_VIOLATION = "internal_tangency_violation"
EGRESS_CLASSES = (STRICT_EGRESS, EXTERNAL_TANGENCY)

PLANE_FACE = "plane"
ENERGY_FACE = "energy"
CORNER = "corner"

STRATUM_COLUMNS = [
    "t", "rx", "ry", "rz", "vx", "vy", "vz",
    "face", "classification", "first_derivative", "second_derivative", "margin", "band", "expected_egress",
]


@dataclass(frozen=True)
class Block:
    """N_c for one system: moving face f >= 0 and energy face T <= c"""
    system: MechanicalSystem
    energy_cap: float

    def __post_init__(self):
        if not self.energy_cap > 0:
            raise ValueError(f"energy cap must be positive, got {self.energy_cap}")

    @property
    def kind(self) -> str:
        return self.system.kind

    @property
    def speed_cap(self) -> float:
        """|v| on the energy face, sqrt(2c/m)"""
        return _speed(self.energy_cap, self.system.params.m)

    def contains(self, t: float, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        return (plane_f(t, rho, self.system.frame) >= 0.0) & (self.system.kinetic_energy(v) <= self.energy_cap)


@dataclass(frozen=True)
class BoundaryStratum:
    t: float
    position: np.ndarray
    velocity: np.ndarray
    face: str
    classification: str
    margin: float  # the decisive derivative (f', f'', T' or T'')


@dataclass
class BoundaryClassification:
    """Sampled boundary of a block: one row per sample plus the reduced summary"""
    table: pd.DataFrame
    summary: ClassificationSummary
    curve_points: int

    def __len__(self) -> int:
        return len(self.table)

    def strata(self) -> List[BoundaryStratum]:
        rows = self.table
        pos = rows[["rx", "ry", "rz"]].to_numpy()
        vel = rows[["vx", "vy", "vz"]].to_numpy()
        return [
            BoundaryStratum(float(t), pos[i], vel[i], face, cls, float(margin))
            for i, (t, face, cls, margin) in enumerate(
                zip(rows["t"], rows["face"], rows["classification"], rows["margin"])
            )
        ]

    def egress(self) -> pd.DataFrame:
        return self.table[self.table["classification"].isin(EGRESS_CLASSES)]

    def violations(self) -> pd.DataFrame:
        return self.table[self.table["classification"] == INTERNAL_TANGENCY_VIOLATION]


@dataclass
class RotationCertificate:
    """Certified pair (b, c): the tangency lemma holds for every rotation with |omega|, |omega'| <= b"""
    rotation_bound: float
    energy_cap: float
    certified: bool
    energy: EnergyCapReport
    tangency: ConditionReport
    evaluations: int


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _speed(c: float, m: float) -> float:
    return float(np.sqrt(2.0 * c / m))


def _sample(t: float, rho: np.ndarray, v: np.ndarray) -> SamplePoint:
    return SamplePoint(
        t=float(t),
        position=np.asarray(rho, dtype=float).tolist(),
        velocity=np.asarray(v, dtype=float).tolist(),
    )


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _horizontal(signal: PeriodicSignal) -> PeriodicSignal:
    constant = signal.constant.copy()
    constant[2] = 0.0
    terms = tuple(term for term in signal.terms if term.component != 2)
    return PeriodicSignal(period=signal.period, constant=constant, terms=terms)


def _plane_curve(surface: Surface, vertical: np.ndarray, n_theta: int) -> np.ndarray:
    """Points of {s = 0, vertical . rho = 0} at equally spaced angles; vertical may be batched"""
    e1, e2 = orthonormal_complement(vertical)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    cos, sin = np.cos(theta)[:, None], np.sin(theta)[:, None]
    d = cos * e1[..., None, :] + sin * e2[..., None, :]
    return surface.radial_point(d)


def _tangency_line(
    grad: np.ndarray, vertical: np.ndarray, rhs: np.ndarray, speed: float, n_alpha: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Velocities with grad . v = 0, vertical . v = rhs and |v| <= speed.

    The set is a segment v_p + alpha * k with v_p the minimum-norm solution and
    k along grad x vertical. Returns samples (..., n_alpha, 3) and a mask of the
    points where the segment is non-empty.
    """
    ge = np.sum(grad * vertical, axis=-1)
    gg = np.sum(grad * grad, axis=-1)
    det = gg - ge ** 2
    v_p = rhs[..., None] * (gg[..., None] * vertical - ge[..., None] * grad) / det[..., None]
    k = _unit(np.cross(grad, vertical))
    room = speed ** 2 - np.sum(v_p * v_p, axis=-1)
    valid = room >= 0.0
    half = np.sqrt(np.clip(room, 0.0, None))
    s = np.linspace(-1.0, 1.0, n_alpha)
    v = v_p[..., None, :] + (half[..., None] * s)[..., None] * k[..., None, :]
    return v, valid


def _rotation_sup(system: MechanicalSystem) -> Tuple[float, float]:
    signal = system.frame.omega_signal
    return signal.sup_norm(), signal.derivative_signal().sup_norm()


# ---------------------------------------------------------------------------
# pendulum hypotheses
# ---------------------------------------------------------------------------

def check_magnetic_bound(
    forcing: ForcingBundle, c: float, params: PendulumParams, resolution: Optional[int] = None
) -> ConditionReport:
    """([v, B(t)], e_z) < mg for every horizontal |v| <= sqrt(2c/m).

    The pairing is linear in v, so its maximum over directions is
    sqrt(2c/m) * |B_horizontal(t)|; only t is sampled.
    """
    if not c > 0:
        raise ValueError(f"energy cap must be positive, got {c}")
    n = resolution or settings.SUP_NORM_SAMPLES
    speed = _speed(c, params.m)
    weight = params.m * params.g
    horizontal = _horizontal(forcing.B)
    grid_max, sup = horizontal.sup_norm_bracket(n)
    lift = speed * sup
    margin = weight - lift

    worst = None
    if sup > 0:
        times = np.arange(n) * (forcing.period / n)
        fields = horizontal.value(times)
        j = int(np.argmax(np.linalg.norm(fields, axis=-1)))
        b = fields[j]
        u = np.array([b[1], -b[0], 0.0]) / np.linalg.norm(b)
        worst = _sample(times[j], np.cross(E_Z, u), speed * u)

    logger.info(f"Magnetic bound: lift {lift:.6g} vs weight {weight:.6g}, margin {margin:.6g}")
    return ConditionReport(
        name="magnetic_bound",
        satisfied=bool(margin > 0),
        margin=float(margin),
        worst_case=worst,
        resolution={"time_samples": n},
        details={"max_gyroscopic_lift": float(lift), "weight": float(weight), "grid_lift": float(speed * grid_max)},
    )


def friction_threshold(forcing: ForcingBundle, c: float, params: PendulumParams) -> float:
    """mu_min = sqrt(m/2c) * (sup|F| + mg)"""
    if not c > 0:
        raise ValueError(f"energy cap must be positive, got {c}")
    return float(np.sqrt(params.m / (2.0 * c)) * (forcing.F.sup_norm() + params.m * params.g))


def check_friction(forcing: ForcingBundle, c: float, params: PendulumParams) -> ConditionReport:
    threshold = friction_threshold(forcing, c, params)
    margin = params.mu - threshold
    return ConditionReport(
        name="friction_threshold",
        satisfied=bool(margin > 0),
        margin=float(margin),
        resolution={"time_samples": settings.SUP_NORM_SAMPLES},
        details={"mu": params.mu, "threshold": threshold, "sup_F": forcing.F.sup_norm()},
    )


# ---------------------------------------------------------------------------
# energy cap
# ---------------------------------------------------------------------------

def _driving_force_max(system: MechanicalSystem, resolution: Optional[int]) -> Tuple[float, float, np.ndarray, np.ndarray]:
    """Largest tangential part of the velocity-free force G(t, rho) over sampled t and surface points"""
    r = resolution or settings.BOUNDARY_RESOLUTION
    points = system.surface.radial_point(fibonacci_directions(max(400, 50 * r)))
    normals = system.surface.normal(points)
    zero = np.zeros_like(points)
    best, worst_t, worst_rho, worst_dir = -1.0, 0.0, points[0], np.zeros(3)
    for t in np.arange(4 * r) * (system.period / (4 * r)):
        force = system.applied_force(t, points, zero)
        tangential = force - np.sum(force * normals, axis=-1, keepdims=True) * normals
        mags = np.linalg.norm(tangential, axis=-1)
        j = int(np.argmax(mags))
        if mags[j] > best:
            best, worst_t, worst_rho = float(mags[j]), float(t), points[j]
            worst_dir = tangential[j] / mags[j] if mags[j] > 0 else np.zeros(3)
    return best, worst_t, worst_rho, worst_dir


def _sweep_energy_cap(driving_max: float, params: PendulumParams, safety: float) -> Tuple[float, int, float]:
    """Smallest grid value c with dT/dt < 0 on T = c / safety; returns (c, steps, threshold)"""
    if params.mu <= 0:
        raise SweepExhaustedError(
            "sweep exhausted: no dissipation (mu = 0)", {"mu": params.mu, "driving_force_max": driving_max}
        )
    start, ratio, stop = settings.ENERGY_SWEEP_START, settings.ENERGY_SWEEP_RATIO, settings.ENERGY_SWEEP_MAX
    n = int(np.floor(np.log(stop / start) / np.log(ratio))) + 1
    caps = start * ratio ** np.arange(n)
    speeds = np.sqrt(2.0 * (caps / safety) / params.m)
    # sup over tangent |v| = V of v . G is V |P_T G|; gyroscopic terms do no work
    rates = -params.mu * speeds ** 2 + speeds * driving_max
    hits = np.nonzero(rates < 0)[0]
    if hits.size == 0:
        raise SweepExhaustedError(
            "sweep exhausted: friction too small for the searched energy range",
            {"mu": params.mu, "driving_force_max": driving_max, "max_cap": float(caps[-1])},
        )
    threshold = params.m * driving_max ** 2 / (2.0 * params.mu ** 2)
    return float(caps[hits[0]]), int(hits[0]) + 1, float(threshold)


def uniform_driving_force(surface: Surface, params: PendulumParams, b: float) -> float:
    """Bound on |G| over every rotation with |omega|, |omega'| <= b: m (g + b R + b^2 R)"""
    radius = surface.max_radius
    return params.m * (params.g + b * radius + b * b * radius)


def uniform_energy_cap(
    surface: Surface, params: PendulumParams, b: float, safety: Optional[float] = None
) -> EnergyCapReport:
    safety = safety or settings.ENERGY_SAFETY
    driving = uniform_driving_force(surface, params, b)
    cap, steps, threshold = _sweep_energy_cap(driving, params, safety)
    return EnergyCapReport(
        energy_cap=cap, friction=params.mu, driving_force_max=driving, threshold=threshold,
        safety_factor=safety, sweep_steps=steps, uniform_bound=b,
    )


def find_energy_cap(
    system: MechanicalSystem,
    rotation_bound: Optional[float] = None,
    resolution: Optional[int] = None,
    safety: Optional[float] = None,
) -> EnergyCapReport:
    """Certified c with dT/dt < 0 on the energy face, found by a geometric sweep.

    With ``rotation_bound`` the driving force is bounded uniformly over all
    rotation laws with |omega|, |omega'| <= b; otherwise it is sampled from the
    system's own rotation law.
    """
    if rotation_bound is not None:
        report = uniform_energy_cap(system.surface, system.params, rotation_bound, safety)
        logger.info(f"Uniform energy cap for b={rotation_bound:.6g}: c = {report.energy_cap:.6g}")
        return report

    safety = safety or settings.ENERGY_SAFETY
    started = time.perf_counter()
    driving, t, rho, direction = _driving_force_max(system, resolution)
    cap, steps, threshold = _sweep_energy_cap(driving, system.params, safety)
    worst = _sample(t, rho, _speed(cap, system.params.m) * direction)
    logger.info(
        f"Energy cap certified: c = {cap:.6g} (threshold {threshold:.6g}, {steps} sweep steps, "
        f"{time.perf_counter() - started:.2f}s)"
    )
    return EnergyCapReport(
        energy_cap=cap, friction=system.params.mu, driving_force_max=driving, threshold=threshold,
        safety_factor=safety, sweep_steps=steps, worst_case=worst,
    )


def required_friction(system: MechanicalSystem, c: float, b: Optional[float] = None,
                      resolution: Optional[int] = None) -> float:
    """Smallest mu with dT/dt < 0 on T = c"""
    if not c > 0:
        raise ValueError(f"energy cap must be positive, got {c}")
    if b is not None:
        driving = uniform_driving_force(system.surface, system.params, b)
    else:
        driving = _driving_force_max(system, resolution)[0]
    return float(driving * np.sqrt(system.params.m / (2.0 * c)))


# ---------------------------------------------------------------------------
# tangency lemma
# ---------------------------------------------------------------------------

def check_tangency_lemma(
    system: MechanicalSystem, b: Optional[float], c: float, resolution: Optional[int] = None
) -> ConditionReport:
    """f'' < 0 on the tangency set {s = 0, f = 0, s' = 0, f' = 0, T <= c} of the system's own motion"""
    r = resolution or settings.BOUNDARY_RESOLUTION
    n_t, n_theta, n_alpha = r, 2 * r, 2 * (r // 2) + 1
    speed = _speed(c, system.params.m)
    frame = system.frame
    sup_omega, sup_omega_dot = _rotation_sup(system)
    within = b is None or (sup_omega <= b and sup_omega_dot <= b)
    if not within:
        logger.warning(f"Rotation exceeds b={b}: sup|omega|={sup_omega:.6g}, sup|omega'|={sup_omega_dot:.6g}")

    worst_value, worst, count = -np.inf, None, 0
    for t in np.arange(n_t) * (system.period / n_t):
        e, w = frame.vertical(t), frame.omega(t)
        rho = _plane_curve(system.surface, e, n_theta)
        rhs = -(np.cross(w, rho) @ e)
        v, valid = _tangency_line(system.surface.gradient(rho), e, rhs, speed, n_alpha)
        if not np.any(valid):
            continue
        rho_s = np.repeat(rho[valid], n_alpha, axis=0)
        v_s = v[valid].reshape(-1, 3)
        accel = system.acceleration(t, rho_s, v_s)
        fdd = plane_f_ddot(t, rho_s, v_s, accel, frame)
        count += fdd.size
        j = int(np.argmax(fdd))
        if fdd[j] > worst_value:
            worst_value, worst = float(fdd[j]), _sample(t, rho_s[j], v_s[j])

    if count == 0:
        raise EmptyTangencySetError("tangency set is empty: no tangent velocity within the energy cap")
    logger.info(f"Tangency lemma: max f'' = {worst_value:.6g} over {count} samples")
    return ConditionReport(
        name="tangency_lemma",
        satisfied=bool(worst_value < 0),
        margin=-worst_value,
        worst_case=worst,
        resolution={"time_samples": n_t, "curve_samples": n_theta, "velocity_samples": n_alpha, "total": count},
        details={
            "max_f_ddot": worst_value,
            "rotation_bound": b,
            "sup_omega": sup_omega,
            "sup_omega_dot": sup_omega_dot,
            "omega_within_bound": bool(b is None or sup_omega <= b),
            "omega_dot_within_bound": bool(b is None or sup_omega_dot <= b),
        },
    )


def check_tangency_uniform(
    surface: Surface, params: PendulumParams, b: float, c: float, resolution: Optional[int] = None
) -> ConditionReport:
    """f'' < 0 on the tangency set for every rotation with |omega|, |omega'| <= b.

    The body-frame vertical is sampled over the sphere and omega over directions
    times magnitudes {0, b/2, b}. f'' is affine in omega' with slope
    (e . n)(rho x n), so its maximum over |omega'| <= b is added in closed form.
    """
    r = resolution or settings.BOUNDARY_RESOLUTION
    n_alpha = 5
    m, g, mu = params.m, params.g, params.mu
    speed = _speed(c, m)

    verticals = fibonacci_directions(4 * r)
    rho = _plane_curve(surface, verticals, r)  # (E, n_theta, 3)
    e = np.broadcast_to(verticals[:, None, :], rho.shape)
    grad = surface.gradient(rho)
    normal = _unit(grad)
    directions = fibonacci_directions(r)
    omegas = np.concatenate([np.zeros((1, 3)), 0.5 * b * directions, b * directions])

    w4 = omegas[None, None, :, :]
    rhs = -np.sum(e[:, :, None, :] * np.cross(w4, rho[:, :, None, :]), axis=-1)
    v, valid = _tangency_line(grad[:, :, None, :], e[:, :, None, :], rhs, speed, n_alpha)

    r5, w5, e5 = rho[:, :, None, None, :], omegas[None, None, :, None, :], e[:, :, None, None, :]
    centripetal = np.cross(w5, np.cross(w5, r5))
    coriolis = 2.0 * np.cross(w5, v)
    applied = -m * g * e5 - m * centripetal - m * coriolis - mu * v
    accel, _ = constrained_acceleration(surface, np.broadcast_to(r5, v.shape), v, applied, m)
    fdd = np.sum(e5 * (accel + centripetal + coriolis), axis=-1)
    euler = b * np.abs(np.sum(e * normal, axis=-1)) * np.linalg.norm(np.cross(rho, normal), axis=-1)
    fdd = fdd + euler[:, :, None, None]
    fdd = np.where(valid[..., None], fdd, -np.inf)

    count = int(np.count_nonzero(valid)) * n_alpha
    if count == 0:
        raise EmptyTangencySetError("tangency set is empty for every sampled rotation")
    idx = np.unravel_index(int(np.argmax(fdd)), fdd.shape)
    worst_value = float(fdd[idx])
    worst = _sample(0.0, rho[idx[0], idx[1]], v[idx])
    logger.debug(f"Uniform tangency check b={b:.6g}, c={c:.6g}: max f'' = {worst_value:.6g}")
    return ConditionReport(
        name="tangency_uniform",
        satisfied=bool(worst_value < 0),
        margin=-worst_value,
        worst_case=worst,
        resolution={"verticals": len(verticals), "curve_samples": r, "omega_samples": len(omegas),
                    "velocity_samples": n_alpha, "total": count},
        details={"rotation_bound": b, "energy_cap": c, "worst_vertical": verticals[idx[0]].tolist(),
                 "worst_omega": omegas[idx[2]].tolist()},
    )


def certify_rotation_bound(
    surface: Surface,
    params: PendulumParams,
    resolution: Optional[int] = None,
    b_max: float = 1e3,
    iterations: int = 12,
    safety: Optional[float] = None,
) -> RotationCertificate:
    """Largest b (bisection) for which the uniform lemma holds with the uniform energy cap for b"""
    evaluations = 0

    def attempt(b: float) -> Tuple[bool, EnergyCapReport, ConditionReport]:
        nonlocal evaluations
        evaluations += 1
        energy = uniform_energy_cap(surface, params, b, safety)
        tangency = check_tangency_uniform(surface, params, b, energy.energy_cap, resolution)
        return tangency.satisfied, energy, tangency

    ok, energy, tangency = attempt(0.0)
    if not ok:
        logger.warning("Tangency lemma fails even for a motionless surface")
        return RotationCertificate(0.0, energy.energy_cap, False, energy, tangency, evaluations)
    best = (0.0, energy, tangency)

    lo, hi = 0.0, 1.0
    while True:
        ok, energy, tangency = attempt(hi)
        if not ok:
            break
        lo, best = hi, (hi, energy, tangency)
        hi *= 2.0
        if hi > b_max:
            logger.warning(f"Rotation bound search reached b_max={b_max}")
            return RotationCertificate(lo, best[1].energy_cap, True, best[1], best[2], evaluations)

    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        ok, energy, tangency = attempt(mid)
        if ok:
            lo, best = mid, (mid, energy, tangency)
        else:
            hi = mid

    b, energy, tangency = best
    logger.info(f"Rotation bound certified: b = {b:.6g}, c = {energy.energy_cap:.6g} ({evaluations} checks)")
    return RotationCertificate(b, energy.energy_cap, True, energy, tangency, evaluations)


# ---------------------------------------------------------------------------
# boundary classification
# ---------------------------------------------------------------------------

def _kinetic_second_derivative(system: MechanicalSystem, t: float, rho: np.ndarray, v: np.ndarray,
                               h: float = 1e-4) -> np.ndarray:
    cfg = IntegratorSettings(step=h)
    _, v_plus = advance(system, t, rho, v, h, cfg)
    _, v_minus = advance(system, t, rho, v, -h, cfg)
    kin = system.kinetic_energy
    return (kin(v_plus) - 2.0 * kin(v) + kin(v_minus)) / h ** 2


def _plane_face_samples(block: Block, t: float, n_theta: int, n_radii: int, n_angles: int, n_alpha: int):
    system, speed = block.system, block.speed_cap
    surface, frame = system.surface, system.frame
    e, w = frame.vertical(t), frame.omega(t)
    rho = _plane_curve(surface, e, n_theta)
    grad = surface.gradient(rho)
    k = _unit(np.cross(grad, e))
    j = np.cross(_unit(grad), k)

    phi = 2.0 * np.pi * np.arange(n_angles) / n_angles
    unit = np.cos(phi)[None, :, None] * k[:, None, :] + np.sin(phi)[None, :, None] * j[:, None, :]
    radii = speed * np.arange(1, n_radii + 1) / n_radii
    disk = (radii[None, :, None, None] * unit[:, None, :, :]).reshape(n_theta, n_radii * n_angles, 3)
    disk = np.concatenate([np.zeros((n_theta, 1, 3)), disk], axis=1)

    rhs = -(np.cross(w, rho) @ e)
    line, valid = _tangency_line(grad, e, rhs, speed, n_alpha)
    line = np.where(valid[:, None, None], line, 0.0)

    velocities = np.concatenate([disk, line], axis=1)
    positions = np.broadcast_to(rho[:, None, :], velocities.shape)
    return positions.reshape(-1, 3), velocities.reshape(-1, 3)


def _energy_face_samples(block: Block, t: float, directions: np.ndarray, n_angles: int):
    system, speed = block.system, block.speed_cap
    e = system.frame.vertical(t)
    cap = directions[directions @ e > 1e-9]
    rho = system.surface.radial_point(cap)
    e1, e2 = orthonormal_complement(system.surface.normal(rho))
    phi = 2.0 * np.pi * np.arange(n_angles) / n_angles
    v = speed * (np.cos(phi)[None, :, None] * e1[:, None, :] + np.sin(phi)[None, :, None] * e2[:, None, :])
    positions = np.broadcast_to(rho[:, None, :], v.shape)
    return positions.reshape(-1, 3), v.reshape(-1, 3)


def classify_boundary(block: Block, resolution: Optional[int] = None) -> BoundaryClassification:
    """Classify sampled boundary points of N_c by the derivatives of the active face function.

    Plane face (f = 0): f' decides; inside the band |f'| <= tol the sign of f''
    separates external tangency from an internal tangency violation. Energy face
    (T = c, f > 0): T' decides, T'' (finite differences of the flow) inside the
    band. Corners (f = 0, T = c) are classified by the plane face.
    """
    started = time.perf_counter()
    r = resolution or settings.BOUNDARY_RESOLUTION
    n_t, n_theta, n_radii, n_angles = r, 2 * r, max(2, r // 6), r
    n_alpha = 2 * (r // 4) + 1
    system, c, speed = block.system, block.energy_cap, block.speed_cap
    m, frame = system.params.m, system.frame

    sup_omega, sup_omega_dot = _rotation_sup(system)
    radius = system.surface.max_radius
    vel_scale = speed + sup_omega * radius
    acc_scale = system.params.g + vel_scale ** 2 / radius + sup_omega_dot * radius
    tol_v = settings.TANGENCY_TOL * max(vel_scale, 1e-12)
    tol_a = settings.TANGENCY_TOL * acc_scale
    tol_rate = settings.TANGENCY_TOL * m * max(speed, 1e-12) * acc_scale
    cap_directions = fibonacci_directions(8 * r)

    chunks: List[Dict[str, np.ndarray]] = []
    for t in np.arange(n_t) * (system.period / n_t):
        e, w = frame.vertical(t), frame.omega(t)

        rho, v = _plane_face_samples(block, t, n_theta, n_radii, n_angles, n_alpha)
        accel = system.acceleration(t, rho, v)
        first = plane_f_dot(t, rho, v, frame)
        second = plane_f_ddot(t, rho, v, accel, frame)
        band = np.abs(first) <= tol_v
        cls = np.where(
            first < -tol_v, STRICT_EGRESS,
            np.where(first > tol_v, INGRESS, np.where(second < -tol_a, EXTERNAL_TANGENCY, INTERNAL_TANGENCY_VIOLATION)),
        )
        corner = np.linalg.norm(v, axis=-1) >= speed * (1.0 - 1e-12)
        chunks.append({
            "t": np.full(len(rho), t), "rho": rho, "v": v,
            "face": np.where(corner, CORNER, PLANE_FACE), "classification": cls,
            "first_derivative": first, "second_derivative": second,
            "margin": np.where(band, second, first), "band": band,
            "expected_egress": v @ e <= -(np.cross(w, rho) @ e),
        })

        rho, v = _energy_face_samples(block, t, cap_directions, n_angles)
        accel = system.acceleration(t, rho, v)
        first = m * np.sum(v * accel, axis=-1)
        band = np.abs(first) <= tol_rate
        second = np.full(len(rho), np.nan)
        if np.any(band):
            second[band] = _kinetic_second_derivative(system, t, rho[band], v[band])
        cls = np.where(
            first < -tol_rate, INGRESS,
            np.where(first > tol_rate, STRICT_EGRESS,
                     np.where(second < -tol_rate, EXTERNAL_TANGENCY, INTERNAL_TANGENCY_VIOLATION)),
        )
        chunks.append({
            "t": np.full(len(rho), t), "rho": rho, "v": v,
            "face": np.full(len(rho), ENERGY_FACE), "classification": cls,
            "first_derivative": first, "second_derivative": second,
            "margin": np.where(band, second, first), "band": band,
            "expected_egress": np.zeros(len(rho), dtype=bool),
        })

    rho = np.concatenate([ch["rho"] for ch in chunks])
    v = np.concatenate([ch["v"] for ch in chunks])
    table = pd.DataFrame({
        "t": np.concatenate([ch["t"] for ch in chunks]),
        "rx": rho[:, 0], "ry": rho[:, 1], "rz": rho[:, 2],
        "vx": v[:, 0], "vy": v[:, 1], "vz": v[:, 2],
        **{col: np.concatenate([ch[col] for ch in chunks]) for col in STRATUM_COLUMNS[7:]},
    })[STRATUM_COLUMNS]

    summary = _summarize(table, {
        "time_samples": n_t, "curve_samples": n_theta, "disk_radii": n_radii, "angles": n_angles,
        "tangency_line_samples": n_alpha, "cap_directions": len(cap_directions),
        "tol_velocity": tol_v, "tol_acceleration": tol_a, "tol_energy_rate": tol_rate,
    })
    if summary.violations:
        logger.warning(f"Boundary classification found {summary.violations} internal tangency violations")
    logger.info(
        f"Boundary classified: {summary.total} samples, {summary.egress_samples} egress, "
        f"match rate {summary.analytic_match_rate:.6f} ({time.perf_counter() - started:.2f}s)"
    )
    return BoundaryClassification(table=table, summary=summary, curve_points=n_t * n_theta)


def _summarize(table: pd.DataFrame, resolution: dict) -> ClassificationSummary:
    counts: Dict[str, Dict[str, int]] = {}
    for (face, cls), n in table.groupby(["face", "classification"]).size().items():
        counts.setdefault(face, {})[cls] = int(n)

    is_egress = table["classification"].isin(EGRESS_CLASSES)
    decided = ~table["band"]
    matches = (is_egress == table["expected_egress"])[decided]
    plane_band = table[table["band"] & (table["face"] != ENERGY_FACE)]
    energy = table[table["face"] == ENERGY_FACE]
    return ClassificationSummary(
        total=len(table),
        counts=counts,
        violations=int((table["classification"] == INTERNAL_TANGENCY_VIOLATION).sum()),
        egress_samples=int(is_egress.sum()),
        analytic_match_rate=float(matches.mean()) if len(matches) else 1.0,
        band_samples=int(table["band"].sum()),
        min_plane_margin=float(-plane_band["second_derivative"].max()) if len(plane_band) else 0.0,
        max_energy_rate=float(energy["first_derivative"].max()) if len(energy) else 0.0,
        resolution=resolution,
    )


def check_egress_fibres(block: Block, resolution: Optional[int] = None) -> ConditionReport:
    """At every point of {f = 0, s = 0} the fibre {v tangent: T <= c, f' <= 0} is a non-empty (half-)disk.

    Non-empty with interior iff V |P_T e| - e . (omega x rho) > 0.
    """
    r = resolution or settings.BOUNDARY_RESOLUTION
    system, speed = block.system, block.speed_cap
    frame, surface = system.frame, system.surface
    worst_value, worst = np.inf, None
    for t in np.arange(r) * (system.period / r):
        e, w = frame.vertical(t), frame.omega(t)
        rho = _plane_curve(surface, e, 2 * r)
        normal = surface.normal(rho)
        tangential = e - (normal @ e)[:, None] * normal
        reach = speed * np.linalg.norm(tangential, axis=-1)
        margin = reach - np.cross(w, rho) @ e
        j = int(np.argmin(margin))
        if margin[j] < worst_value:
            direction = -tangential[j] / max(np.linalg.norm(tangential[j]), 1e-300)
            worst_value, worst = float(margin[j]), _sample(t, rho[j], speed * direction)
    return ConditionReport(
        name="egress_fibres",
        satisfied=bool(worst_value > 0),
        margin=worst_value,
        worst_case=worst,
        resolution={"time_samples": r, "curve_samples": 2 * r},
    )


def egress_topology(
    block: Block,
    classification: Optional[BoundaryClassification] = None,
    fibres: Optional[ConditionReport] = None,
    resolution: Optional[int] = None,
) -> TopologyReport:
    """chi(N_c) - chi(N_c^++) from the verified product structure.

    N_c is a closed disk bundle over a contractible cap (chi = 1); the egress set
    is the closed curve {f = 0, s = 0} times a (half-)disk of velocities (chi = 0).
    The structure is verified by sampling, homology is never computed.
    """
    if classification is None:
        classification = classify_boundary(block, resolution)
    if fibres is None:
        fibres = check_egress_fibres(block, resolution)
    summary = classification.summary

    problems = []
    if summary.violations:
        problems.append(f"{summary.violations} internal tangency violations")
    if summary.analytic_match_rate < 1.0:
        problems.append(f"egress samples differ from the analytic set (match rate {summary.analytic_match_rate:.6f})")
    energy_egress = sum(summary.counts.get(ENERGY_FACE, {}).get(cls, 0) for cls in EGRESS_CLASSES)
    if energy_egress:
        problems.append(f"{energy_egress} egress samples on the energy face")
    if not fibres.satisfied:
        problems.append(f"degenerate egress fibre (margin {fibres.margin:.6g})")
    if summary.egress_samples == 0:
        problems.append("no egress samples")
    if problems:
        raise StructureMismatchError("structure mismatch: " + "; ".join(problems), {"summary": summary.model_dump()})

    return TopologyReport(
        chi_block=1,
        chi_egress=0,
        difference=1,
        egress_curve_points=classification.curve_points,
        min_fibre_margin=fibres.margin,
    )


# ---------------------------------------------------------------------------
# forward invariance and the non-convexity witness
# ---------------------------------------------------------------------------

def sample_block_interior(block: Block, n: int, rng: np.random.Generator, t: float = 0.0,
                          speed_fraction: float = 0.999) -> Tuple[np.ndarray, np.ndarray]:
    """Random states with f > 0 and T < c at time t"""
    system = block.system
    e = system.frame.vertical(t)
    d = _unit(rng.normal(size=(n, 3)))
    d = np.where((d @ e)[:, None] < 0, -d, d)
    d = _unit(d + 0.1 * e)
    rho = system.surface.radial_point(d)
    e1, e2 = orthonormal_complement(system.surface.normal(rho))
    radius = speed_fraction * block.speed_cap * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    v = radius[:, None] * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    return rho, v


def check_forward_invariance(
    block: Block,
    n_starts: int = 100,
    periods: float = 5.0,
    seed: Optional[int] = None,
    cfg: Optional[IntegratorSettings] = None,
) -> ConditionReport:
    """Random starts inside N_c never leave through T = c and leave f >= 0 only with f' < 0"""
    system = block.system
    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    cfg = cfg or IntegratorSettings.for_period(system.period)
    started = time.perf_counter()
    rho, v = sample_block_interior(block, n_starts, rng)
    scan = exit_scan(system, rho, v, 0.0, periods * system.period, cfg, block.energy_cap)

    energy_exits = int(np.count_nonzero(scan.exit_kind == EXIT_ENERGY))
    plane = np.nonzero(scan.exit_kind == EXIT_PLANE)[0]
    rates = np.array([
        float(plane_f_dot(scan.exit_time[i], scan.exit_position[i], scan.exit_velocity[i], system.frame))
        for i in plane
    ])
    not_strict = int(np.count_nonzero(rates >= 0)) if rates.size else 0
    margin = float(block.energy_cap - np.max(scan.max_kinetic))
    logger.info(
        f"Forward invariance: {n_starts} starts over {periods} periods, {plane.size} plane exits, "
        f"{energy_exits} energy exits ({time.perf_counter() - started:.2f}s)"
    )
    worst = None
    if energy_exits:
        i = int(np.nonzero(scan.exit_kind == EXIT_ENERGY)[0][0])
        worst = _sample(scan.exit_time[i], scan.exit_position[i], scan.exit_velocity[i])
    return ConditionReport(
        name="forward_invariance",
        satisfied=bool(energy_exits == 0 and not_strict == 0),
        margin=margin,
        worst_case=worst,
        resolution={"starts": n_starts, "periods": periods, "step": cfg.step},
        details={
            "plane_exits": int(plane.size),
            "energy_exits": energy_exits,
            "non_strict_plane_exits": not_strict,
            "survivors": int(np.count_nonzero(scan.survived)),
            "min_plane": float(np.min(scan.min_plane)),
        },
    )


def demo_nonconvexity(
    B: Sequence[float],
    params: PendulumParams,
    speed_cap: float = 1e3,
    arc_duration: float = 0.01,
    step: float = 1e-4,
) -> WitnessReport:
    """Internal tangency of the frictionless, unforced pendulum in a constant field B not parallel to e_z.

    At rho0 on the equator with horizontal v0, the vertical acceleration is
    (-mg + ([v0, B], e_z)) / m; the pairing peaks at |v0| |B_horizontal| along
    u = (B_y, -B_x, 0) / |B_horizontal|, so any |v0| > mg / |B_horizontal| lifts off.
    """
    if params.mu != 0:
        raise ValueError(f"the witness is built for the frictionless system, got mu={params.mu}")
    B = np.asarray(B, dtype=float)
    weight = params.m * params.g
    horizontal = float(np.hypot(B[0], B[1]))
    required = weight / horizontal if horizontal > 0 else np.inf
    speed = 2.0 * required
    if not speed <= speed_cap:
        raise WitnessNotFoundError(
            f"no internal tangency witness up to speed {speed_cap:g}",
            {"B": B.tolist(), "horizontal_field": horizontal},
        )

    u = np.array([B[1], -B[0], 0.0]) / horizontal
    rho0, v0 = np.cross(E_Z, u), speed * u
    forcing = ForcingBundle(
        PeriodicSignal.zero(3, 1.0), PeriodicSignal.constant_vector(B, 1.0), PeriodicSignal.zero(3, 1.0)
    )
    system = PendulumSystem(params, forcing)
    lift = float(np.cross(v0, B)[2])
    vertical_accel = float(system.acceleration(0.0, rho0, v0)[2])

    trajectory, _ = integrate_until(State(0.0, rho0, v0), system, IntegratorSettings(step=step), arc_duration)
    frame = trajectory.to_dataframe()
    arc = frame["f"].to_numpy()[1:]
    if not np.all(arc > 0):
        raise WitnessNotFoundError("integrated arc does not rise above the equator", {"min_f": float(arc.min())})
    logger.info(f"Non-convexity witness: |v0|={speed:.6g}, lift {lift:.6g} > weight {weight:.6g}")
    return WitnessReport(
        position=rho0.tolist(),
        velocity=v0.tolist(),
        speed=speed,
        required_speed=required,
        gyroscopic_lift=lift,
        weight=weight,
        vertical_acceleration=vertical_accel,
        arc_duration=arc_duration,
        arc_min_plane=float(arc.min()),
        arc_samples=int(arc.size),
    )
