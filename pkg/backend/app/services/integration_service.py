"""
Integration Service
Explicit RK4 on the ambient second-order system followed by projection onto
the constraint manifold (position by Newton along grad s, velocity onto the
tangent plane). Events on the block faces f = 0 and T = c are localized by
bisection over partial steps.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import EventLocalizationError, ManifoldError
from app.services.dynamics_service import MechanicalSystem
from app.services.geometry_service import State, plane_f

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t", "rx", "ry", "rz", "vx", "vy", "vz", "T", "f", "s_res", "tan_res"]

PLANE_EVENT = "f"
ENERGY_EVENT = "energy"


@dataclass(frozen=True)
class IntegratorSettings:
    step: float
    projection_tol: float = settings.PROJECTION_TOL
    max_projection_iter: int = settings.MAX_PROJECTION_ITER
    event_tol: float = settings.EVENT_TIME_TOL
    event_value_tol: float = 1e-9

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step size must be positive, got {self.step}")
        if not (self.projection_tol > 0 and self.event_tol > 0 and self.event_value_tol > 0):
            raise ValueError("tolerances must be positive")

    @classmethod
    def for_period(cls, period: float, steps_per_period: Optional[int] = None, **overrides) -> "IntegratorSettings":
        n = steps_per_period or settings.STEPS_PER_PERIOD
        return cls(step=period / n, **overrides)


@dataclass
class EventRecord:
    t: float
    kind: str  # "f" or "energy"
    direction: str  # "outward" leaves the block, "inward" enters it
    state: State

    def to_dict(self) -> dict:
        return {"t": self.t, "kind": self.kind, "direction": self.direction}


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    positions: List[np.ndarray] = field(default_factory=list)
    velocities: List[np.ndarray] = field(default_factory=list)
    kinetic: List[float] = field(default_factory=list)
    plane: List[float] = field(default_factory=list)
    s_residual: List[float] = field(default_factory=list)
    tangency_residual: List[float] = field(default_factory=list)

    def append(self, system: MechanicalSystem, state: State):
        s_res, tan_res = system.surface.residuals(state.position, state.velocity)
        self.times.append(float(state.t))
        self.positions.append(state.position.copy())
        self.velocities.append(state.velocity.copy())
        self.kinetic.append(float(system.kinetic_energy(state.velocity)))
        self.plane.append(float(plane_f(state.t, state.position, system.frame)))
        self.s_residual.append(float(s_res))
        self.tangency_residual.append(float(tan_res))

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_state(self) -> State:
        return State(self.times[-1], self.positions[-1].copy(), self.velocities[-1].copy())

    def to_dataframe(self) -> pd.DataFrame:
        pos = np.asarray(self.positions).reshape(-1, 3)
        vel = np.asarray(self.velocities).reshape(-1, 3)
        data = np.column_stack([
            self.times, pos, vel, self.kinetic, self.plane, self.s_residual, self.tangency_residual
        ])
        return pd.DataFrame(data, columns=TRAJECTORY_COLUMNS)


def _rk4(system: MechanicalSystem, t: float, rho: np.ndarray, v: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    a1 = system.acceleration(t, rho, v)
    r2, v2 = rho + 0.5 * h * v, v + 0.5 * h * a1
    a2 = system.acceleration(t + 0.5 * h, r2, v2)
    r3, v3 = rho + 0.5 * h * v2, v + 0.5 * h * a2
    a3 = system.acceleration(t + 0.5 * h, r3, v3)
    r4, v4 = rho + h * v3, v + h * a3
    a4 = system.acceleration(t + h, r4, v4)
    rho_next = rho + (h / 6.0) * (v + 2.0 * v2 + 2.0 * v3 + v4)
    v_next = v + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return rho_next, v_next


def _project(system: MechanicalSystem, rho: np.ndarray, v: np.ndarray, cfg: IntegratorSettings):
    rho = system.surface.project(rho, cfg.projection_tol, cfg.max_projection_iter)
    return rho, system.surface.project_velocity(rho, v)


def advance(system: MechanicalSystem, t: float, rho: np.ndarray, v: np.ndarray, h: float,
            cfg: IntegratorSettings) -> Tuple[np.ndarray, np.ndarray]:
    """One projected RK4 step on raw arrays (batch-capable)"""
    rho_next, v_next = _rk4(system, t, rho, v, h)
    return _project(system, rho_next, v_next, cfg)


def step(state: State, system: MechanicalSystem, cfg: IntegratorSettings, h: Optional[float] = None) -> State:
    h = cfg.step if h is None else h
    rho, v = advance(system, state.t, state.position, state.velocity, h, cfg)
    return State(state.t + h, rho, v)


def prepare_state(system: MechanicalSystem, state: State, cfg: Optional[IntegratorSettings] = None) -> State:
    """Project a slightly-off state once and warn; reject states far off the manifold"""
    s_res, tan_res = system.surface.residuals(state.position, state.velocity)
    worst = max(float(np.max(s_res)), float(np.max(tan_res)))
    if worst <= 1e-12:
        return state
    if worst > 1e-2:
        raise ManifoldError("initial state is far from the constraint manifold", {"residual": worst})
    if worst > settings.DRIFT_TOL:
        logger.warning(f"Initial state off the manifold by {worst:.3e}; projecting once")
    cfg = cfg or IntegratorSettings.for_period(system.period)
    rho, v = _project(system, state.position, state.velocity, cfg)
    return State(state.t, rho, v)


def _event_values(system: MechanicalSystem, state: State, energy_cap: Optional[float]) -> dict:
    values = {PLANE_EVENT: float(plane_f(state.t, state.position, system.frame))}
    if energy_cap is not None:
        values[ENERGY_EVENT] = float(energy_cap - system.kinetic_energy(state.velocity))
    return values


def _localize(system: MechanicalSystem, start: State, h: float, kind: str, energy_cap: Optional[float],
              cfg: IntegratorSettings) -> State:
    """Bisection over partial steps from ``start`` for the sign change of one event function"""

    def value_at(dt: float) -> Tuple[float, State]:
        s = step(start, system, cfg, dt) if dt > 0 else start
        return _event_values(system, s, energy_cap)[kind], s

    def inside(g: float) -> bool:
        return g >= 0.0

    lo, hi = 0.0, h
    g_lo, s_lo = value_at(lo)
    g_hi, s_hi = value_at(hi)
    for _ in range(200):
        if hi - lo <= cfg.event_tol:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            if min(abs(g_lo), abs(g_hi)) > cfg.event_value_tol:
                raise EventLocalizationError("event bisection underflow", {"t": start.t + lo, "kind": kind})
            break
        g_mid, s_mid = value_at(mid)
        if inside(g_mid) == inside(g_lo):
            lo, g_lo, s_lo = mid, g_mid, s_mid
        else:
            hi, g_hi, s_hi = mid, g_mid, s_mid
    return s_lo if abs(g_lo) <= abs(g_hi) else s_hi


def integrate_until(
    state: State,
    system: MechanicalSystem,
    cfg: IntegratorSettings,
    t_end: float,
    events: Sequence[str] = (PLANE_EVENT, ENERGY_EVENT),
    energy_cap: Optional[float] = None,
    stop_on: Optional[str] = None,
) -> Tuple[Trajectory, List[EventRecord]]:
    """Integrate to t_end, recording every step and localizing events.

    ``stop_on``: None (never stop), "any" (first event) or "outward" (first exit
    from the block).
    """
    if not t_end > state.t:
        raise ValueError(f"t_end must exceed the start time {state.t}, got {t_end}")
    events = tuple(e for e in events if e != ENERGY_EVENT or energy_cap is not None)
    state = prepare_state(system, state, cfg)
    trajectory = Trajectory()
    trajectory.append(system, state)
    records: List[EventRecord] = []

    n_steps = max(1, math.ceil((t_end - state.t) / cfg.step - 1e-9))
    g_prev = _event_values(system, state, energy_cap)
    for i in range(n_steps):
        h = cfg.step if i < n_steps - 1 else t_end - state.t
        nxt = step(state, system, cfg, h)
        if i == n_steps - 1:
            nxt.t = t_end
        g_next = _event_values(system, nxt, energy_cap)

        found: List[EventRecord] = []
        for kind in events:
            a, b = g_prev[kind], g_next[kind]
            if a >= 0.0 > b:
                direction = "outward"
            elif a < 0.0 <= b:
                direction = "inward"
            else:
                continue
            at = _localize(system, state, h, kind, energy_cap, cfg)
            found.append(EventRecord(at.t, kind, direction, at))
        found.sort(key=lambda r: r.t)
        records.extend(found)

        stop = next((r for r in found if stop_on == "any" or (stop_on == "outward" and r.direction == "outward")), None)
        if stop is not None:
            trajectory.append(system, stop.state)
            logger.debug(f"Integration stopped by {stop.kind} event at t={stop.t:.6g}")
            return trajectory, records

        trajectory.append(system, nxt)
        state, g_prev = nxt, g_next

    return trajectory, records


def propagate(system: MechanicalSystem, rho: np.ndarray, v: np.ndarray, t0: float, t1: float,
              cfg: IntegratorSettings) -> Tuple[np.ndarray, np.ndarray]:
    """Batch flow map from t0 to t1 without recording"""
    n_steps = max(1, math.ceil((t1 - t0) / cfg.step - 1e-9))
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        rho, v = advance(system, t, rho, v, h, cfg)
        t += h
    return rho, v


EXIT_NONE, EXIT_PLANE, EXIT_ENERGY = 0, 1, 2


@dataclass
class ExitScan:
    """Per-member result of a batch exit scan"""
    exit_time: np.ndarray  # inf where the member stayed in the block
    exit_kind: np.ndarray  # EXIT_NONE / EXIT_PLANE / EXIT_ENERGY
    exit_position: np.ndarray
    exit_velocity: np.ndarray
    min_plane: np.ndarray
    max_kinetic: np.ndarray

    @property
    def survived(self) -> np.ndarray:
        return self.exit_kind == EXIT_NONE


def exit_scan(system: MechanicalSystem, rho: np.ndarray, v: np.ndarray, t0: float, horizon: float,
              cfg: IntegratorSettings, energy_cap: float) -> ExitScan:
    """Integrate a batch in lock-step and record when each member first leaves {f >= 0, T <= c}.

    Exit times are resolved to one step; finished members are dropped from the batch.
    The recorded exit state is the first sample outside the block.
    """
    rho = np.array(rho, dtype=float).reshape(-1, 3)
    v = np.array(v, dtype=float).reshape(-1, 3)
    n = rho.shape[0]
    exit_time = np.full(n, np.inf)
    exit_kind = np.full(n, EXIT_NONE, dtype=int)
    exit_position, exit_velocity = rho.copy(), v.copy()
    min_plane = np.asarray(plane_f(t0, rho, system.frame), dtype=float).copy()
    max_kinetic = np.asarray(system.kinetic_energy(v), dtype=float).copy()

    def mark(idx: np.ndarray, t: float, r: np.ndarray, w: np.ndarray, f_val: np.ndarray, kin: np.ndarray) -> np.ndarray:
        plane_out = f_val < 0
        energy_out = (kin > energy_cap) & ~plane_out
        left = plane_out | energy_out
        exit_time[idx[left]] = t
        exit_kind[idx[plane_out]] = EXIT_PLANE
        exit_kind[idx[energy_out]] = EXIT_ENERGY
        exit_position[idx[left]] = r[left]
        exit_velocity[idx[left]] = w[left]
        return left

    active = np.arange(n)
    left = mark(active, t0, rho, v, min_plane, max_kinetic)
    active, r, w = active[~left], rho[~left], v[~left]

    n_steps = max(1, math.ceil(horizon / cfg.step - 1e-9))
    h = horizon / n_steps
    t = t0
    for _ in range(n_steps):
        if active.size == 0:
            break
        r, w = advance(system, t, r, w, h, cfg)
        t += h
        f_val = plane_f(t, r, system.frame)
        kin = system.kinetic_energy(w)
        min_plane[active] = np.minimum(min_plane[active], f_val)
        max_kinetic[active] = np.maximum(max_kinetic[active], kin)
        left = mark(active, t, r, w, f_val, kin)
        if np.any(left):
            keep = ~left
            active, r, w = active[keep], r[keep], w[keep]
    return ExitScan(exit_time, exit_kind, exit_position, exit_velocity, min_plane, max_kinetic)
