"""
Orbit Service
Stroboscopic (period tau) map in a 4-dimensional surface chart, damped Newton
shooting for tau-periodic solutions and the exit-time maximizing search for
solutions that never leave the block.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ChartError, ChartExitError, ConvergenceError
from app.schemas.report import OrbitReport, SamplePoint, SurvivorGeneration, SurvivorReport
from app.services.dynamics_service import MechanicalSystem
from app.services.geometry_service import (
    State,
    SurfaceChart,
    orthonormal_complement,
    surface_chart,
    top_point,
)
from app.services.integration_service import (
    IntegratorSettings,
    Trajectory,
    advance,
    exit_scan,
    integrate_until,
)
from app.services.wazewski_validator import Block

logger = logging.getLogger(__name__)

INTERIOR = "interior"
OUTSIDE_BLOCK = "outside_block"


def _sample(state: State) -> SamplePoint:
    return SamplePoint(t=float(state.t), position=state.position.tolist(), velocity=state.velocity.tolist())


@dataclass
class StroboscopicMap:
    """Time-tau flow map of a tau-periodic system in chart coordinates (x1, x2, u1, u2)"""
    system: MechanicalSystem
    cfg: IntegratorSettings
    chart: SurfaceChart
    t0: float = 0.0
    fd_step: Optional[float] = None

    @classmethod
    def for_system(
        cls,
        system: MechanicalSystem,
        cfg: Optional[IntegratorSettings] = None,
        anchor: Optional[np.ndarray] = None,
        t0: float = 0.0,
        fd_step: Optional[float] = None,
    ) -> "StroboscopicMap":
        """Chart anchored at the top of the surface unless told otherwise"""
        if anchor is None:
            anchor = top_point(system.surface, system.frame, t0)
        cfg = cfg or IntegratorSettings.for_period(system.period)
        return cls(system, cfg, surface_chart(system.surface, anchor), t0, fd_step)

    @property
    def period(self) -> float:
        return self.system.period

    def lift(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.chart.lift(x)

    def lower(self, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.chart.lower(rho, v)

    def flow(self, rho: np.ndarray, v: np.ndarray, periods: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """Integrate whole periods, failing as soon as a member leaves the chart's validity region"""
        n_steps = max(1, int(np.ceil(periods * self.period / self.cfg.step - 1e-9)))
        h = periods * self.period / n_steps
        t = self.t0
        for _ in range(n_steps):
            rho, v = advance(self.system, t, rho, v, h, self.cfg)
            t += h
            valid = self.chart.is_valid(rho)
            if not np.all(valid):
                bad = int(np.argmin(np.atleast_1d(valid)))
                where = np.atleast_2d(rho)[bad]
                raise ChartExitError(
                    "trajectory left the chart validity region",
                    {"t": t, "position": where.tolist(), "member": bad},
                )
        return rho, v

    def __call__(self, x: np.ndarray) -> np.ndarray:
        rho, v = self.lift(x)
        return self.lower(*self.flow(rho, v))

    def batch(self, xs: np.ndarray) -> np.ndarray:
        """Strobe many chart points in lock-step"""
        rho, v = self.lift(np.asarray(xs, dtype=float))
        return self.lower(*self.flow(rho, v))

    def jacobian(self, x: np.ndarray, step: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """(P(x), central-difference dP/dx) from one batch of nine propagations"""
        h = step or self.fd_step or settings.NEWTON_FD_STEP
        x = np.asarray(x, dtype=float)
        offsets = np.concatenate([np.zeros((1, 4)), np.repeat(np.eye(4), 2, axis=0) * np.tile([h, -h], 4)[:, None]])
        images = self.batch(x + offsets)
        J = (images[1::2] - images[2::2]).T / (2.0 * h)
        return images[0], J


def strobe(smap: StroboscopicMap, x: np.ndarray) -> np.ndarray:
    return smap(x)


@dataclass
class Orbit:
    initial: State
    tau: float
    residual: float
    reverified_residual: float
    min_f: float
    min_c_minus_T: Optional[float]
    chart_point: np.ndarray
    iterations: int
    multipliers: np.ndarray
    drift_3_periods: Optional[float]
    trajectory: Trajectory = field(repr=False)

    @property
    def status(self) -> str:
        inside = self.min_f > 0 and (self.min_c_minus_T is None or self.min_c_minus_T > 0)
        return INTERIOR if inside else OUTSIDE_BLOCK

    def to_report(self) -> OrbitReport:
        return OrbitReport(
            status=self.status,
            tau=self.tau,
            residual=self.residual,
            reverified_residual=self.reverified_residual,
            min_f=self.min_f,
            min_c_minus_T=self.min_c_minus_T,
            initial=_sample(self.initial),
            chart_point=self.chart_point.tolist(),
            iterations=self.iterations,
            multipliers=[[float(z.real), float(z.imag)] for z in self.multipliers],
            drift_3_periods=self.drift_3_periods,
            samples=len(self.trajectory),
        )


def _residual(smap: StroboscopicMap, x: np.ndarray) -> float:
    try:
        return float(np.linalg.norm(smap(x) - x))
    except ChartError:
        return np.inf


def find_periodic_orbit(
    smap: StroboscopicMap,
    guess: Optional[Sequence[float]] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    energy_cap: Optional[float] = None,
    hypotheses_verified: Optional[bool] = None,
    record_samples: int = 2000,
) -> Orbit:
    """Damped Newton on P(x) - x = 0 with a finite-difference Jacobian.

    Backtracking halves the step (at most 20 times) until |P(x) - x| decreases.
    The converged orbit is re-integrated for one period at no fewer than
    ``record_samples`` points to measure its margins inside the block.
    """
    tol = tol or settings.NEWTON_TOL
    max_iter = max_iter or settings.NEWTON_MAX_ITER
    if hypotheses_verified is False:
        logger.warning("Shooting without verified block hypotheses: an orbit inside the block is not guaranteed")

    started = time.perf_counter()
    x = np.zeros(4) if guess is None else np.asarray(guess, dtype=float)
    image, J = smap.jacobian(x)
    residual = float(np.linalg.norm(image - x))
    iterations = 0
    while residual > tol:
        if iterations >= max_iter:
            raise ConvergenceError(
                f"Newton shooting did not converge in {max_iter} iterations",
                {"residual": residual, "x": x.tolist()},
            )
        iterations += 1
        dx = np.linalg.lstsq(J - np.eye(4), x - image, rcond=None)[0]
        scale = 1.0
        for _ in range(21):
            trial = x + scale * dx
            trial_residual = _residual(smap, trial)
            if trial_residual < residual:
                break
            scale *= 0.5
        else:
            raise ConvergenceError("line search failed to reduce the residual", {"residual": residual, "x": x.tolist()})
        x = trial
        image, J = smap.jacobian(x)
        residual = float(np.linalg.norm(image - x))
        logger.debug(f"Newton iteration {iterations}: residual {residual:.3e}, damping {scale:g}")

    orbit = _finish_orbit(smap, x, residual, iterations, J, energy_cap, record_samples)
    logger.info(
        f"Periodic orbit found: residual {residual:.3e} in {iterations} iterations, status {orbit.status}, "
        f"min f {orbit.min_f:.6g} ({time.perf_counter() - started:.2f}s)"
    )
    if orbit.status == OUTSIDE_BLOCK:
        logger.warning("Converged orbit is not inside the block interior; another orbit is expected inside")
    return orbit


def _finish_orbit(smap: StroboscopicMap, x: np.ndarray, residual: float, iterations: int, J: np.ndarray,
                  energy_cap: Optional[float], record_samples: int) -> Orbit:
    system = smap.system
    rho, v = smap.lift(x)
    start = State(smap.t0, rho, v)
    steps = max(record_samples, int(np.ceil(smap.period / smap.cfg.step - 1e-9)))
    record_cfg = IntegratorSettings(
        step=smap.period / steps,
        projection_tol=smap.cfg.projection_tol,
        max_projection_iter=smap.cfg.max_projection_iter,
    )
    trajectory, _ = integrate_until(start, system, record_cfg, smap.t0 + smap.period, events=())
    reverified = float(np.linalg.norm(smap(x) - x))
    frame = trajectory.to_dataframe()
    min_f = float(frame["f"].min())
    min_gap = None if energy_cap is None else float(energy_cap - frame["T"].max())

    try:
        r3, v3 = smap.flow(rho, v, periods=3)
        drift = float(np.linalg.norm(smap.lower(r3, v3) - x))
    except ChartError:
        drift = None
    return Orbit(
        initial=start,
        tau=smap.period,
        residual=residual,
        reverified_residual=reverified,
        min_f=min_f,
        min_c_minus_T=min_gap,
        chart_point=x.copy(),
        iterations=iterations,
        multipliers=np.linalg.eigvals(J),
        drift_3_periods=drift,
        trajectory=trajectory,
    )


def seed_grid(smap: StroboscopicMap, speed_cap: Optional[float], per_axis: int = 3,
              rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Coarse grid of chart guesses over positions and velocities, in seeded random order"""
    rng = rng or np.random.default_rng(settings.SEED)
    reach = 0.5 * smap.system.surface.max_radius
    velocity = 0.5 * (speed_cap if speed_cap else 1.0) / np.sqrt(2.0)
    pos = np.linspace(-reach, reach, per_axis)
    vel = np.linspace(-velocity, velocity, per_axis)
    grid = np.array(np.meshgrid(pos, pos, vel, vel, indexing="ij")).reshape(4, -1).T
    grid = grid[np.any(grid != 0.0, axis=1)]
    return grid[rng.permutation(len(grid))]


def multistart(
    smap: StroboscopicMap,
    energy_cap: Optional[float] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    threads: Optional[int] = None,
    seed: Optional[int] = None,
    hypotheses_verified: Optional[bool] = None,
    per_axis: int = 3,
) -> Orbit:
    """Shoot from the unforced equilibrium; fall back to a seeded grid of guesses over the disk"""
    try:
        orbit = find_periodic_orbit(smap, None, tol, max_iter, energy_cap, hypotheses_verified)
        if orbit.status == INTERIOR:
            return orbit
        fallback: Optional[Orbit] = orbit
    except (ConvergenceError, ChartError) as e:
        logger.warning(f"Shooting from the equilibrium failed: {e.message}")
        fallback = None

    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    seeds = seed_grid(smap, np.sqrt(2.0 * energy_cap / smap.system.params.m) if energy_cap else None, per_axis, rng)

    def attempt(guess: np.ndarray) -> Optional[Orbit]:
        try:
            return find_periodic_orbit(smap, guess, tol, max_iter, energy_cap, hypotheses_verified)
        except (ConvergenceError, ChartError):
            return None

    with ThreadPoolExecutor(max_workers=threads or settings.THREADS) as pool:
        results = list(pool.map(attempt, seeds))
    found = [orbit for orbit in results if orbit is not None]
    for orbit in found:
        if orbit.status == INTERIOR:
            return orbit
    if fallback is not None or found:
        return fallback or found[0]
    raise ConvergenceError(
        "periodic orbit not found at this resolution",
        {"seeds": int(len(seeds)) + 1},
    )


# ---------------------------------------------------------------------------
# survivor search
# ---------------------------------------------------------------------------

@dataclass
class SurvivorDisk:
    """Disk D of initial conditions at t0 whose rim lies in the strict egress set.

    p in the closed unit disk maps to the surface point at polar angle |p| pi/2
    from the vertical; the velocity points down the slope and grows like |p|^2,
    reaching on the rim a speed between the one needed for f' < 0 and the cap.
    """
    block: Block
    t0: float = 0.0

    def __post_init__(self):
        frame = self.block.system.frame
        self.vertical = frame.vertical(self.t0)
        self.omega = frame.omega(self.t0)
        self.e1, self.e2 = orthonormal_complement(self.vertical)

    def _points(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        surface = self.block.system.surface
        radius = np.linalg.norm(p, axis=-1)
        theta = 0.5 * np.pi * np.clip(radius, 0.0, 1.0)
        safe = np.where(radius > 0, radius, 1.0)
        planar = (p[:, :1] * self.e1 + p[:, 1:2] * self.e2) / safe[:, None]
        d = np.cos(theta)[:, None] * self.vertical + np.sin(theta)[:, None] * planar
        rho = surface.radial_point(d)

        normal = surface.normal(rho)
        slope = self.vertical - (normal @ self.vertical)[:, None] * normal
        slope_norm = np.maximum(np.linalg.norm(slope, axis=-1), 1e-12)
        needed = np.maximum(0.0, np.cross(self.omega, rho) @ self.vertical) / slope_norm
        return radius, rho, slope / slope_norm[:, None], needed

    def rim_needed_speed(self, samples: int = 256) -> float:
        """Largest downhill speed a rim point needs for f' < 0"""
        angle = np.linspace(0.0, 2.0 * np.pi, samples, endpoint=False)
        _, _, _, needed = self._points(np.column_stack([np.cos(angle), np.sin(angle)]))
        return float(needed.max())

    @property
    def degenerate(self) -> bool:
        """Rim not in the strict egress set: some rim point needs at least the speed cap"""
        return self.rim_needed_speed() >= self.block.speed_cap

    def states(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        radius, rho, downhill, needed = self._points(p)
        cap = self.block.speed_cap
        # capped below the block's speed limit; rim points past it are reported through `degenerate`
        speed = radius ** 2 * np.minimum(needed + 0.5 * (cap - needed), 0.999 * cap)
        return rho, -speed[:, None] * downhill


@dataclass
class SurvivorResult:
    initial: State
    disk_point: np.ndarray
    requested_horizon: float
    verified_horizon: float
    reached_horizon: bool
    budget_exhausted: bool
    min_f: float
    max_T: float
    evaluations: int
    history: List[SurvivorGeneration]
    degenerate_disk: bool
    trajectory: Trajectory = field(repr=False)

    def to_report(self) -> SurvivorReport:
        return SurvivorReport(
            initial=_sample(self.initial),
            disk_point=self.disk_point.tolist(),
            requested_horizon=self.requested_horizon,
            verified_horizon=self.verified_horizon,
            reached_horizon=self.reached_horizon,
            budget_exhausted=self.budget_exhausted,
            min_f=self.min_f,
            max_T=self.max_T,
            evaluations=self.evaluations,
            history=self.history,
            degenerate_disk=self.degenerate_disk,
        )


def _exit_times(disk: SurvivorDisk, points: np.ndarray, horizon: float, cfg: IntegratorSettings,
                threads: int) -> np.ndarray:
    system, cap = disk.block.system, disk.block.energy_cap

    def run(chunk: np.ndarray) -> np.ndarray:
        rho, v = disk.states(chunk)
        scan = exit_scan(system, rho, v, disk.t0, horizon, cfg, cap)
        return np.minimum(scan.exit_time - disk.t0, horizon)

    if threads <= 1 or len(points) < 2 * threads:
        return run(points)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(run, np.array_split(points, threads))))


def survivor_search(
    block: Block,
    horizon: float,
    budget: int = 2000,
    cfg: Optional[IntegratorSettings] = None,
    keep: int = 8,
    grid: int = 15,
    threads: Optional[int] = None,
) -> SurvivorResult:
    """Maximize the exit time over D by refining the cells with the latest exits.

    Exit time is continuous on D, so 3 x 3 refinement of the best cells keeps
    the best value non-decreasing. Stops when a point survives the whole
    horizon or the integration budget is spent; the best point is then
    re-integrated with recording to report its verified horizon.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    started = time.perf_counter()
    system = block.system
    cfg = cfg or IntegratorSettings.for_period(system.period)
    threads = threads or settings.THREADS
    disk = SurvivorDisk(block)
    degenerate = disk.degenerate
    if degenerate:
        logger.warning(
            f"Survivor disk rim needs speed {disk.rim_needed_speed():.6g} to exit but the cap is {block.speed_cap:.6g}; "
            "exit times near the rim are not guaranteed"
        )

    axis = np.linspace(-1.0, 1.0, grid)
    points = np.array(np.meshgrid(axis, axis, indexing="ij")).reshape(2, -1).T
    points = points[np.linalg.norm(points, axis=-1) <= 1.0 + 1e-12]
    half_width = 1.0 / (grid - 1)

    cells = np.empty((0, 2))
    scores = np.empty(0)
    history: List[SurvivorGeneration] = []
    evaluations = 0
    best_time, best_point = -np.inf, np.zeros(2)
    generation = 0
    budget_exhausted = False

    while True:
        if evaluations + len(points) > budget:
            points = points[: max(0, budget - evaluations)]
            budget_exhausted = True
        if len(points):
            times = _exit_times(disk, points, horizon, cfg, threads)
            evaluations += len(points)
            cells = np.concatenate([cells, points])
            scores = np.concatenate([scores, times])
            j = int(np.argmax(times))
            if times[j] > best_time:
                best_time, best_point = float(times[j]), points[j].copy()
        history.append(SurvivorGeneration(
            generation=generation, evaluated=int(len(points)), best_exit_time=best_time,
            best_point=best_point.tolist(), cell_half_width=half_width,
        ))
        logger.debug(f"Survivor generation {generation}: best exit {best_time:.6g} after {evaluations} runs")
        if best_time >= horizon or budget_exhausted or half_width < 1e-12:
            break

        order = np.argsort(-scores, kind="stable")[:keep]
        parents, scores_kept = cells[order], scores[order]
        offsets = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)], dtype=float)
        step = 2.0 * half_width / 3.0
        children = (parents[:, None, :] + step * offsets[None, :, :]).reshape(-1, 2)
        children = children[np.linalg.norm(children, axis=-1) <= 1.0]
        cells, scores = parents, scores_kept
        points = children
        half_width /= 3.0
        generation += 1
        if evaluations >= budget:
            budget_exhausted = True
            break

    rho, v = disk.states(best_point)
    initial = State(disk.t0, rho[0], v[0])
    trajectory, events = integrate_until(
        initial, system, cfg, disk.t0 + horizon, energy_cap=block.energy_cap, stop_on="outward"
    )
    frame = trajectory.to_dataframe()
    outward = [e for e in events if e.direction == "outward"]
    verified = (outward[0].t if outward else disk.t0 + horizon) - disk.t0
    reached = not outward
    if reached:
        inside = frame
    else:
        inside = frame.iloc[:-1]
    result = SurvivorResult(
        initial=initial,
        disk_point=best_point,
        requested_horizon=horizon,
        verified_horizon=float(verified),
        reached_horizon=reached,
        budget_exhausted=budget_exhausted and not reached,
        min_f=float(inside["f"].min()),
        max_T=float(inside["T"].max()),
        evaluations=evaluations,
        history=history,
        degenerate_disk=degenerate,
        trajectory=trajectory,
    )
    logger.info(
        f"Survivor search: verified horizon {result.verified_horizon:.6g} of {horizon:.6g} after "
        f"{evaluations} integrations ({time.perf_counter() - started:.2f}s)"
    )
    if not reached:
        logger.warning("Survivor search ended before the requested horizon")
    return result
