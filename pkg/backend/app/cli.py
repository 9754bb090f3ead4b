"""
Command-line entry point.

    orbitmate simulate       --config PATH [--t-end T]
    orbitmate verify         --config PATH [--resolution N]
    orbitmate find-orbit     --config PATH [--tol TOL]
    orbitmate survivor       --config PATH [--horizon H]
    orbitmate demo-nonconvex --config PATH
    orbitmate sweep          --config PATH
    orbitmate reproduce      NAME

Exit codes: 0 satisfied / found, 1 hypothesis violated or nothing found,
2 usage or configuration error.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import ConfigError, OrbitMateError
from app.schemas.scenario import ScenarioConfig
from app.services import export_service
from app.services.dynamics_service import PendulumParams
from app.services.geometry_service import State, top_point
from app.services.integration_service import integrate_until
from app.services.orbit_service import INTERIOR, StroboscopicMap, multistart, survivor_search
from app.services.scenario_service import ScenarioRuntime, build_runtime, integrator_settings, load_scenario
from app.services.wazewski_validator import (
    check_friction,
    check_magnetic_bound,
    demo_nonconvexity,
    required_friction,
)
from app.workflows.verification_workflow import VerificationWorkflow

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _out(args: argparse.Namespace, config: ScenarioConfig) -> Path:
    return export_service.output_dir(args.output or config.output.dir)


def _config(args: argparse.Namespace) -> ScenarioConfig:
    config = load_scenario(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "tol", None) is not None:
        updates["solver"] = config.solver.model_copy(update={"tol": args.tol})
    if getattr(args, "resolution", None) is not None:
        updates["verification"] = config.verification.model_copy(update={"resolution": args.resolution})
    return config.model_copy(update=updates) if updates else config


def _initial_state(runtime: ScenarioRuntime) -> State:
    initial = runtime.config.initial
    if initial is not None:
        return State(initial.t, np.asarray(initial.position), np.asarray(initial.velocity))
    system = runtime.system
    return State(0.0, top_point(system.surface, system.frame, 0.0), np.zeros(3))


def hypotheses_hold(runtime: ScenarioRuntime) -> bool:
    """Cheap pre-check before shooting: magnetic bound and friction, or surface friction"""
    system, c = runtime.system, runtime.energy_cap
    if system.kind == "pendulum":
        return (check_magnetic_bound(runtime.forcing, c, system.params).satisfied
                and check_friction(runtime.forcing, c, system.params).satisfied)
    return system.params.mu > required_friction(system, c, runtime.config.rotation_bound)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(config: ScenarioConfig, t_end: Optional[float], out: Path) -> int:
    runtime = build_runtime(config)
    start = _initial_state(runtime)
    t_end = start.t + config.period if t_end is None else t_end
    trajectory, events = integrate_until(
        start, runtime.system, runtime.integrator, t_end, energy_cap=runtime.energy_cap
    )
    header = runtime.header()
    export_service.write_table(trajectory.to_dataframe(), out / f"{config.name}_trajectory.csv", header)
    export_service.write_events(events, out / f"{config.name}_events.json", header)
    logger.info(f"Simulated {config.name} to t={t_end:g}: {len(trajectory)} samples, {len(events)} events")
    return EXIT_OK


def cmd_verify(config: ScenarioConfig, out: Path, forward_invariance: bool = False) -> int:
    runtime = build_runtime(config)
    bundle, classification = VerificationWorkflow(forward_invariance).run(runtime)
    export_service.write_report(bundle, out / f"{config.name}_verify.json")
    if config.output.write_strata and classification is not None:
        export_service.write_table(classification.table, out / f"{config.name}_strata.csv", runtime.header())
    for report in bundle.reports:
        logger.info(f"  {report.name}: {'ok' if report.satisfied else 'VIOLATED'} (margin {report.margin:.6g})")
    return EXIT_OK if bundle.all_satisfied else EXIT_FAILED


def cmd_find_orbit(config: ScenarioConfig, out: Path, threads: Optional[int] = None) -> int:
    runtime = build_runtime(config)
    solver = config.solver
    smap = StroboscopicMap.for_system(runtime.system, runtime.integrator, fd_step=solver.fd_step)
    orbit = multistart(
        smap,
        energy_cap=runtime.energy_cap,
        tol=solver.tol,
        max_iter=solver.max_iter,
        threads=threads,
        seed=config.seed,
        hypotheses_verified=hypotheses_hold(runtime),
        per_axis=solver.seeds_per_axis,
    )
    report = orbit.to_report()
    header = runtime.header()
    header["orbit"] = {
        "residual": report.residual, "min_f": report.min_f,
        "min_c_minus_T": report.min_c_minus_T, "tau": report.tau,
    }
    export_service.write_table(orbit.trajectory.to_dataframe(), out / f"{config.name}_orbit.csv", header)
    export_service.write_report(report, out / f"{config.name}_orbit.json")
    return EXIT_OK if report.status == INTERIOR else EXIT_FAILED


def cmd_survivor(config: ScenarioConfig, horizon: Optional[float], out: Path, threads: Optional[int] = None) -> int:
    runtime = build_runtime(config)
    search = config.survivor
    horizon = horizon or search.horizon_periods * config.period
    cfg = integrator_settings(config, search.steps_per_period)
    result = survivor_search(runtime.block, horizon, search.budget, cfg, search.keep, search.grid, threads)
    header = runtime.header()
    export_service.write_table(result.trajectory.to_dataframe(), out / f"{config.name}_survivor.csv", header)
    export_service.write_report(result.to_report(), out / f"{config.name}_survivor.json")
    return EXIT_OK if result.reached_horizon else EXIT_FAILED


def cmd_demo_nonconvex(config: ScenarioConfig, out: Path) -> int:
    if config.system != "pendulum":
        raise ConfigError("demo-nonconvex needs a pendulum scenario")
    params = config.params
    try:
        pendulum = PendulumParams(params.m, params.g, params.mu or 0.0)
        witness = demo_nonconvexity(config.forcing.B.constant, pendulum)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    export_service.write_report(witness, out / f"{config.name}_witness.json")
    return EXIT_OK


def _sweep_row(config: ScenarioConfig, value: float) -> Dict[str, object]:
    sweep = config.sweep
    if sweep.parameter == "mu_factor":
        params = config.params.model_copy(update={"mu_factor": value, "mu": None})
        config = config.model_copy(update={"params": params})
    elif sweep.parameter == "mu":
        params = config.params.model_copy(update={"mu": value, "mu_factor": None})
        config = config.model_copy(update={"params": params})
    else:
        config = config.model_copy(update={"energy_cap": value})
    runtime = build_runtime(config)
    system, c = runtime.system, runtime.energy_cap
    row: Dict[str, object] = {"value": value, "mu": system.params.mu, "energy_cap": c}
    if system.kind == "pendulum":
        row["magnetic_margin"] = check_magnetic_bound(runtime.forcing, c, system.params).margin
        row["friction_margin"] = check_friction(runtime.forcing, c, system.params).margin
    else:
        row["magnetic_margin"] = np.nan
        row["friction_margin"] = system.params.mu - required_friction(system, c, config.rotation_bound)
    row.update({"orbit_status": "", "orbit_min_f": np.nan, "orbit_min_c_minus_T": np.nan, "orbit_residual": np.nan})
    if sweep.find_orbits:
        try:
            smap = StroboscopicMap.for_system(system, runtime.integrator, fd_step=config.solver.fd_step)
            orbit = multistart(smap, c, config.solver.tol, config.solver.max_iter, threads=1, seed=config.seed,
                               per_axis=config.solver.seeds_per_axis)
            row.update({
                "orbit_status": orbit.status, "orbit_min_f": orbit.min_f,
                "orbit_min_c_minus_T": orbit.min_c_minus_T, "orbit_residual": orbit.residual,
            })
        except OrbitMateError as e:
            row["orbit_status"] = f"not_found: {e.message}"
    return row


def cmd_sweep(config: ScenarioConfig, out: Path, threads: Optional[int] = None) -> int:
    sweep = config.sweep
    values = np.linspace(sweep.start, sweep.stop, sweep.points)
    with ThreadPoolExecutor(max_workers=threads or settings.THREADS) as pool:
        rows = list(pool.map(lambda v: _sweep_row(config, float(v)), values))
    table = pd.DataFrame(rows)
    export_service.write_table(table, out / f"{config.name}_sweep_{sweep.parameter}.csv",
                               {"scenario": config.dump(), "settings": settings.model_dump()})
    trend = table["friction_margin"].is_monotonic_increasing
    logger.info(f"Sweep over {sweep.parameter}: {len(table)} points, friction margin monotone = {trend}")
    return EXIT_OK


REPRODUCTIONS: Dict[str, List[str]] = {
    "pendulum_orbit": ["verify", "find-orbit"],
    "pendulum_survivor": ["survivor"],
    "magnetic_lift": ["demo-nonconvex"],
    "ellipsoid_precession": ["verify", "find-orbit"],
}


def cmd_reproduce(name: str, out: Path, threads: Optional[int] = None, seed: Optional[int] = None) -> int:
    if name not in REPRODUCTIONS:
        raise ConfigError(f"unknown reproduction {name!r}; choose from {sorted(REPRODUCTIONS)}")
    config = load_scenario(SCENARIO_DIR / f"{name}.json")
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    code = EXIT_OK
    for step in REPRODUCTIONS[name]:
        logger.info(f"Reproduction {name}: {step}")
        if step == "verify":
            result = cmd_verify(config, out)
        elif step == "find-orbit":
            result = cmd_find_orbit(config, out, threads)
        elif step == "survivor":
            result = cmd_survivor(config, None, out, threads)
        else:
            result = cmd_demo_nonconvex(config, out)
        code = max(code, result)
    return code


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbitmate", description="Forced oscillations on constraint surfaces")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="output directory (default: scenario output.dir or ORBITMATE_OUTPUT_DIR)")
    common.add_argument("--seed", type=int, help="random seed (overrides the scenario)")
    common.add_argument("--threads", type=int, help="worker threads for independent jobs")
    common.add_argument("--log-level", default=None, help="logging level (default: ORBITMATE_LOG_LEVEL)")

    with_config = argparse.ArgumentParser(add_help=False, parents=[common])
    with_config.add_argument("--config", required=True, help="scenario JSON file")
    with_config.add_argument("--resolution", type=int, help="boundary sampling resolution")
    with_config.add_argument("--tol", type=float, help="Newton tolerance (chart norm)")

    sub = parser.add_subparsers(dest="command", required=True)
    simulate = sub.add_parser("simulate", parents=[with_config], help="integrate and write a trajectory CSV")
    simulate.add_argument("--t-end", type=float, help="end time (default: one period)")
    verify = sub.add_parser("verify", parents=[with_config], help="check every block hypothesis")
    verify.add_argument("--forward-invariance", action="store_true", help="also integrate random starts")
    sub.add_parser("find-orbit", parents=[with_config], help="shoot for a periodic orbit")
    survivor = sub.add_parser("survivor", parents=[with_config], help="search for a never-leaving solution")
    survivor.add_argument("--horizon", type=float, help="time horizon (default: survivor.horizon_periods periods)")
    sub.add_parser("demo-nonconvex", parents=[with_config], help="internal tangency witness")
    sub.add_parser("sweep", parents=[with_config], help="margin and orbit table over a parameter range")
    reproduce = sub.add_parser("reproduce", parents=[common], help="run a bundled reproduction")
    reproduce.add_argument("name", help=f"one of {', '.join(REPRODUCTIONS)}")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args.name, export_service.output_dir(args.output), args.threads, args.seed)
        config = _config(args)
        out = _out(args, config)
        handlers: Dict[str, Callable[[], int]] = {
            "simulate": lambda: cmd_simulate(config, args.t_end, out),
            "verify": lambda: cmd_verify(config, out, args.forward_invariance),
            "find-orbit": lambda: cmd_find_orbit(config, out, args.threads),
            "survivor": lambda: cmd_survivor(config, args.horizon, out, args.threads),
            "demo-nonconvex": lambda: cmd_demo_nonconvex(config, out),
            "sweep": lambda: cmd_sweep(config, out, args.threads),
        }
        return handlers[args.command]()
    except ConfigError as e:
        logger.error(e.message)
        return EXIT_USAGE
    except OrbitMateError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
