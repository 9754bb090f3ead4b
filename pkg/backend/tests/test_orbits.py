import numpy as np
import pytest

from app.core.errors import ChartExitError
from app.services.dynamics_service import PendulumParams, PendulumSystem, RotatingSurfaceSystem
from app.services.forcing_service import ForcingBundle
from app.services.geometry_service import Sphere, SpinFrame
from app.services.integration_service import IntegratorSettings
from app.services.orbit_service import (
    INTERIOR,
    StroboscopicMap,
    SurvivorDisk,
    find_periodic_orbit,
    multistart,
    seed_grid,
    strobe,
    survivor_search,
)
from app.services.wazewski_validator import Block, check_friction, find_energy_cap

from tests.conftest import pendulum_forcing


def _pendulum_map(mu: float, amplitude: float = 0.0, steps: int = 2000) -> StroboscopicMap:
    system = PendulumSystem(PendulumParams(1.0, 1.0, mu), pendulum_forcing(amplitude, B=(0.0, 0.0, 0.0)))
    return StroboscopicMap.for_system(system, IntegratorSettings.for_period(1.0, steps))


def test_upright_equilibrium_is_a_fixed_point():
    smap = _pendulum_map(1.0)
    assert np.linalg.norm(strobe(smap, np.zeros(4))) <= 1e-12


def test_image_of_equilibrium_scales_with_forcing():
    small = np.linalg.norm(_pendulum_map(1.0, 1e-3)(np.zeros(4)))
    large = np.linalg.norm(_pendulum_map(1.0, 1e-2)(np.zeros(4)))
    assert small > 0
    assert large / small == pytest.approx(10.0, rel=0.05)


def test_jacobian_matches_linearized_pendulum():
    """x'' + mu x' - g x = 0 near the top: two double multipliers exp(lambda tau)"""
    mu, g = 5.0, 1.0
    _, J = _pendulum_map(mu).jacobian(np.zeros(4))
    magnitudes = np.sort(np.abs(np.linalg.eigvals(J)))
    root = np.sqrt(mu * mu + 4.0 * g)
    contracting, expanding = np.exp(0.5 * (-mu - root)), np.exp(0.5 * (-mu + root))
    np.testing.assert_allclose(magnitudes[:2], contracting, rtol=1e-4)
    np.testing.assert_allclose(magnitudes[2:], expanding, rtol=1e-5)
    assert np.all(magnitudes[:2] < 1.0)


def test_newton_converges_from_a_nearby_guess(forced_pendulum):
    smap = StroboscopicMap.for_system(forced_pendulum)
    orbit = find_periodic_orbit(smap, guess=np.full(4, 0.05), tol=1e-10, energy_cap=0.5, hypotheses_verified=True)
    assert orbit.residual <= 1e-10
    assert orbit.reverified_residual <= 1e-8
    assert orbit.status == INTERIOR
    assert orbit.min_f > 0
    assert orbit.min_c_minus_T > 0
    assert len(orbit.trajectory) >= 2001

    report = orbit.to_report()
    assert report.samples == len(orbit.trajectory)
    assert len(report.multipliers) == 4


def test_multistart_finds_interior_pendulum_orbit(forced_pendulum):
    orbit = multistart(StroboscopicMap.for_system(forced_pendulum), energy_cap=0.5, seed=0)
    assert orbit.status == INTERIOR
    assert orbit.residual <= 1e-8


def test_surface_orbit_on_precessing_ellipsoid(precessing_ellipsoid):
    cap = find_energy_cap(precessing_ellipsoid, resolution=8).energy_cap
    smap = StroboscopicMap.for_system(precessing_ellipsoid)
    orbit = find_periodic_orbit(smap, energy_cap=cap)
    assert orbit.residual <= 1e-8
    assert orbit.min_f > 0
    assert orbit.min_c_minus_T > 0


def test_leaving_the_chart_is_reported():
    system = PendulumSystem(PendulumParams(1.0, 1.0, 0.0), ForcingBundle.unforced(5.0))
    smap = StroboscopicMap.for_system(system, IntegratorSettings(step=1e-2))
    with pytest.raises(ChartExitError):
        smap(np.array([0.9, 0.0, 0.0, 0.0]))


def test_seed_grid_skips_the_equilibrium():
    smap = _pendulum_map(1.0, steps=100)
    seeds = seed_grid(smap, speed_cap=1.0, per_axis=3, rng=np.random.default_rng(0))
    assert seeds.shape == (80, 4)
    assert not np.any(np.all(seeds == 0.0, axis=1))


def test_survivor_disk_rim_is_strict_egress(pendulum_block):
    disk = SurvivorDisk(pendulum_block)
    angles = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    rho, v = disk.states(np.stack([np.cos(angles), np.sin(angles)], axis=-1))
    np.testing.assert_allclose(rho[:, 2], 0.0, atol=1e-12)
    assert np.all(v[:, 2] < 0)
    assert np.all(pendulum_block.system.kinetic_energy(v) < pendulum_block.energy_cap)
    centre_rho, centre_v = disk.states(np.zeros(2))
    np.testing.assert_allclose(centre_rho[0], [0.0, 0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(centre_v[0], 0.0, atol=1e-15)


@pytest.mark.slow
def test_survivor_reaches_twenty_periods(pendulum_block):
    cfg = IntegratorSettings.for_period(1.0, 500)
    result = survivor_search(pendulum_block, 20.0, budget=2000, cfg=cfg)
    assert result.reached_horizon
    assert result.verified_horizon == pytest.approx(20.0)
    assert result.min_f > 0 and result.max_T < pendulum_block.energy_cap
    assert result.evaluations <= 2000
    best = [g.best_exit_time for g in result.history]
    assert best == sorted(best)


def test_survivor_search_respects_budget(pendulum_block):
    result = survivor_search(pendulum_block, 20.0, budget=30, cfg=IntegratorSettings.for_period(1.0, 100), grid=5)
    assert result.evaluations <= 30
    assert result.verified_horizon <= 20.0
    assert result.to_report().evaluations == result.evaluations


def test_unforced_survivor_is_the_upright_equilibrium():
    system = PendulumSystem(PendulumParams(1.0, 1.0, 1.2), ForcingBundle.unforced())
    result = survivor_search(Block(system, 0.5), 5.0, cfg=IntegratorSettings.for_period(1.0, 100), grid=5)
    assert result.reached_horizon and not result.budget_exhausted
    assert result.verified_horizon == pytest.approx(5.0)
    np.testing.assert_allclose(result.disk_point, [0.0, 0.0], atol=1e-15)
    assert result.min_f > 0.9 and result.max_T == pytest.approx(0.0, abs=1e-20)
    assert result.degenerate_disk is False


def test_survivor_with_weak_friction_falls_short():
    system = PendulumSystem(PendulumParams(1.0, 1.0, 0.01), pendulum_forcing(0.1, B=(0.0, 0.0, 0.0)))
    assert not check_friction(system.forcing, 0.5, system.params).satisfied
    result = survivor_search(Block(system, 0.5), 20.0, budget=30, cfg=IntegratorSettings.for_period(1.0, 100), grid=5)
    assert not result.reached_horizon
    assert result.budget_exhausted
    assert result.verified_horizon < 20.0
    assert result.to_report().budget_exhausted


def test_fast_spin_makes_the_survivor_disk_degenerate(pendulum_block):
    assert not SurvivorDisk(pendulum_block).degenerate
    system = RotatingSurfaceSystem(PendulumParams(1.0, 1.0, 1.0), Sphere(), SpinFrame((1.0, 0.0, 0.0), 10.0, 0.2 * np.pi))
    block = Block(system, 0.5)
    disk = SurvivorDisk(block)
    assert disk.rim_needed_speed() == pytest.approx(10.0, rel=1e-9)
    assert disk.degenerate
    result = survivor_search(block, 0.5, budget=5, cfg=IntegratorSettings(step=0.01), grid=3)
    assert result.degenerate_disk
    assert result.to_report().degenerate_disk
