import numpy as np
import pytest

from app.core.errors import ManifoldError
from app.services.dynamics_service import (
    PendulumParams,
    PendulumSystem,
    RotatingSurfaceSystem,
    constraint_residual,
    kinetic_derivative,
    pendulum_accel,
    surface_accel,
)
from app.services.forcing_service import ForcingBundle, PeriodicSignal
from app.services.geometry_service import Ellipsoid, FixedFrame, PrecessionFrame, Sphere, State

from tests.conftest import pendulum_forcing


def _tangent_states(surface, rng, n, speed=1.0):
    rho = surface.radial_point(rng.normal(size=(n, 3)))
    v = surface.project_velocity(rho, speed * rng.normal(size=(n, 3)))
    return rho, v


def test_hand_evaluated_pendulum_acceleration():
    forcing = ForcingBundle(
        PeriodicSignal.zero(3, 1.0), PeriodicSignal.constant_vector([0.0, 0.0, 1.0], 1.0), PeriodicSignal.zero(3, 1.0)
    )
    state = State(0.0, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    accel = pendulum_accel(state, PendulumParams(1.0, 1.0, 0.0), forcing)
    np.testing.assert_allclose(accel, [-1.0, 0.0, -1.0], atol=1e-15)
    assert float(state.position @ accel) == pytest.approx(-1.0)


def test_pendulum_acceleration_keeps_the_constraint(rng):
    system = PendulumSystem(PendulumParams(1.3, 0.9, 0.4), pendulum_forcing(0.2, B=(0.1, -0.3, 0.7)))
    rho, v = _tangent_states(system.surface, rng, 100, speed=2.0)
    accel = system.acceleration(0.37, rho, v)
    np.testing.assert_allclose(np.sum(rho * accel, axis=-1), -np.sum(v * v, axis=-1), atol=1e-12)


def test_pendulum_power_balance(rng):
    params = PendulumParams(2.0, 1.0, 0.7)
    forcing = pendulum_forcing(0.5, B=(0.4, 0.2, 1.0))
    system = PendulumSystem(params, forcing)
    rho, v = _tangent_states(system.surface, rng, 50)
    t = 0.2
    rate = kinetic_derivative(v, system.acceleration(t, rho, v), params.m)
    expected = -params.mu * np.sum(v * v, axis=-1) + v @ forcing.F(t) - params.m * params.g * v[:, 2]
    np.testing.assert_allclose(rate, expected, atol=1e-12)


def test_off_manifold_state_rejected():
    with pytest.raises(ManifoldError):
        pendulum_accel(State(0.0, [1.1, 0.0, 0.0], [0.0, 1.0, 0.0]), PendulumParams(), ForcingBundle.unforced())


def test_surface_acceleration_satisfies_constraint(precessing_ellipsoid, rng):
    system = precessing_ellipsoid
    rho, v = _tangent_states(system.surface, rng, 100, speed=0.5)
    for t in (0.0, 1.3, 5.0):
        accel = system.acceleration(t, rho, v)
        assert np.max(np.abs(constraint_residual(system.surface, rho, v, accel))) < 1e-12


def test_surface_accel_uses_given_frame(precessing_ellipsoid):
    rho = precessing_ellipsoid.surface.radial_point(np.array([0.2, 0.1, 1.0]))
    state = State(0.4, rho, np.zeros(3))
    other = PrecessionFrame(0.5, 2.0 * np.pi)
    own = surface_accel(state, precessing_ellipsoid)
    swapped = surface_accel(state, precessing_ellipsoid, other)
    assert not np.allclose(own, swapped)


def test_reaction_matches_graph_coordinates(rng):
    """Reaction from the ambient multiplier equals the one from the graph z = h(x, y) of the upper cap"""
    a, b, c = 1.0, 1.2, 1.5
    system = RotatingSurfaceSystem(PendulumParams(1.0, 1.0, 0.5), Ellipsoid((a, b, c)), PrecessionFrame(0.3, 2.0 * np.pi))
    m = system.params.m

    n = 200
    radius = 0.6 * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    x, y = a * radius * np.cos(phi), b * radius * np.sin(phi)
    w = 1.0 - x ** 2 / a ** 2 - y ** 2 / b ** 2
    root = np.sqrt(w)
    h = c * root
    hx, hy = -c * x / (a ** 2 * root), -c * y / (b ** 2 * root)
    hxx = -c / (a ** 2 * root) - c * x ** 2 / (a ** 4 * w * root)
    hyy = -c / (b ** 2 * root) - c * y ** 2 / (b ** 4 * w * root)
    hxy = -c * x * y / (a ** 2 * b ** 2 * w * root)

    vx, vy = rng.normal(size=n), rng.normal(size=n)
    vz = hx * vx + hy * vy
    rho = np.stack([x, y, h], axis=-1)
    v = np.stack([vx, vy, vz], axis=-1)
    times = rng.uniform(0.0, 2.0 * np.pi, size=n)

    worst = 0.0
    for i in range(n):
        applied = system.applied_force(times[i], rho[i], v[i])
        normal = np.array([-hx[i], -hy[i], 1.0])
        curvature = hxx[i] * vx[i] ** 2 + 2.0 * hxy[i] * vx[i] * vy[i] + hyy[i] * vy[i] ** 2
        nu = (m * curvature - normal @ applied) / (normal @ normal)
        ambient = system.reaction(times[i], rho[i], v[i]).reaction
        worst = max(worst, float(np.max(np.abs(ambient - nu * normal))))
    assert worst <= 1e-10


def test_static_sphere_has_no_inertial_force(static_sphere, rng):
    rho, v = _tangent_states(Sphere(), rng, 10)
    np.testing.assert_allclose(static_sphere.inertial_force(0.3, rho, v), 0.0, atol=1e-15)


def test_motionless_sphere_reduces_to_free_pendulum(rng):
    params = PendulumParams(1.0, 1.0, 0.0)
    surface_system = RotatingSurfaceSystem(params, Sphere(), FixedFrame(1.0))
    pendulum = PendulumSystem(params, pendulum_forcing(0.0, B=(0.0, 0.0, 0.0)))
    rho, v = _tangent_states(Sphere(), rng, 50, speed=1.5)
    np.testing.assert_allclose(
        surface_system.acceleration(0.2, rho, v), pendulum.acceleration(0.2, rho, v), atol=1e-12
    )
