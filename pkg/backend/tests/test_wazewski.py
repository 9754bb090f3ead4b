import numpy as np
import pytest

from app.core.errors import StructureMismatchError, SweepExhaustedError, WitnessNotFoundError
from app.services.dynamics_service import PendulumParams, PendulumSystem, RotatingSurfaceSystem
from app.services.geometry_service import FixedFrame, Sphere, SpinFrame
from app.services.integration_service import IntegratorSettings
from app.services.wazewski_validator import (
    CORNER,
    ENERGY_FACE,
    INTERNAL_TANGENCY_VIOLATION,
    PLANE_FACE,
    STRATUM_COLUMNS,
    Block,
    certify_rotation_bound,
    check_egress_fibres,
    check_forward_invariance,
    check_friction,
    check_magnetic_bound,
    check_tangency_lemma,
    classify_boundary,
    demo_nonconvexity,
    egress_topology,
    find_energy_cap,
    friction_threshold,
    required_friction,
    sample_block_interior,
)

from tests.conftest import pendulum_forcing

UNIT = PendulumParams(1.0, 1.0, 0.0)


def _sphere_with_friction(mu: float) -> RotatingSurfaceSystem:
    return RotatingSurfaceSystem(PendulumParams(1.0, 1.0, mu), Sphere(), FixedFrame(1.0))


# -- quantitative hypotheses ---------------------------------------------------

def test_vertical_field_has_full_magnetic_margin(forced_pendulum):
    report = check_magnetic_bound(forced_pendulum.forcing, 0.5, forced_pendulum.params)
    assert report.satisfied
    assert report.margin == 1.0
    assert report.worst_case is None


def test_horizontal_field_violates_magnetic_bound():
    report = check_magnetic_bound(pendulum_forcing(0.0, B=(2.0, 0.0, 0.0)), 0.5, UNIT)
    assert not report.satisfied
    assert report.margin == pytest.approx(-1.0, abs=1e-12)
    np.testing.assert_allclose(report.worst_case.velocity, [0.0, -1.0, 0.0], atol=1e-12)


def test_friction_threshold_values():
    assert friction_threshold(pendulum_forcing(0.0), 0.5, UNIT) == pytest.approx(1.0)
    assert friction_threshold(pendulum_forcing(1.0), 0.5, UNIT) == pytest.approx(2.0, rel=1e-9)
    assert friction_threshold(pendulum_forcing(1.0), 2.0, UNIT) == pytest.approx(1.0, rel=1e-9)


def test_friction_check_at_twenty_percent_above_threshold(forced_pendulum):
    report = check_friction(forced_pendulum.forcing, 0.5, forced_pendulum.params)
    assert report.satisfied and report.margin > 0


def test_energy_cap_of_static_sphere():
    report = find_energy_cap(_sphere_with_friction(1.0), resolution=12)
    assert 0.5 <= report.energy_cap <= 0.6
    assert report.threshold == pytest.approx(0.5, rel=1e-3)
    assert report.energy_cap > report.threshold * report.safety_factor


@pytest.mark.parametrize("factor", [2.0, 5.0, 10.0])
def test_energy_cap_scales_with_inverse_square_friction(factor):
    base = find_energy_cap(_sphere_with_friction(1.0), resolution=12).energy_cap
    scaled = find_energy_cap(_sphere_with_friction(factor), resolution=12).energy_cap
    assert scaled * factor ** 2 == pytest.approx(base, rel=0.1)


def test_energy_cap_needs_friction():
    with pytest.raises(SweepExhaustedError):
        find_energy_cap(_sphere_with_friction(0.0), resolution=8)


def test_required_friction_is_consistent_with_cap():
    system = _sphere_with_friction(1.0)
    report = find_energy_cap(system, resolution=12)
    assert required_friction(system, report.energy_cap, resolution=12) < system.params.mu


def test_tangency_lemma_on_static_sphere(static_sphere):
    report = check_tangency_lemma(static_sphere, None, 0.5, resolution=12)
    assert report.satisfied
    assert report.details["max_f_ddot"] == pytest.approx(-1.0, abs=1e-9)


def test_fast_spin_violates_tangency_lemma():
    # friction drags the tangency point upward with vertical speed ~ rate
    system = RotatingSurfaceSystem(PendulumParams(1.0, 1.0, 1.0), Sphere(), SpinFrame((1.0, 0.0, 0.0), 10.0, 0.2 * np.pi))
    report = check_tangency_lemma(system, 0.5, 100.0, resolution=8)
    assert not report.satisfied
    assert report.details["max_f_ddot"] > 8.0
    assert not report.details["omega_within_bound"]


def test_certified_rotation_bound_is_of_order_gravity_over_friction():
    cert = certify_rotation_bound(Sphere(), PendulumParams(1.0, 1.0, 4.0), resolution=8, iterations=6)
    assert cert.certified
    assert 0.05 < cert.rotation_bound < 1.0
    assert cert.tangency.satisfied


# -- boundary classification and topology --------------------------------------

def test_pendulum_boundary_has_no_internal_tangency(pendulum_block):
    classification = classify_boundary(pendulum_block, resolution=12)
    summary = classification.summary
    assert summary.total >= 10_000
    assert summary.violations == 0
    assert summary.analytic_match_rate == 1.0
    assert summary.max_energy_rate < 0
    assert list(classification.table.columns) == STRATUM_COLUMNS
    assert set(classification.table["face"]) == {PLANE_FACE, ENERGY_FACE, CORNER}
    assert classification.violations().empty
    assert len(classification.egress()) == summary.egress_samples


def test_pendulum_egress_topology(pendulum_block):
    fibres = check_egress_fibres(pendulum_block, resolution=12)
    assert fibres.satisfied
    topology = egress_topology(pendulum_block, classify_boundary(pendulum_block, 12), fibres)
    assert (topology.chi_block, topology.chi_egress, topology.difference) == (1, 0, 1)


def test_structure_mismatch_on_gyroscopic_lift():
    system = PendulumSystem(UNIT, pendulum_forcing(0.0, B=(4.0, 0.0, 0.0)))
    block = Block(system, 0.5)
    classification = classify_boundary(block, resolution=8)
    assert classification.summary.counts[PLANE_FACE].get(INTERNAL_TANGENCY_VIOLATION, 0) > 0
    with pytest.raises(StructureMismatchError, match="structure mismatch"):
        egress_topology(block, classification)


def test_surface_block_topology(precessing_ellipsoid):
    cap = find_energy_cap(precessing_ellipsoid, resolution=8).energy_cap
    block = Block(precessing_ellipsoid, cap)
    topology = egress_topology(block, resolution=8)
    assert topology.difference == 1


def test_interior_samples_are_inside(pendulum_block, rng):
    rho, v = sample_block_interior(pendulum_block, 200, rng)
    assert np.all(pendulum_block.contains(0.0, rho, v))
    assert np.all(rho[:, 2] > 0)


@pytest.mark.slow
def test_forward_invariance_of_pendulum_block(pendulum_block):
    report = check_forward_invariance(pendulum_block, 100, 5, seed=0, cfg=IntegratorSettings.for_period(1.0, 500))
    assert report.details["energy_exits"] == 0
    assert report.details["non_strict_plane_exits"] == 0
    assert report.satisfied


# -- gyroscopic non-convexity witness ------------------------------------------

def test_witness_for_horizontal_field():
    witness = demo_nonconvexity([1.0, 0.0, 0.0], UNIT)
    np.testing.assert_allclose(witness.position, [1.0, 0.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(witness.velocity, [0.0, -2.0, 0.0], atol=1e-15)
    assert witness.gyroscopic_lift == pytest.approx(2.0)
    assert witness.gyroscopic_lift > witness.weight
    assert witness.speed <= 2.5
    assert witness.vertical_acceleration > 0
    assert witness.arc_min_plane > 0
    assert witness.arc_duration == pytest.approx(0.01)


def test_no_witness_for_vertical_field():
    with pytest.raises(WitnessNotFoundError):
        demo_nonconvexity([0.0, 0.0, 5.0], UNIT, speed_cap=1e3)


def test_witness_requires_frictionless_system():
    with pytest.raises(ValueError):
        demo_nonconvexity([1.0, 0.0, 0.0], PendulumParams(1.0, 1.0, 0.1))
