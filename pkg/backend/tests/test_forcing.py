import numpy as np
import pytest

from app.services.forcing_service import ForcingBundle, HarmonicTerm, PeriodicSignal, sup_norm

from tests.conftest import harmonic_force


def test_harmonic_value_and_periodicity():
    F = harmonic_force(0.1)
    np.testing.assert_allclose(F(0.25), [0.1, 0.0, 0.0], atol=1e-15)
    times = np.linspace(0.0, 1.0, 17)
    np.testing.assert_allclose(F(times + 1.0), F(times), atol=1e-14)
    assert F(times).shape == (17, 3)


def test_derivative_matches_finite_differences():
    signal = PeriodicSignal(
        period=2.0,
        constant=np.array([0.3, -0.1, 0.0]),
        terms=(HarmonicTerm(0, 1, 0.5, 0.2), HarmonicTerm(1, 3, -0.4, 0.0), HarmonicTerm(2, 2, 0.0, 0.7)),
    )
    h = 1e-6
    for t in (0.0, 0.37, 1.9):
        fd = (signal(t + h) - signal(t - h)) / (2 * h)
        np.testing.assert_allclose(signal.derivative(t), fd, atol=1e-8)
        np.testing.assert_allclose(signal.derivative_signal()(t), signal.derivative(t), atol=1e-13)


def test_sup_norm_refines_grid_maximum():
    F = harmonic_force(0.1)
    grid, refined = F.sup_norm_bracket(samples=7)
    assert grid <= refined
    assert refined == pytest.approx(0.1, abs=1e-9)
    assert sup_norm(PeriodicSignal.zero(3, 1.0)) == 0.0


def test_vertical_force_rejected():
    vertical = PeriodicSignal.constant_vector([0.0, 0.0, 1.0], 1.0)
    with pytest.raises(ValueError, match="F must be horizontal"):
        ForcingBundle(vertical, PeriodicSignal.zero(3, 1.0), PeriodicSignal.zero(3, 1.0))


def test_mismatched_periods_rejected():
    with pytest.raises(ValueError, match="share one period"):
        ForcingBundle(harmonic_force(0.1, 1.0), PeriodicSignal.zero(3, 2.0), PeriodicSignal.zero(3, 1.0))


def test_pivot_motion_gives_inertial_force():
    displacement = PeriodicSignal(period=1.0, constant=np.zeros(3), terms=(HarmonicTerm(0, 1, 0.0, 0.01),))
    forcing = ForcingBundle.from_pivot_motion(displacement, mass=2.0)
    w = 2.0 * np.pi
    for t in (0.1, 0.3, 0.8):
        expected = -2.0 * displacement.second_derivative(t)
        np.testing.assert_allclose(forcing.F(t), expected, atol=1e-14)
    assert forcing.F.sup_norm() == pytest.approx(2.0 * w * w * 0.01, rel=1e-9)


def test_harmonic_index_must_be_positive():
    with pytest.raises(ValueError):
        HarmonicTerm(0, 0, 1.0, 0.0)
