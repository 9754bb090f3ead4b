"""
Forcing Service
Tau-periodic time dependencies of the mechanical systems: horizontal force F(t),
magnetic field B(t) and the rotation law omega(t), as truncated Fourier series
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from app.core.config import settings

logger = logging.getLogger(__name__)

TimeLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class HarmonicTerm:
    """One Fourier term a*cos(2*pi*k*t/tau) + b*sin(2*pi*k*t/tau) of a signal component"""
    component: int
    k: int
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"harmonic index must be >= 1, got {self.k}")
        if self.component < 0:
            raise ValueError(f"component index must be >= 0, got {self.component}")


@dataclass(frozen=True, eq=False)
class PeriodicSignal:
    """Vector-valued tau-periodic signal given by its Fourier coefficients.

    ``constant`` holds a0 per component, ``terms`` the harmonics. Values are
    returned with shape (dim,) for scalar time and (N, dim) for an array of times.
    """
    period: float
    constant: np.ndarray
    terms: Tuple[HarmonicTerm, ...] = ()
    _component: np.ndarray = field(init=False, repr=False)
    _k: np.ndarray = field(init=False, repr=False)
    _a: np.ndarray = field(init=False, repr=False)
    _b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")
        constant = np.atleast_1d(np.asarray(self.constant, dtype=float)).copy()
        constant.setflags(write=False)
        object.__setattr__(self, "constant", constant)
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if term.component >= constant.size:
                raise ValueError(f"term component {term.component} out of range for a {constant.size}-vector signal")
        object.__setattr__(self, "_component", np.array([t.component for t in self.terms], dtype=int))
        object.__setattr__(self, "_k", np.array([t.k for t in self.terms], dtype=float))
        object.__setattr__(self, "_a", np.array([t.a for t in self.terms], dtype=float))
        object.__setattr__(self, "_b", np.array([t.b for t in self.terms], dtype=float))

    # -- construction helpers ------------------------------------------------

    @classmethod
    def zero(cls, dim: int, period: float) -> "PeriodicSignal":
        return cls(period=period, constant=np.zeros(dim))

    @classmethod
    def constant_vector(cls, value: Sequence[float], period: float) -> "PeriodicSignal":
        return cls(period=period, constant=np.asarray(value, dtype=float))

    @classmethod
    def from_records(cls, period: float, constant: Sequence[float], records: Iterable[dict]) -> "PeriodicSignal":
        """Build from config-style records {component, k, a, b}"""
        terms = tuple(
            HarmonicTerm(int(r["component"]), int(r["k"]), float(r.get("a", 0.0)), float(r.get("b", 0.0)))
            for r in records
        )
        return cls(period=period, constant=np.asarray(constant, dtype=float), terms=terms)

    @property
    def dim(self) -> int:
        return self.constant.size

    @property
    def angular_frequencies(self) -> np.ndarray:
        return 2.0 * np.pi * self._k / self.period

    def is_zero(self) -> bool:
        return not np.any(self.constant) and not (np.any(self._a) or np.any(self._b))

    def component_is_zero(self, component: int) -> bool:
        mask = self._component == component
        return self.constant[component] == 0.0 and not (np.any(self._a[mask]) or np.any(self._b[mask]))

    # -- evaluation -----------------------------------------------------------

    def _phases(self, t: TimeLike) -> np.ndarray:
        # wrapping t/tau into [0, 1) keeps value(t + tau) == value(t) to round-off
        frac = np.mod(np.asarray(t, dtype=float) / self.period, 1.0)
        return 2.0 * np.pi * np.multiply.outer(frac, self._k)

    def _combine(self, t: TimeLike, cos_coeff: np.ndarray, sin_coeff: np.ndarray, with_constant: bool) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        out = np.zeros(t_arr.shape + (self.dim,))
        if with_constant:
            out += self.constant
        if self.terms:
            phases = self._phases(t_arr)
            contrib = cos_coeff * np.cos(phases) + sin_coeff * np.sin(phases)
            for j, comp in enumerate(self._component):
                out[..., comp] += contrib[..., j]
        return out

    def value(self, t: TimeLike) -> np.ndarray:
        """Fourier sum at t"""
        return self._combine(t, self._a, self._b, with_constant=True)

    __call__ = value

    def derivative(self, t: TimeLike) -> np.ndarray:
        """Term-wise differentiated Fourier sum at t"""
        w = self.angular_frequencies
        return self._combine(t, w * self._b, -w * self._a, with_constant=False)

    def second_derivative(self, t: TimeLike) -> np.ndarray:
        w2 = self.angular_frequencies ** 2
        return self._combine(t, -w2 * self._a, -w2 * self._b, with_constant=False)

    def derivative_signal(self) -> "PeriodicSignal":
        """The derivative as a signal of its own (used for sup |omega_dot|)"""
        w = self.angular_frequencies
        terms = tuple(
            HarmonicTerm(term.component, term.k, float(wj * term.b), float(-wj * term.a))
            for term, wj in zip(self.terms, w)
        )
        return PeriodicSignal(period=self.period, constant=np.zeros(self.dim), terms=terms)

    def scaled(self, factor: float) -> "PeriodicSignal":
        terms = tuple(HarmonicTerm(t.component, t.k, factor * t.a, factor * t.b) for t in self.terms)
        return PeriodicSignal(period=self.period, constant=factor * self.constant, terms=terms)

    # -- bounds ---------------------------------------------------------------

    def sup_norm_bracket(self, samples: Optional[int] = None) -> Tuple[float, float]:
        """(grid max, refined max) of |value(t)| over one period.

        The grid value is a lower bound; the refined value maximizes locally
        around the best grid point with a bounded golden-section/Brent search.
        """
        n = samples or settings.SUP_NORM_SAMPLES
        if self.is_zero():
            return 0.0, 0.0
        grid = np.arange(n) * (self.period / n)
        norms = np.linalg.norm(self.value(grid), axis=-1)
        best = int(np.argmax(norms))
        grid_max = float(norms[best])
        if not self.terms:
            return grid_max, grid_max

        dt = self.period / n
        result = minimize_scalar(
            lambda s: -float(np.linalg.norm(self.value(s))),
            bounds=(grid[best] - dt, grid[best] + dt),
            method="bounded",
            options={"xatol": 1e-12 * self.period},
        )
        refined = max(grid_max, -float(result.fun))
        return grid_max, refined

    def sup_norm(self, samples: Optional[int] = None) -> float:
        return self.sup_norm_bracket(samples)[1]


def evaluate(signal: PeriodicSignal, t: TimeLike) -> np.ndarray:
    return signal.value(t)


def derivative(signal: PeriodicSignal, t: TimeLike) -> np.ndarray:
    return signal.derivative(t)


def sup_norm(signal: PeriodicSignal, samples: Optional[int] = None) -> float:
    return signal.sup_norm(samples)


@dataclass(frozen=True, eq=False)
class ForcingBundle:
    """Horizontal force F (N), magnetic field B (T) and body-frame angular velocity omega (rad/s)"""
    F: PeriodicSignal
    B: PeriodicSignal
    omega: PeriodicSignal

    def __post_init__(self):
        for name in ("F", "B", "omega"):
            sig = getattr(self, name)
            if sig.dim != 3:
                raise ValueError(f"{name} must be a 3-vector signal, got dimension {sig.dim}")
        periods = {self.F.period, self.B.period, self.omega.period}
        if len(periods) != 1:
            raise ValueError(f"F, B and omega must share one period, got {sorted(periods)}")
        if not self.F.component_is_zero(2):
            raise ValueError("F must be horizontal")

    @property
    def period(self) -> float:
        return self.F.period

    @classmethod
    def unforced(cls, period: float = 1.0) -> "ForcingBundle":
        return cls(PeriodicSignal.zero(3, period), PeriodicSignal.zero(3, period), PeriodicSignal.zero(3, period))

    @classmethod
    def from_pivot_motion(
        cls,
        displacement: PeriodicSignal,
        mass: float,
        B: Optional[PeriodicSignal] = None,
        omega: Optional[PeriodicSignal] = None,
    ) -> "ForcingBundle":
        """Pendulum whose pivot moves horizontally: in the pivot frame F(t) = -m * x_pivot''(t)"""
        if not displacement.component_is_zero(2):
            raise ValueError("pivot displacement must be horizontal")
        tau = displacement.period
        w2 = displacement.angular_frequencies ** 2
        terms = tuple(
            HarmonicTerm(t.component, t.k, float(mass * w * t.a), float(mass * w * t.b))
            for t, w in zip(displacement.terms, w2)
        )
        F = PeriodicSignal(period=tau, constant=np.zeros(3), terms=terms)
        logger.info(f"Pivot forcing built: {len(terms)} harmonics, sup|F| = {F.sup_norm():.6g} N")
        return cls(F, B or PeriodicSignal.zero(3, tau), omega or PeriodicSignal.zero(3, tau))
