"""
Geometry Service
Constraint manifolds (unit sphere, ellipsoids, user level sets), rotating frame
orientation, the moving plane function f and local charts for the shooting solver.

Conventions
-----------
* Positions and velocities of the surface system live in the body frame; the
  pendulum uses the fixed frame (FixedFrame) so body == world.
* A frame orientation Q(t) maps body coordinates to world coordinates. The
  vertical seen from the body is ``vertical(t) = Q(t)^T e_z`` and the moving
  plane function is ``f(t, rho) = vertical(t) . rho``. With Q a rotation by
  +pi/2 about the world x-axis, body (0, 1, 0) maps to world (0, 0, 1), so f = +1.
* omega is the body-frame angular velocity: dQ/dt = Q [omega]_x.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation

from app.core.config import settings
from app.core.errors import ChartError, ManifoldError, ProjectionError
from app.services.forcing_service import HarmonicTerm, PeriodicSignal

logger = logging.getLogger(__name__)

E_Z = np.array([0.0, 0.0, 1.0])

ArrayFn = Callable[[np.ndarray], np.ndarray]


def fibonacci_directions(n: int) -> np.ndarray:
    """Quasi-uniform unit vectors on the sphere"""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (1.0 + 5.0 ** 0.5) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def orthonormal_complement(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing unit vector(s) n to a right-handed basis"""
    n = np.asarray(n, dtype=float)
    helper = np.where(np.abs(n[..., :1]) < 0.9, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
    e1 = helper - np.sum(helper * n, axis=-1, keepdims=True) * n
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(n, e1)
    return e1, e2


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------

class Surface:
    """Closed strictly convex level set s = 0 with the origin inside.

    ``value``/``gradient``/``hessian`` accept positions of shape (..., 3).
    """

    kind = "level_set"

    def __init__(self, s: ArrayFn, gradient: ArrayFn, hessian: ArrayFn, check_samples: int = 200):
        self._s = s
        self._gradient = gradient
        self._hessian = hessian
        self._max_radius: Optional[float] = None
        self._validate(check_samples)

    def value(self, rho: np.ndarray) -> np.ndarray:
        return self._s(np.asarray(rho, dtype=float))

    def gradient(self, rho: np.ndarray) -> np.ndarray:
        return self._gradient(np.asarray(rho, dtype=float))

    def hessian(self, rho: np.ndarray) -> np.ndarray:
        return self._hessian(np.asarray(rho, dtype=float))

    def normal(self, rho: np.ndarray) -> np.ndarray:
        grad = self.gradient(rho)
        norm = np.linalg.norm(grad, axis=-1, keepdims=True)
        if np.any(norm < 1e-300):
            raise ManifoldError("degenerate surface gradient")
        return grad / norm

    def radial_distance(self, direction: np.ndarray) -> np.ndarray:
        """r > 0 with s(r * d) = 0 for unit direction(s) d"""
        d = np.asarray(direction, dtype=float)
        flat = d.reshape(-1, 3)
        out = np.empty(flat.shape[0])
        for i, di in enumerate(flat):
            upper = 1.0
            for _ in range(80):
                if self.value(upper * di) > 0:
                    break
                upper *= 2.0
            else:
                raise ManifoldError("surface is not closed along a sampled ray", {"direction": di.tolist()})
            out[i] = brentq(lambda r: float(self.value(r * di)), 0.0, upper, xtol=1e-15, rtol=4e-16)
        return out.reshape(d.shape[:-1])

    def radial_point(self, direction: np.ndarray) -> np.ndarray:
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        return self.radial_distance(d)[..., None] * d

    @property
    def max_radius(self) -> float:
        """Largest |rho| over the surface"""
        if self._max_radius is None:
            pts = self.radial_point(fibonacci_directions(2000))
            self._max_radius = float(np.max(np.linalg.norm(pts, axis=-1)))
        return self._max_radius

    def tangent_basis(self, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.normal(rho)
        e1, e2 = orthonormal_complement(n)
        return n, e1, e2

    def project(self, rho: np.ndarray, tol: Optional[float] = None, max_iter: Optional[int] = None) -> np.ndarray:
        """Newton projection onto s = 0 along the local gradient"""
        tol = settings.PROJECTION_TOL if tol is None else tol
        max_iter = settings.MAX_PROJECTION_ITER if max_iter is None else max_iter
        rho = np.array(rho, dtype=float)
        for _ in range(max_iter):
            s = self.value(rho)
            if np.all(np.abs(s) <= tol):
                return rho
            grad = self.gradient(rho)
            rho = rho - (s / np.sum(grad * grad, axis=-1))[..., None] * grad
        s = self.value(rho)
        if np.all(np.abs(s) <= tol * 10):
            return rho
        raise ProjectionError("position projection did not converge", {"residual": float(np.max(np.abs(s)))})

    def project_velocity(self, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        grad = self.gradient(rho)
        coef = np.sum(grad * v, axis=-1) / np.sum(grad * grad, axis=-1)
        return v - coef[..., None] * grad

    def residuals(self, rho: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(|s(rho)|, |grad s . v|)"""
        return np.abs(self.value(rho)), np.abs(np.sum(self.gradient(rho) * v, axis=-1))

    def _validate(self, samples: int):
        if not float(self.value(np.zeros(3))) < 0:
            raise ManifoldError("origin must lie strictly inside the surface (s(0) < 0)")
        if samples <= 0:
            return
        pts = self.radial_point(fibonacci_directions(samples))
        n, e1, e2 = self.tangent_basis(pts)
        H = self.hessian(pts)
        basis = np.stack([e1, e2], axis=-1)
        H_t = np.einsum("nia,nij,njb->nab", basis, H, basis)
        # definiteness is only meaningful relative to the outward gradient
        outward = np.sum(n * pts, axis=-1) > 0
        eig_min = np.linalg.eigvalsh(H_t)[:, 0]
        if not np.all(outward) or np.any(eig_min <= 0):
            raise ManifoldError(
                "surface is not strictly convex around the origin",
                {"min_tangent_curvature": float(eig_min.min())},
            )

    def to_config(self) -> dict:
        return {"type": self.kind}


class Ellipsoid(Surface):
    """s = (x/a)^2 + (y/b)^2 + (z/c)^2 - 1"""

    kind = "ellipsoid"

    def __init__(self, semi_axes=(1.0, 1.0, 1.0)):
        axes = np.asarray(semi_axes, dtype=float)
        if axes.shape != (3,) or np.any(axes <= 0):
            raise ManifoldError(f"semi-axes must be three positive numbers, got {semi_axes}")
        self.semi_axes = axes
        self._inv2 = 1.0 / axes ** 2
        super().__init__(self._value, self._grad, self._hess, check_samples=0)
        self._max_radius = float(axes.max())

    def _value(self, rho):
        return np.sum(rho * rho * self._inv2, axis=-1) - 1.0

    def _grad(self, rho):
        return 2.0 * rho * self._inv2

    def _hess(self, rho):
        H = np.diag(2.0 * self._inv2)
        return np.broadcast_to(H, rho.shape[:-1] + (3, 3))

    def radial_distance(self, direction):
        d = np.asarray(direction, dtype=float)
        return 1.0 / np.sqrt(np.sum(d * d * self._inv2, axis=-1))

    def to_config(self) -> dict:
        return {"type": self.kind, "semi_axes": self.semi_axes.tolist()}


class Sphere(Ellipsoid):
    """Unit sphere s = |rho|^2 - 1 (the pendulum's configuration space)"""

    kind = "sphere"

    def __init__(self):
        super().__init__((1.0, 1.0, 1.0))

    def to_config(self) -> dict:
        return {"type": self.kind}


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

def quat_mul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product, scalar-last (scipy) layout"""
    px, py, pz, pw = np.moveaxis(p, -1, 0)
    qx, qy, qz, qw = np.moveaxis(q, -1, 0)
    return np.stack([
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
        pw * qw - px * qx - py * qy - pz * qz,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    return q * np.array([-1.0, -1.0, -1.0, 1.0])


def quat_rate(q: np.ndarray, omega_body: np.ndarray) -> np.ndarray:
    """dq/dt = 1/2 q (x) (omega, 0) for body angular velocity"""
    return 0.5 * quat_mul(q, np.append(omega_body, 0.0))


class FrameOrientation:
    """Orientation of the body frame O-xi-eta-zeta in the fixed frame O-xyz"""

    kind = "fixed"

    def __init__(self, omega_signal: PeriodicSignal):
        self.omega_signal = omega_signal
        self._omega_dot_signal = omega_signal.derivative_signal()

    @property
    def period(self) -> float:
        return self.omega_signal.period

    def quaternion(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, t: float) -> np.ndarray:
        return Rotation.from_quat(self.quaternion(t)).as_matrix()

    def vertical(self, t: float) -> np.ndarray:
        """World e_z in body coordinates"""
        return self.matrix(t)[2, :]

    def omega(self, t: float) -> np.ndarray:
        return self.omega_signal.value(t)

    def omega_dot(self, t: float) -> np.ndarray:
        return self._omega_dot_signal.value(t)

    def angular_velocity(self, t: float, h: float = 1e-6) -> np.ndarray:
        """Body angular velocity reconstructed from q and a central difference of q"""
        q = self.quaternion(t)
        q_plus, q_minus = self.quaternion(t + h), self.quaternion(t - h)
        # quaternions are sign-ambiguous; align neighbours with q
        q_plus = q_plus if np.dot(q_plus, q) >= 0 else -q_plus
        q_minus = q_minus if np.dot(q_minus, q) >= 0 else -q_minus
        q_dot = (q_plus - q_minus) / (2.0 * h)
        return 2.0 * quat_mul(quat_conj(q), q_dot)[:3]

    def is_static(self) -> bool:
        return self.omega_signal.is_zero()

    def closure_defect(self) -> float:
        """|vertical(tau) - vertical(0)|; zero for frames whose vertical is tau-periodic"""
        return float(np.linalg.norm(self.vertical(self.period) - self.vertical(0.0)))

    def to_config(self) -> dict:
        return {"type": self.kind}


class FixedFrame(FrameOrientation):
    """Motionless frame: the pendulum and the non-rotating surface"""

    kind = "fixed"

    def __init__(self, period: float = 1.0):
        super().__init__(PeriodicSignal.zero(3, period))

    def quaternion(self, t: float) -> np.ndarray:
        return np.array([0.0, 0.0, 0.0, 1.0])

    def vertical(self, t: float) -> np.ndarray:
        return E_Z.copy()


class SpinFrame(FrameOrientation):
    """Constant-axis spin Q(t) = Q0 R(axis, rate t); omega_body = rate * axis"""

    kind = "spin"

    def __init__(self, axis, rate: float, period: float, initial_rotvec=(0.0, 0.0, 0.0)):
        axis = np.asarray(axis, dtype=float)
        self.axis = axis / np.linalg.norm(axis)
        self.rate = float(rate)
        self.initial = Rotation.from_rotvec(np.asarray(initial_rotvec, dtype=float))
        super().__init__(PeriodicSignal.constant_vector(self.rate * self.axis, period))
        if self.closure_defect() > 1e-9:
            logger.warning(f"Spin law does not close after tau={period}: vertical drift {self.closure_defect():.3e}")

    def quaternion(self, t: float) -> np.ndarray:
        return (self.initial * Rotation.from_rotvec(self.axis * self.rate * t)).as_quat()

    def to_config(self) -> dict:
        return {"type": self.kind, "axis": self.axis.tolist(), "rate": self.rate,
                "initial_rotvec": self.initial.as_rotvec().tolist()}


class PrecessionFrame(FrameOrientation):
    """Conical precession Q(t) = Rz(W t) Rx(tilt) Rz(-W t) with W = 2 pi n / tau.

    The body zeta-axis traces a cone of half-angle ``tilt`` about e_z without net
    spin; omega_body = W (Q^T e_z - e_z), |omega| = 2 W sin(tilt/2),
    |omega_dot| = W^2 sin(tilt).
    """

    kind = "precession"

    def __init__(self, tilt: float, period: float, harmonic: int = 1):
        self.tilt = float(tilt)
        self.harmonic = int(harmonic)
        self.rate = 2.0 * np.pi * self.harmonic / period
        W, s, c = self.rate, np.sin(self.tilt), np.cos(self.tilt)
        omega = PeriodicSignal(
            period=period,
            constant=np.array([0.0, 0.0, W * (c - 1.0)]),
            terms=(HarmonicTerm(0, self.harmonic, 0.0, -W * s), HarmonicTerm(1, self.harmonic, W * s, 0.0)),
        )
        super().__init__(omega)

    def quaternion(self, t: float) -> np.ndarray:
        spin = Rotation.from_rotvec([0.0, 0.0, self.rate * t])
        return (spin * Rotation.from_rotvec([self.tilt, 0.0, 0.0]) * spin.inv()).as_quat()

    def vertical(self, t: float) -> np.ndarray:
        phase = self.rate * t
        s = np.sin(self.tilt)
        return np.array([-s * np.sin(phase), s * np.cos(phase), np.cos(self.tilt)])

    def to_config(self) -> dict:
        return {"type": self.kind, "tilt": self.tilt, "harmonic": self.harmonic}


class IntegratedFrame(FrameOrientation):
    """Orientation from integrating dq/dt = 1/2 q (x) omega(t) with RK4 and per-step renormalization.

    One period is tabulated; later times reuse it through
    q(t + n tau) = (q(tau) q0^*)^n q(t).
    """

    kind = "integrated"

    def __init__(self, omega_signal: PeriodicSignal, steps: int = 4096, initial_rotvec=(0.0, 0.0, 0.0)):
        super().__init__(omega_signal)
        self.steps = int(steps)
        self.dt = self.period / self.steps
        self.q0 = Rotation.from_rotvec(np.asarray(initial_rotvec, dtype=float)).as_quat()
        table = np.empty((self.steps + 1, 4))
        table[0] = self.q0
        for j in range(self.steps):
            table[j + 1] = self._rk4(table[j], j * self.dt, self.dt)
        self._table = table
        self._monodromy = quat_mul(table[-1], quat_conj(self.q0))
        logger.info(f"Integrated frame tabulated: {self.steps} steps, closure defect {self.closure_defect():.3e}")

    def _rk4(self, q: np.ndarray, t: float, h: float) -> np.ndarray:
        k1 = quat_rate(q, self.omega(t))
        k2 = quat_rate(q + 0.5 * h * k1, self.omega(t + 0.5 * h))
        k3 = quat_rate(q + 0.5 * h * k2, self.omega(t + 0.5 * h))
        k4 = quat_rate(q + h * k3, self.omega(t + h))
        q_next = q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return q_next / np.linalg.norm(q_next)

    def quaternion(self, t: float) -> np.ndarray:
        n = int(np.floor(t / self.period))
        r = t - n * self.period
        j = min(int(r / self.dt), self.steps - 1)
        q = self._table[j]
        rest = r - j * self.dt
        if rest > 0:
            q = self._rk4(q, j * self.dt, rest)
        if n != 0:
            lead = self._monodromy if n > 0 else quat_conj(self._monodromy)
            for _ in range(abs(n)):
                q = quat_mul(lead, q)
            q = q / np.linalg.norm(q)
        return q

    def to_config(self) -> dict:
        return {"type": self.kind, "steps": self.steps}


# ---------------------------------------------------------------------------
# State and the moving plane
# ---------------------------------------------------------------------------

@dataclass
class State:
    """Time, position and velocity; arrays may carry a leading batch axis"""
    t: float
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)

    def copy(self) -> "State":
        return State(self.t, self.position.copy(), self.velocity.copy())

    def to_dict(self) -> dict:
        return {"t": self.t, "position": self.position.tolist(), "velocity": self.velocity.tolist()}


def plane_f(t: float, rho: np.ndarray, frame: FrameOrientation) -> np.ndarray:
    """f = (world e_z in body coordinates) . rho; rho_z for a fixed frame"""
    return np.asarray(rho, dtype=float) @ frame.vertical(t)


def plane_f_dot(t: float, rho: np.ndarray, v: np.ndarray, frame: FrameOrientation,
                omega: Optional[np.ndarray] = None) -> np.ndarray:
    """Total derivative of f along (rho, v): e . (omega x rho) + e . v"""
    e = frame.vertical(t)
    w = frame.omega(t) if omega is None else np.asarray(omega, dtype=float)
    return (np.cross(w, rho) + v) @ e


def plane_f_ddot(t: float, rho: np.ndarray, v: np.ndarray, accel: np.ndarray,
                 frame: FrameOrientation) -> np.ndarray:
    """Second derivative of f: e . (a + omega_dot x rho + omega x (omega x rho) + 2 omega x v)"""
    e = frame.vertical(t)
    w, w_dot = frame.omega(t), frame.omega_dot(t)
    world_like = accel + np.cross(w_dot, rho) + np.cross(w, np.cross(w, rho)) + 2.0 * np.cross(w, v)
    return world_like @ e


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------

@dataclass
class SurfaceChart:
    """Graph chart over the tangent plane at an anchor point.

    Positions: rho = anchor + x1 e1 + x2 e2 + h n0, with h solved by Newton so
    that s(rho) = 0. Velocities: v = u1 e1 + u2 e2 + w n0 with grad s . v = 0.
    Both inverses are the plain projections onto e1, e2, so round trips are exact
    up to the Newton tolerance.
    """
    surface: Surface
    anchor: np.ndarray
    min_cos: float = 0.05
    normal: np.ndarray = field(init=False)
    e1: np.ndarray = field(init=False)
    e2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.anchor = self.surface.project(np.asarray(self.anchor, dtype=float))
        self.normal, self.e1, self.e2 = self.surface.tangent_basis(self.anchor)

    def _check_valid(self, rho: np.ndarray):
        cos = np.sum(self.surface.normal(rho) * self.normal, axis=-1)
        if np.any(cos < self.min_cos):
            raise ChartError("chart used too far from its anchor", {"min_cos": float(np.min(cos))})

    def is_valid(self, rho: np.ndarray) -> np.ndarray:
        return np.sum(self.surface.normal(rho) * self.normal, axis=-1) >= self.min_cos

    def to_ambient(self, x: np.ndarray, tol: float = 1e-15, max_iter: int = 50) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        base = self.anchor + x[..., :1] * self.e1 + x[..., 1:2] * self.e2
        h = np.zeros(x.shape[:-1])
        for _ in range(max_iter):
            rho = base + h[..., None] * self.normal
            s = self.surface.value(rho)
            slope = np.sum(self.surface.gradient(rho) * self.normal, axis=-1)
            if np.any(slope <= 0):
                raise ChartError("chart projection diverged", {"x": x.tolist()})
            step = s / slope
            h = h - step
            if np.all(np.abs(step) <= tol * (1.0 + np.abs(h))):
                break
        else:
            raise ChartError("chart projection did not converge", {"x": x.tolist()})
        rho = base + h[..., None] * self.normal
        self._check_valid(rho)
        return rho

    def from_ambient(self, rho: np.ndarray) -> np.ndarray:
        d = np.asarray(rho, dtype=float) - self.anchor
        return np.stack([d @ self.e1, d @ self.e2], axis=-1)

    def velocity_to_ambient(self, rho: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        planar = u[..., :1] * self.e1 + u[..., 1:2] * self.e2
        grad = self.surface.gradient(rho)
        w = -np.sum(grad * planar, axis=-1) / np.sum(grad * self.normal, axis=-1)
        return planar + w[..., None] * self.normal

    def velocity_from_ambient(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.stack([v @ self.e1, v @ self.e2], axis=-1)

    def lift(self, x4: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """4-dim chart point (x1, x2, u1, u2) -> (rho, v)"""
        x4 = np.asarray(x4, dtype=float)
        rho = self.to_ambient(x4[..., :2])
        return rho, self.velocity_to_ambient(rho, x4[..., 2:])

    def lower(self, rho: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.concatenate([self.from_ambient(rho), self.velocity_from_ambient(v)], axis=-1)


def surface_chart(surface: Surface, anchor: np.ndarray) -> SurfaceChart:
    return SurfaceChart(surface, np.asarray(anchor, dtype=float))


def top_point(surface: Surface, frame: FrameOrientation, t: float = 0.0) -> np.ndarray:
    """Surface point straight above the origin at time t"""
    return surface.radial_point(frame.vertical(t))
