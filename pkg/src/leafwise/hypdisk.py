"""Exact geometry of the hyperbolic plane in the Poincare disk model.

Points are handled either as :class:`DiskPoint` / :class:`BoundaryPoint`
values or, on the vectorized paths used by the samplers, as complex numpy
arrays (disk points) and real arrays of angles (boundary points).  The base
point for every normalization is the origin.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError

EPS_BOUNDARY = 1e-12
DET_TOL = 1e-12
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DiskPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"non-finite disk point ({self.x}, {self.y})")
        if self.x * self.x + self.y * self.y > 1.0 - EPS_BOUNDARY:
            raise DomainError(f"point ({self.x}, {self.y}) is not inside the disk")

    @classmethod
    def from_complex(cls, z) -> "DiskPoint":
        z = complex(z)
        return cls(z.real, z.imag)

    @property
    def z(self) -> complex:
        return complex(self.x, self.y)


ORIGIN = DiskPoint(0.0, 0.0)


@dataclass(frozen=True)
class BoundaryPoint:
    theta: float

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise DomainError(f"non-finite boundary angle {self.theta}")
        object.__setattr__(self, "theta", float(self.theta) % TWO_PI)

    @property
    def z(self) -> complex:
        return cmath.exp(1j * self.theta)


@dataclass(frozen=True)
class MobiusIsometry:
    """Orientation-preserving disk isometry ``z -> (a z + b) / (conj(b) z + conj(a))``.

    The matrix ``[[a, b], [conj(b), conj(a)]]`` has determinant
    ``|a|^2 - |b|^2``, which must equal 1 within ``DET_TOL``.
    """

    a: complex
    b: complex

    def __post_init__(self):
        object.__setattr__(self, "a", complex(self.a))
        object.__setattr__(self, "b", complex(self.b))
        det = abs(self.a) ** 2 - abs(self.b) ** 2
        if not math.isfinite(det) or abs(det - 1.0) > DET_TOL * max(1.0, abs(self.a) ** 2):
            raise NumericError(f"determinant {det!r} differs from 1")

    @property
    def c(self) -> complex:
        return self.b.conjugate()

    @property
    def d(self) -> complex:
        return self.a.conjugate()

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @classmethod
    def from_matrix(cls, m, renormalize: bool = False) -> "MobiusIsometry":
        """Build from a 2x2 matrix in disk normal form.

        With ``renormalize`` the matrix is first scaled by ``1/sqrt(det)``,
        which removes the rounding drift of long products.
        """
        m = np.asarray(m, dtype=complex)
        a, b = m[0, 0], m[0, 1]
        if renormalize:
            det = abs(a) ** 2 - abs(b) ** 2
            if det <= 0:
                raise NumericError("matrix does not preserve the disk")
            s = math.sqrt(det)
            a, b = a / s, b / s
        return cls(a, b)

    @classmethod
    def identity(cls) -> "MobiusIsometry":
        return cls(1.0, 0.0)

    @classmethod
    def rotation(cls, angle: float) -> "MobiusIsometry":
        """Euclidean rotation by ``angle`` about the origin."""
        return cls(cmath.exp(0.5j * angle), 0.0)

    @classmethod
    def translation(cls, distance: float, direction: float = 0.0) -> "MobiusIsometry":
        """Hyperbolic translation by ``distance`` along the diameter at angle ``direction``."""
        return cls(math.cosh(0.5 * distance), math.sinh(0.5 * distance) * cmath.exp(1j * direction))

    def __matmul__(self, other: "MobiusIsometry") -> "MobiusIsometry":
        a = self.a * other.a + self.b * other.c
        b = self.a * other.b + self.b * other.d
        return MobiusIsometry.from_matrix([[a, b], [0, 0]], renormalize=True)

    def inverse(self) -> "MobiusIsometry":
        return MobiusIsometry(self.d, -self.b)

    @property
    def trace(self) -> float:
        return 2.0 * self.a.real

    def translation_length(self) -> float:
        """Minimal displacement ``inf_p d(p, g p)``; zero unless hyperbolic."""
        half = abs(self.a.real)
        return 2.0 * math.acosh(half) if half > 1.0 else 0.0

    # Vectorized actions -------------------------------------------------

    def apply_complex(self, z):
        """Act on complex disk coordinates (scalar or array)."""
        return (self.a * z + self.b) / (self.c * z + self.d)

    def apply_angle(self, theta):
        """Act on boundary angles (scalar or array); result in ``[0, 2pi)``."""
        w = np.exp(1j * np.asarray(theta, dtype=float))
        out = np.mod(np.angle((self.a * w + self.b) / (self.c * w + self.d)), TWO_PI)
        return float(out) if np.ndim(out) == 0 else out

    def log_boundary_derivative(self, theta):
        """``log |g'(theta)|`` for the induced circle map."""
        w = np.exp(1j * np.asarray(theta, dtype=float))
        return -2.0 * np.log(np.abs(self.c * w + self.d))


def _disk_array(p):
    """Complex array of disk coordinates with the boundary invariant checked."""
    if isinstance(p, DiskPoint):
        return complex(p.x, p.y)
    z = np.asarray(p, dtype=complex)
    r2 = z.real ** 2 + z.imag ** 2
    if not np.all(np.isfinite(r2)) or np.any(r2 > 1.0 - EPS_BOUNDARY):
        raise DomainError("point(s) outside the representable open disk")
    return z if z.ndim else complex(z)


def _boundary_array(xi):
    """Unit complex number(s) for boundary input: BoundaryPoint or angle(s)."""
    if isinstance(xi, BoundaryPoint):
        return cmath.exp(1j * xi.theta)
    theta = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise DomainError("non-finite boundary angle")
    w = np.exp(1j * theta)
    return w if w.ndim else complex(w)


def _one_minus_r2(z):
    return 1.0 - (np.real(z) ** 2 + np.imag(z) ** 2)


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def hyp_distance(p, q):
    """Hyperbolic distance, ``2 asinh(|p - q| / sqrt((1-|p|^2)(1-|q|^2)))``."""
    zp, zq = _disk_array(p), _disk_array(q)
    s = np.abs(zp - zq) / np.sqrt(_one_minus_r2(zp) * _one_minus_r2(zq))
    return _scalar(2.0 * np.arcsinh(s))


def busemann(xi, p):
    """Busemann function at ``xi`` vanishing at the origin: ``log(|xi - z|^2 / (1 - |z|^2))``."""
    w, z = _boundary_array(xi), _disk_array(p)
    r = np.abs(z)
    # |xi - z|^2 = (1 - r)^2 + 4 r sin^2(half angle): exactly 1 at the origin, stable near xi
    half = 0.5 * np.angle(np.conj(w) * z)
    dist2 = (1.0 - r) ** 2 + 4.0 * r * np.sin(half) ** 2
    return _scalar(np.log(dist2) - np.log(_one_minus_r2(z)))


def poisson_kernel(xi, p):
    """Minimal positive harmonic function ``k_xi = exp(-B_xi)``, equal to 1 at the origin."""
    return _scalar(np.exp(-busemann(xi, p)))


def log_poisson_kernel(xi, p):
    return _scalar(-busemann(xi, p))


def grad_log_poisson(xi, p):
    """Euclidean chart gradient of ``log k_xi`` at ``p``; trailing axis holds (x, y)."""
    w, z = _boundary_array(xi), _disk_array(p)
    g = -2.0 * z / _one_minus_r2(z) - 2.0 * (z - w) / np.abs(w - z) ** 2
    return np.stack([np.real(g), np.imag(g)], axis=-1)


def mobius_apply(g: MobiusIsometry, p):
    """Apply ``g`` to a DiskPoint, a BoundaryPoint, or a complex array of disk points."""
    if isinstance(p, BoundaryPoint):
        return BoundaryPoint(g.apply_angle(p.theta))
    if isinstance(p, DiskPoint):
        return DiskPoint.from_complex(g.apply_complex(p.z))
    return _disk_array(g.apply_complex(_disk_array(p)))


def disk_from_polar(r, theta):
    """Complex coordinates of the point at hyperbolic distance ``r`` from 0 in direction ``theta``."""
    return np.tanh(0.5 * np.asarray(r, dtype=float)) * np.exp(1j * np.asarray(theta, dtype=float))


def radius_of(z):
    """Hyperbolic distance from the origin for complex coordinates (no validation)."""
    return 2.0 * np.arctanh(np.abs(z))
