"""Heat kernel of the hyperbolic plane for the generator Delta, by quadrature.

The kernel depends only on the distance ``r`` and is given by the classical
integral

    p_t(r) = sqrt(2) e^{-t/4} / (4 pi t)^{3/2}
             * int_r^inf s e^{-s^2/4t} / sqrt(cosh s - cosh r) ds.

Substituting ``s = r + v^2`` removes the inverse square-root singularity, so
plain adaptive quadrature reaches near machine precision.  Values are
returned relative to hyperbolic area, i.e. ``int p_t dvol = 1``.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .errors import ParameterError, QuadratureError
from .hypdisk import BoundaryPoint

QUAD_RTOL = 1e-8
N_NODES = 800
TAIL = 45.0  # exponent at which the gaussian factor is treated as zero


def _check_t(t):
    if not (t > 0 and math.isfinite(t)):
        raise ParameterError(f"t must be positive, got {t}")


def _log_prefactor(t):
    return 0.5 * math.log(2.0) - 0.25 * t - 1.5 * math.log(4 * math.pi * t)


def _integral(r: float, t: float) -> tuple[float, float]:
    """``int_r^inf ...`` with the factor ``exp(-r^2/4t)`` removed; returns (value, abserr)."""
    v_max = math.sqrt(-r + math.sqrt(r * r + 200.0 * t))

    def f(v):
        w = v * v
        s = r + w
        if w < 1e-8:
            shc = 0.5 + w * w / 48.0  # sinh(w/2)/w
        else:
            shc = math.sinh(0.5 * w) / w
        # (cosh s - cosh r) / v^2 = 2 sinh(r + w/2) sinh(w/2) / w
        denom = math.sqrt(2.0 * math.sinh(r + 0.5 * w) * shc)
        if denom == 0.0:
            return 0.0
        return 2.0 * s * math.exp(-w * (2 * r + w) / (4 * t)) / denom

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, 0.0, v_max, epsabs=0.0, epsrel=1e-12, limit=200)
    return val, err


def log_heat_kernel(r: float, t: float) -> float:
    """``log p_t(r)`` by direct adaptive quadrature."""
    _check_t(t)
    r = float(r)
    if r < 0 or not math.isfinite(r):
        raise ParameterError(f"r must be a nonnegative real, got {r}")
    val, err = _integral(r, t)
    if not (val > 0) or err > QUAD_RTOL * val:
        raise QuadratureError(f"heat kernel quadrature at r={r}, t={t}: relative error {err / val:.2e}")
    return _log_prefactor(t) - r * r / (4 * t) + math.log(val)


def heat_kernel_pt(r, t: float):
    """Radial heat kernel ``p_t(r)`` (density of ``X_t`` w.r.t. hyperbolic area, ``X_0`` at distance ``r``)."""
    if np.ndim(r) == 0:
        return math.exp(log_heat_kernel(float(r), t))
    r = np.asarray(r, dtype=float)
    return np.exp(np.vectorize(lambda x: log_heat_kernel(x, t))(r))


def tail_radius(t: float, growth: float = 0.5) -> float:
    """Radius beyond which ``exp(growth r) p_t(r) sinh r`` is below ``e^-45`` (roughly)."""
    # solve r^2/4t - growth r = TAIL
    return 2 * growth * t + math.sqrt(4 * growth * growth * t * t + 4 * t * TAIL)


class HeatKernelEval:
    """Tabulated heat kernel at fixed ``t``.

    ``log p_t`` is evaluated by quadrature on ``n_nodes`` equally spaced radii
    in ``[0, r_max]`` and interpolated by a cubic spline (even in ``r`` at the
    origin).  Beyond ``r_max`` the kernel is taken as 0.
    """

    def __init__(self, t: float, r_max: float | None = None, n_nodes: int = N_NODES):
        _check_t(t)
        self.t = float(t)
        self.r_max = float(r_max) if r_max is not None else tail_radius(t, 1.5) + 2.0
        self.nodes = np.linspace(0.0, self.r_max, n_nodes)
        self.log_values = np.array([log_heat_kernel(r, t) for r in self.nodes])
        self._spline = CubicSpline(self.nodes, self.log_values, bc_type=((1, 0.0), "not-a-knot"))
        dens = 2 * math.pi * np.sinh(self.nodes) * np.exp(self.log_values)
        self._cdf = CubicSpline(self.nodes, dens).antiderivative()

    def log_pdf(self, r):
        r = np.asarray(r, dtype=float)
        out = self._spline(np.minimum(r, self.r_max))
        return np.where(r <= self.r_max, out, -np.inf)

    def __call__(self, r):
        return np.exp(self.log_pdf(r))

    def radial_cdf(self, r):
        """``P(d(0, X_t) <= r)`` for a path started at the origin."""
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.r_max)
        return np.clip(self._cdf(r), 0.0, 1.0)


def _gauss_legendre(a, b, n_panels, order):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def normalization(t: float, order: int = 16, n_panels: int = 40) -> float:
    """``int_0^inf 2 pi sinh(r) p_t(r) dr`` by direct quadrature at Gauss-Legendre nodes."""
    r_max = tail_radius(t)
    r, w = _gauss_legendre(0.0, r_max, n_panels, order)
    logp = np.array([log_heat_kernel(x, t) for x in r])
    return float(np.sum(w * 2 * math.pi * np.sinh(r) * np.exp(logp)))


def _distance_from_polar(r, theta, rho, phi):
    """Distance between the points at polar coordinates (r, theta) and (rho, phi) about 0."""
    c = np.cosh(r) * math.cosh(rho) - np.sinh(r) * math.sinh(rho) * np.cos(theta - phi)
    return np.arccosh(np.maximum(c, 1.0))


def _polar_kernel(r, theta, xi_angle):
    """``k_xi`` at the point at distance ``r`` from 0 in direction ``theta``."""
    # cosh r - sinh r cos a written without cancellation at large r
    return 1.0 / (np.exp(-r) + 2.0 * np.sinh(r) * np.sin(0.5 * (theta - xi_angle)) ** 2)


def semigroup_residual(t: float, test_radii=(0.0, 0.5, 1.0, 2.0, 3.0), n_theta: int = 1024):
    """Max relative error of ``p_{2t}(d(0,y)) = int p_t(d(0,w)) p_t(d(w,y)) dvol(w)`` over test points."""
    pt, p2t = HeatKernelEval(t), HeatKernelEval(2 * t)
    r, wr = _gauss_legendre(0.0, tail_radius(t) + max(test_radii), 60, 16)
    theta = np.arange(n_theta) * (2 * math.pi / n_theta)
    worst = 0.0
    for rho in test_radii:
        d = _distance_from_polar(r[:, None], theta[None, :], rho, 0.0)
        inner = (pt(d).sum(axis=1) * (2 * math.pi / n_theta))
        val = float(np.sum(wr * np.sinh(r) * pt(r) * inner))
        exact = float(p2t(rho))
        worst = max(worst, abs(val - exact) / exact)
    return worst


def q_kernel_check(xi, t: float, x=0.0, **kw) -> float:
    """Larger of the two residuals of :func:`q_kernel_residuals`."""
    return max(q_kernel_residuals(xi, t, x, **kw))


def q_kernel_residuals(xi, t: float, x=0.0, n_theta: int = 4096, n_theta_ck: int = 1024,
                       ck_radii=(0.3, 0.7, 1.2, 2.0, 3.0), h_constant: bool = False):
    """Residuals of the reverse kernel ``q_t(x,y) = (k(y)/k(x)) p_t(d(x,y))`` identities.

    Returns ``|int q_t(x, y) dvol(y) - 1|`` and the maximal relative
    Chapman-Kolmogorov error ``q_{2t}(x, y)`` versus
    ``int q_t(x, w) q_t(w, y) dvol(w)`` at test points ``y`` at the given
    distances from ``x``.  ``h_constant`` replaces ``k_xi`` by 1.

    Integrals use polar coordinates around ``x``.  With ``x`` moved to the
    origin by an isometry, ``k_xi`` becomes a multiple of ``k_xi'`` for the
    transported boundary angle ``xi'``; the multiple cancels in ``q``.
    """
    _check_t(t)
    theta_xi = xi.theta if isinstance(xi, BoundaryPoint) else float(xi)
    x = complex(x)
    # isometry T with T(0) = x; transport xi by T^{-1}
    w_xi = np.exp(1j * theta_xi)
    xi_loc = float(np.angle((w_xi - x) / (1 - np.conj(x) * w_xi)))

    def k(r, th):
        return np.ones(np.broadcast(r, th).shape) if h_constant else _polar_kernel(r, th, xi_loc)

    growth = 0.5 if h_constant else 1.5
    pt, p2t = HeatKernelEval(t), HeatKernelEval(2 * t)
    r, wr = _gauss_legendre(0.0, tail_radius(t, growth), 60, 16)

    theta = np.arange(n_theta) * (2 * math.pi / n_theta)
    inner = k(r[:, None], theta[None, :]).sum(axis=1) * (2 * math.pi / n_theta)
    norm_res = abs(float(np.sum(wr * np.sinh(r) * pt(r) * inner)) - 1.0)

    r2, wr2 = _gauss_legendre(0.0, tail_radius(t, growth) + max(ck_radii), 60, 16)
    theta = np.arange(n_theta_ck) * (2 * math.pi / n_theta_ck)
    ck_res = 0.0
    for j, rho in enumerate(ck_radii):
        phi = xi_loc + 1.0 + 0.7 * j  # spread test points around x
        k_y = float(k(rho, phi))
        kw = k(r2[:, None], theta[None, :])
        d = _distance_from_polar(r2[:, None], theta[None, :], rho, phi)
        # q_t(x, w) q_t(w, y) with k(x) = 1, evaluated factor by factor
        integrand = (kw * pt(r2)[:, None]) * (k_y / kw * pt(d))
        val = float(np.sum(wr2 * np.sinh(r2) * integrand.sum(axis=1)) * (2 * math.pi / n_theta_ck))
        exact = k_y * float(p2t(rho))
        if not math.isfinite(val):
            raise QuadratureError(f"non-finite Chapman-Kolmogorov integral at test radius {rho}")
        ck_res = max(ck_res, abs(val - exact) / exact)
    if not math.isfinite(norm_res):
        raise QuadratureError("non-finite normalization integral")
    return norm_res, ck_res
