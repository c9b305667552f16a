"""The additive cocycle ``A_t = log h(X_t) - log h(X_0)`` and the characteristic exponent.

Exact mode uses ``h = k_xi`` on a leaf of the boundary-action suspension
(or a constant for finite transverse spaces).  Estimated mode reads ``h``
off an occupation grid.  Lifts are never formed explicitly over long
horizons; the chart values and the accumulated transverse Jacobian give
``log h`` of the lift directly (see :mod:`leafwise.suspension`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import PathRecord, check_step_params
from .errors import DomainError, InsufficientDataError, ParameterError
from .hypdisk import EPS_BOUNDARY, TWO_PI, BoundaryPoint
from .suspension import (BoundaryAction, FoliatedEnsemble, OccupationGrid, TransverseSystem,
                         boundary_drift)
from .tessellation import FuchsianSetup

MIN_PATHS = 100
MIN_HORIZON = 20.0


@dataclass
class CocycleSeries:
    times: np.ndarray
    values: np.ndarray
    mode: str = "exact"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.times.size:
            raise ValueError("times and values differ in length")
        if np.any(self.values[..., 0] != 0):
            raise ValueError("A_0 must vanish")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite cocycle values")

    @property
    def final(self):
        return self.values[..., -1]


@dataclass
class ExponentEstimate:
    lambda_: float
    stderr: float
    horizon: float
    n_paths: int
    mode: str = "forward"
    dt: float | None = None
    grid_resolution: list | None = None
    h_mode: str = "exact"

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be nonnegative")

    def to_dict(self) -> dict:
        return {"lambda": self.lambda_, "stderr": self.stderr, "mode": self.mode,
                "n_paths": self.n_paths, "horizon": self.horizon, "dt": self.dt,
                "grid_resolution": self.grid_resolution, "h_mode": self.h_mode}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def a_t_exact(path: PathRecord, xi) -> CocycleSeries:
    """Cocycle of ``k_xi`` along a path of universal-cover points."""
    theta = xi.theta if isinstance(xi, BoundaryPoint) else float(xi)
    z = np.asarray(path.z, dtype=complex)
    s = 1.0 - (z.real ** 2 + z.imag ** 2)
    if np.any(~(s >= EPS_BOUNDARY)):
        raise DomainError("lift outside the representable disk")
    logk = np.log(s) - np.log(np.abs(np.exp(1j * theta) - z) ** 2)
    return CocycleSeries(path.times, logk - logk[0], "exact")


def cocycle_from_log_h(times, log_h, mode: str = "exact") -> CocycleSeries:
    log_h = np.asarray(log_h, dtype=float)
    return CocycleSeries(times, log_h - log_h[..., :1], mode)


# ---------------------------------------------------------------------------
# Estimated h


@dataclass
class EstimatedH:
    """Per-cell estimate of ``h`` from an occupation grid.

    ``values`` is ``counts / volume`` with mean 1 over each plaque
    (z-bin).  ``z_density`` is the transverse occupation density per unit
    of z (per class for finite spaces), needed to continue ``h`` across
    plaques.
    """

    grid: OccupationGrid
    values: np.ndarray
    z_density: np.ndarray
    discrete: bool = False
    _log_full: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._log_full = np.log(self.values) + np.log(self.z_density)[None, :]

    @property
    def resolution(self) -> list:
        return [self.grid.cells.n_cells, self.grid.n_z]

    def log_density(self, u, z):
        """``log(h * z_density)``: cellwise in u, linear in z between bin centres (periodic)."""
        cell = self.grid.cells.locate(u)
        table = self._log_full
        if self.discrete:
            return table[cell, np.asarray(z, dtype=np.int64)]
        n = self.grid.n_z
        x = np.asarray(z, dtype=float) * (n / TWO_PI) - 0.5
        j0 = np.floor(x).astype(np.int64)
        f = x - j0
        return (1 - f) * table[cell, j0 % n] + f * table[cell, (j0 + 1) % n]


def estimate_h(grid: OccupationGrid) -> EstimatedH:
    """``h_est(u, z) = counts / volume``, normalized to plaque mean 1 per z-bin."""
    dt = grid.metadata.get("dt", 0.0)
    z_tot = grid.z_marginal()
    for j, tot in enumerate(z_tot):
        if tot < 100 * dt:
            raise InsufficientDataError(f"z-bin {j} has occupation {tot:.3g} < {100 * dt:.3g}")
    empty = np.argwhere(grid.counts <= 0)
    if empty.size:
        i, j = empty[0]
        raise InsufficientDataError(f"cell (u_bin={i}, z_bin={j}) was never visited")
    dens = grid.counts / grid.volumes[:, None]
    vals = dens / dens.mean(axis=0, keepdims=True)
    discrete = grid.metadata.get("variant") == "FinitePermutation"
    width = 1.0 if discrete else TWO_PI / grid.n_z
    z_density = z_tot / grid.total_time / width
    return EstimatedH(grid, vals, z_density, discrete)


# ---------------------------------------------------------------------------
# Ensembles


@dataclass
class CocycleEnsemble:
    """``A_t`` sampled at ``times`` for every path (rows)."""

    times: np.ndarray
    values: np.ndarray
    mode: str
    h_mode: str
    dt: float
    extra: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def series(self, i: int) -> CocycleSeries:
        return CocycleSeries(self.times, self.values[i], self.h_mode)


def run_cocycle(setup: FuchsianSetup, system: TransverseSystem, n_paths: int, horizon: float,
                dt: float, seed: int, mode: str = "forward", xi0: float = 0.0, h_est: EstimatedH | None = None,
                record_every: float = 1.0, first_path: int = 0, u0=0.0, track_matrix: bool = False):
    """Sample ``A_t`` along foliated paths started at ``(u0, xi0)``.

    ``mode`` is ``forward`` (plain leafwise motion) or ``reverse`` (the
    h-transform, exact boundary-action h only).  Without ``h_est`` the exact
    h is used: ``k_{xi0}`` for circle variants that are the boundary action,
    a constant for finite transverse spaces.
    """
    n_steps = check_step_params(horizon, dt)
    every = max(1, int(round(record_every / dt)))
    exact_kernel = h_est is None and isinstance(system, BoundaryAction)
    if h_est is None and not (exact_kernel or system.discrete):
        raise ValueError("exact h is only known for the boundary action and finite systems")
    if mode not in ("forward", "reverse"):
        raise ValueError(f"unknown mode {mode!r}")
    drift = None
    if mode == "reverse":
        if not exact_kernel:
            raise ValueError("reverse mode needs the exact boundary-action h")
        drift = boundary_drift
    ids = np.arange(first_path, first_path + n_paths)
    ens = FoliatedEnsemble(setup, system, u0, xi0, dt, seed, ids, drift=drift, track_matrix=track_matrix)

    def log_h():
        if exact_kernel:
            return ens.log_kernel_lift()
        if h_est is None:
            return np.zeros(ens.n_paths)
        return h_est.log_density(ens.u, ens.z) - ens.log_jac

    rows = [log_h()]
    times = [0.0]
    done = 0
    while done < n_steps:
        m = min(every, n_steps - done)
        ens.run(m)
        done += m
        rows.append(log_h())
        times.append(done * dt)
    vals = np.array(rows).T
    vals = vals - vals[:, :1]
    extra = {"grid_resolution": h_est.resolution if h_est is not None else None}
    if track_matrix:
        extra["lift_distance"] = ens.lift_distance()
    h_mode = "exact" if h_est is None else "estimated"
    return CocycleEnsemble(np.array(times), vals, mode, h_mode, dt, extra)


def estimate_lambda(paths, mode: str | None = None, horizon: float | None = None) -> ExponentEstimate:
    """``lambda = -mean(A_T)/T`` (forward) or ``+mean(A_T)/T`` (reverse / h-transform ensemble).

    ``paths`` is a :class:`CocycleEnsemble` or a list of :class:`CocycleSeries`.
    """
    if isinstance(paths, CocycleEnsemble):
        final = paths.values[:, -1]
        T = paths.horizon
        mode = mode or paths.mode
        dt, h_mode = paths.dt, paths.h_mode
        resolution = paths.extra.get("grid_resolution")
    else:
        resolution = None
        paths = list(paths)
        final = np.array([p.final for p in paths], dtype=float)
        T = horizon if horizon is not None else float(paths[0].times[-1]) if paths else 0.0
        dt, h_mode = None, paths[0].mode if paths else "exact"
    if mode not in ("forward", "reverse"):
        raise ValueError(f"unknown mode {mode!r}")
    if final.size < MIN_PATHS:
        raise InsufficientDataError(f"need at least {MIN_PATHS} paths, got {final.size}")
    if T < MIN_HORIZON:
        raise ParameterError(f"horizon must be at least {MIN_HORIZON}, got {T}")
    sign = -1.0 if mode == "forward" else 1.0
    lam = sign * float(np.mean(final)) / T
    err = float(np.std(final, ddof=1)) / T / math.sqrt(final.size)
    return ExponentEstimate(lam + 0.0, err, T, int(final.size), mode, dt, resolution, h_mode)
