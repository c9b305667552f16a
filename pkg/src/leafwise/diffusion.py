"""Brownian motion on the disk (generator = hyperbolic Laplacian) and its Doob h-transforms.

In chart coordinates the generator is ``a(z) * Delta_euclid`` with
``a(z) = (1 - |z|^2)^2 / 4``, so an Euler step adds independent Gaussian
increments of standard deviation ``(1 - |z|^2) sqrt(dt / 2)`` to each
coordinate.  The h-transform adds the chart drift ``2 a(z) grad log h(z)``.

Near the boundary (``1 - |z|^2 < 0.01``) a step that would lose more than
half of the remaining gap is refined: its Brownian increment is split by a
Brownian bridge into two half steps, recursively, up to 20 halvings.  The
driving Brownian path is unchanged by the refinement.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergingDriftError, DomainError, ParameterError
from .hypdisk import EPS_BOUNDARY, DiskPoint
from .rng import PathStreams, event_generator

MAX_DT = 0.01
BOUNDARY_GAP = 0.01
MAX_HALVINGS = 20
EXIT_R2 = 1.0 - 1e-6
MAX_DRIFT_STEP = 0.5
CHUNK = 64


@dataclass
class PathRecord:
    times: np.ndarray
    z: np.ndarray  # complex chart coordinates
    seed: int
    step: float

    def __post_init__(self):
        if len(self.times) != len(self.z):
            raise ValueError("times and points differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def points(self) -> list:
        return [DiskPoint(float(w.real), float(w.imag)) for w in self.z]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y"])
            for t, w in zip(self.times, self.z):
                writer.writerow([repr(float(t)), repr(float(w.real)), repr(float(w.imag))])


def check_step_params(horizon: float, dt: float) -> int:
    if not (isinstance(dt, (int, float)) and 0 < dt <= MAX_DT):
        raise ParameterError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ParameterError(f"horizon must be positive, got {horizon}")
    return int(math.ceil(horizon / dt - 1e-9))


def _as_complex_grad(g):
    g = np.asarray(g)
    if np.iscomplexobj(g):
        return g
    return g[..., 0] + 1j * g[..., 1]


def chart_drift(z, grad_log_h):
    """``2 a(z) grad log h(z)`` as a complex chart vector, or ``0`` without a transform."""
    if grad_log_h is None:
        return 0.0
    s = 1.0 - np.abs(z) ** 2
    return 0.5 * s * s * _as_complex_grad(grad_log_h(z))


def _step_ok(z_old, z_new, drift_step):
    s_old = 1.0 - abs(z_old) ** 2
    s_new = 1.0 - abs(z_new) ** 2
    if not math.isfinite(s_new) or s_new < EPS_BOUNDARY:
        return False
    if abs(drift_step) > MAX_DRIFT_STEP:
        return False
    return s_old >= BOUNDARY_GAP or s_new >= 0.5 * s_old


def refine_step(z, dw, dt, grad_log_h, rng, level=0):
    """One Euler step driven by the complex Brownian increment ``dw`` (variance ``dt`` per axis).

    Splits the step by Brownian-bridge bisection while it is not acceptable.
    """
    def euler(z, dw, dt):
        s = 1.0 - abs(z) ** 2
        drift = complex(chart_drift(np.array([z]), grad_log_h)[0]) * dt if grad_log_h else 0.0
        return z + s * math.sqrt(0.5) * dw + drift, drift

    z_new, drift = euler(z, dw, dt)
    if _step_ok(z, z_new, drift):
        return z_new
    if level >= MAX_HALVINGS:
        if abs(drift) > MAX_DRIFT_STEP:
            raise DivergingDriftError(f"|drift| dt = {abs(drift):.3g} after {MAX_HALVINGS} halvings")
        s_new = 1.0 - abs(z_new) ** 2
        if not math.isfinite(s_new) or s_new < EPS_BOUNDARY:
            raise DomainError("path left the representable disk; use the folded sampler "
                              "(leafwise.suspension) for long horizons")
        return z_new
    n = rng.standard_normal(2)
    half = 0.5 * dw + math.sqrt(0.25 * dt) * complex(n[0], n[1])
    z_mid = refine_step(z, half, 0.5 * dt, grad_log_h, rng, level + 1)
    return refine_step(z_mid, dw - half, 0.5 * dt, grad_log_h, rng, level + 1)


@dataclass
class EnsembleResult:
    """Outcome of :func:`simulate`; arrays are indexed like ``path_ids``."""

    path_ids: np.ndarray
    final: np.ndarray
    exit_step: np.ndarray
    exit_angle: np.ndarray
    snapshots: dict = field(default_factory=dict)
    trajectory: np.ndarray | None = None
    dt: float = 0.0

    @property
    def exited(self) -> np.ndarray:
        return self.exit_step >= 0

    @property
    def exit_time(self) -> np.ndarray:
        return np.where(self.exited, self.exit_step * self.dt, np.nan)


def simulate(starts, n_steps: int, dt: float, seed: int, path_ids=None, grad_log_h=None,
             exit_r2: float | None = None, snapshot_steps=(), record: bool = False,
             chunk: int = CHUNK) -> EnsembleResult:
    """Vectorized Euler-Maruyama over an ensemble of paths.

    ``starts`` is a complex array (or scalar broadcast to ``path_ids``).
    With ``exit_r2`` a path stops at the first step where ``|z|^2 > exit_r2``
    and its angle there is recorded.  ``snapshot_steps`` are step indices at
    which the positions of all paths are stored (frozen positions for paths
    that already exited).
    """
    if path_ids is None:
        path_ids = np.arange(np.size(starts))
    path_ids = np.asarray(path_ids, dtype=np.int64)
    n = path_ids.size
    z = np.broadcast_to(np.asarray(starts, dtype=complex), (n,)).copy()
    if np.any(np.abs(z) ** 2 > 1 - EPS_BOUNDARY):
        raise DomainError("start point outside the disk")
    streams = PathStreams(seed, path_ids)
    exit_step = np.full(n, -1, dtype=np.int64)
    exit_angle = np.full(n, np.nan)
    snaps = {int(s): None for s in snapshot_steps}
    if 0 in snaps:
        snaps[0] = z.copy()
    traj = np.empty((n_steps + 1, n), dtype=complex) if record else None
    if record:
        traj[0] = z
    active = np.arange(n)
    w = z.copy()
    scale = math.sqrt(0.5 * dt)
    sqrt_dt = math.sqrt(dt)
    step = 0
    while step < n_steps and active.size:
        m = min(chunk, n_steps - step)
        noise = streams.normals(m)
        cols = np.arange(active.size)
        chunk_keep = np.ones(active.size, dtype=bool)
        for j in range(m):
            step += 1
            s = 1.0 - (w.real ** 2 + w.imag ** 2)
            dn = noise[j] if cols.size == noise.shape[1] else noise[j, cols]
            new = w + (s * scale) * dn
            if grad_log_h is not None:
                drift = chart_drift(w, grad_log_h) * dt
                new += drift
            s_new = 1.0 - (new.real ** 2 + new.imag ** 2)
            bad = ((s < BOUNDARY_GAP) & (s_new < 0.5 * s)) | ~(s_new >= EPS_BOUNDARY)
            if grad_log_h is not None:
                bad |= np.abs(drift) > MAX_DRIFT_STEP
            if bad.any():
                for i in np.nonzero(bad)[0]:
                    pid = int(path_ids[active[i]])
                    rng = event_generator(seed, pid, step)
                    new[i] = refine_step(complex(w[i]), sqrt_dt * complex(dn[i]), dt,
                                         grad_log_h, rng)
                s_new = 1.0 - (new.real ** 2 + new.imag ** 2)
            w = new
            if record:
                z[active] = w
                traj[step] = z
            if step in snaps:
                z[active] = w
                snaps[step] = z.copy()
            if exit_r2 is not None:
                out = s_new < 1.0 - exit_r2
                if out.any():
                    gone = active[out]
                    z[gone] = w[out]
                    exit_step[gone] = step
                    exit_angle[gone] = np.mod(np.angle(w[out]), 2 * math.pi)
                    keep = ~out
                    chunk_keep[cols[out]] = False
                    active = active[keep]
                    w = w[keep]
                    cols = cols[keep]
                    if not active.size:
                        break
        if not chunk_keep.all():
            streams.drop(chunk_keep)
    z[active] = w
    for s in snaps:
        if snaps[s] is None:
            snaps[s] = z.copy()
    return EnsembleResult(path_ids=path_ids, final=z, exit_step=exit_step, exit_angle=exit_angle,
                          snapshots=snaps, trajectory=traj, dt=dt)


def _start_complex(start):
    if isinstance(start, DiskPoint):
        return start.z
    return complex(start)


def sample_bm(start, horizon: float, dt: float, seed: int, path_index: int = 0) -> PathRecord:
    """Euler-Maruyama path of hyperbolic Brownian motion from ``start``."""
    n_steps = check_step_params(horizon, dt)
    res = simulate(_start_complex(start), n_steps, dt, seed, path_ids=[path_index], record=True)
    return PathRecord(times=np.arange(n_steps + 1) * dt, z=res.trajectory[:, 0], seed=seed, step=dt)


def sample_htransform(start, drift, horizon: float, dt: float, seed: int,
                      path_index: int = 0) -> PathRecord:
    """Path of the h-transform of Brownian motion; ``drift(z)`` returns ``grad log h`` at ``z``."""
    n_steps = check_step_params(horizon, dt)
    res = simulate(_start_complex(start), n_steps, dt, seed, path_ids=[path_index],
                   grad_log_h=drift, record=True)
    return PathRecord(times=np.arange(n_steps + 1) * dt, z=res.trajectory[:, 0], seed=seed, step=dt)


def exit_sample(n_paths: int, dt: float, seed: int, t_max: float, start=0.0, grad_log_h=None,
                snapshot_times=(), first_path: int = 0) -> EnsembleResult:
    """Run ``n_paths`` paths until ``|z|^2 > 1 - 1e-6`` (or ``t_max``) recording exit angles."""
    n_steps = check_step_params(t_max, dt)
    snap_steps = [int(round(t / dt)) for t in snapshot_times]
    ids = np.arange(first_path, first_path + n_paths)
    return simulate(_start_complex(start), n_steps, dt, seed, path_ids=ids, grad_log_h=grad_log_h,
                    exit_r2=EXIT_R2, snapshot_steps=snap_steps)
