"""Binned measures on the circle at infinity, Poisson inversion and the Type I/II classifier."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InsufficientDataError, SolverError
from .hypdisk import TWO_PI

MIN_SAMPLES = 1000
WEIGHT_TOL = 1e-12
ORIGIN_TOL = 0.05


@dataclass
class EmpiricalBoundaryMeasure:
    """Weights of ``B`` equal angle bins; bin ``b`` is centred at ``2 pi b / B``."""

    weights: np.ndarray
    n_samples: int = 0
    residual: float | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0):
            raise ValueError("negative weight")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        self.weights = w

    @property
    def n_bins(self) -> int:
        return self.weights.size

    @property
    def bin_centers(self) -> np.ndarray:
        return np.arange(self.n_bins) * (TWO_PI / self.n_bins)

    def rotated(self, shift: int) -> "EmpiricalBoundaryMeasure":
        return EmpiricalBoundaryMeasure(np.roll(self.weights, shift), self.n_samples, self.residual)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "weight"])
            for c, x in zip(self.bin_centers, self.weights):
                w.writerow([repr(float(c)), repr(float(x))])


def _normalized(w):
    w = np.asarray(w, dtype=float)
    w = w / w.sum()
    # absorb the last rounding error so the sum is 1 to the last bit where possible
    w[np.argmax(w)] += 1.0 - w.sum()
    return np.maximum(w, 0.0)


def bin_index(theta, B: int):
    """Bin of each angle under the centred-bin convention."""
    return np.floor(np.mod(np.asarray(theta, dtype=float), TWO_PI) * (B / TWO_PI) + 0.5).astype(np.int64) % B


def hitting_measure(exit_angles, B: int) -> EmpiricalBoundaryMeasure:
    """Normalized histogram of exit angles in ``B`` equal bins."""
    a = np.asarray(exit_angles, dtype=float)
    a = a[np.isfinite(a)]
    if a.size < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} exit angles, got {a.size}")
    counts = np.bincount(bin_index(a, B), minlength=B)
    return EmpiricalBoundaryMeasure(_normalized(counts), int(a.size))


def counts_of(mu: EmpiricalBoundaryMeasure) -> np.ndarray:
    return np.rint(mu.weights * mu.n_samples)


# ---------------------------------------------------------------------------
# Poisson inversion


def inversion_grid(n_rings: int = 4, n_angles: int = 64, radius: float = 0.8) -> np.ndarray:
    """Origin plus ``n_rings`` rings of ``n_angles`` points up to Euclidean ``radius``.

    With ``n_angles`` a multiple of the bin count the kernel matrix is
    block-circulant, which keeps rotation-invariant solutions exact.
    """
    rings = radius * np.arange(1, n_rings + 1) / n_rings
    ang = np.arange(n_angles) * (TWO_PI / n_angles)
    pts = (rings[:, None] * np.exp(1j * ang[None, :])).ravel()
    return np.concatenate([[0.0 + 0.0j], pts])


def kernel_matrix(points, B: int) -> np.ndarray:
    """``K[g, b] = k_{xi_b}(u_g)`` with ``xi_b`` the bin centres."""
    u = np.asarray(points, dtype=complex)[:, None]
    xi = np.exp(1j * np.arange(B) * (TWO_PI / B))[None, :]
    return (1 - np.abs(u) ** 2) / np.abs(xi - u) ** 2


def poisson_inverse(h_samples, B: int, ridge: float = 1e-6, points=None) -> EmpiricalBoundaryMeasure:
    """Nonnegative ridge-regularized solution of ``h = sum_b k_{xi_b} w_b``.

    ``points`` are the grid points where ``h`` was sampled (default
    :func:`inversion_grid`).  The returned measure carries the relative L2
    residual ``|K w - h| / |h|`` of the unnormalized solution.
    """
    pts = inversion_grid() if points is None else np.asarray(points, dtype=complex)
    h = np.asarray(h_samples, dtype=float)
    if h.shape != pts.shape:
        raise ValueError("h_samples and points differ in shape")
    if pts.size < B:
        raise ValueError(f"need at least B = {B} grid points, got {pts.size}")
    if np.any(~(h > 0)):
        raise ValueError("h_samples must be positive")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    at_origin = np.nonzero(pts == 0)[0]
    if at_origin.size and abs(h[at_origin[0]] - 1.0) > ORIGIN_TOL:
        raise ValueError(f"h at the origin is {h[at_origin[0]]:.4g}; normalize h to 1 there")
    K = kernel_matrix(pts, B)
    A = np.vstack([K, math.sqrt(ridge) * np.eye(B)])
    rhs = np.concatenate([h, np.zeros(B)])
    try:
        w, _ = optimize.nnls(A, rhs, maxiter=10 * B)
    except RuntimeError as exc:
        raise SolverError(f"active-set iteration exceeded {10 * B} steps") from exc
    if not w.sum() > 0:
        raise SolverError("solution vanished")
    res = float(np.linalg.norm(K @ w - h) / np.linalg.norm(h))
    return EmpiricalBoundaryMeasure(_normalized(w), int(pts.size), res)


def forward_map(mu: EmpiricalBoundaryMeasure, points=None) -> np.ndarray:
    pts = inversion_grid() if points is None else np.asarray(points, dtype=complex)
    return kernel_matrix(pts, mu.n_bins) @ mu.weights


def mass_near(mu: EmpiricalBoundaryMeasure, theta: float, half_width: int = 2) -> float:
    """Mass of the bins within ``half_width`` bins of the bin containing ``theta``."""
    b = int(bin_index(theta, mu.n_bins))
    idx = (b + np.arange(-half_width, half_width + 1)) % mu.n_bins
    return float(mu.weights[idx].sum())


# ---------------------------------------------------------------------------
# Classification and singularity diagnostics


@dataclass(frozen=True)
class TypeVerdict:
    verdict: str
    max_atom: float
    support_fraction: float
    thresholds: dict
    n_samples: int = 0

    def __post_init__(self):
        for name in ("max_atom", "support_fraction"):
            v = getattr(self, name)
            if not -1e-12 <= v <= 1 + 1e-12:
                raise ValueError(f"{name} = {v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "max_atom": self.max_atom,
                "support_fraction": self.support_fraction, "thresholds": self.thresholds,
                "n_samples": self.n_samples}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def max_window_mass(weights, width: int = 3) -> float:
    w = np.asarray(weights, dtype=float)
    ext = np.concatenate([w, w[:width - 1]])
    return float(np.convolve(ext, np.ones(width), mode="valid").max())


def classify_type(mu: EmpiricalBoundaryMeasure, atom_threshold: float = 0.9,
                  support_threshold: float = 0.95, floor: float | None = None) -> TypeVerdict:
    """TypeI if some 3-bin window holds ``atom_threshold`` of the mass, TypeII if the
    bins above ``floor`` cover ``support_threshold`` of the circle, else Indeterminate."""
    B = mu.n_bins
    floor = 1.0 / (10 * B) if floor is None else floor
    max_atom = min(1.0, max_window_mass(mu.weights, 3))
    support = float(np.count_nonzero(mu.weights > floor)) / B
    if max_atom >= atom_threshold:
        verdict = "TypeI"
    elif support >= support_threshold:
        verdict = "TypeII"
    else:
        verdict = "Indeterminate"
    thresholds = {"atom_threshold": atom_threshold, "support_threshold": support_threshold, "floor": floor}
    return TypeVerdict(verdict, max_atom, support, thresholds, mu.n_samples)


def mass_support(mu: EmpiricalBoundaryMeasure, q: float) -> np.ndarray:
    """Fewest bins holding mass ``>= q`` (heaviest first; ties by bin index)."""
    order = np.lexsort((np.arange(mu.n_bins), -mu.weights))
    cum = np.cumsum(mu.weights[order])
    k = int(np.searchsorted(cum, q - 1e-12)) + 1
    return np.sort(order[:min(k, mu.n_bins)])


def singularity_stat(mu: EmpiricalBoundaryMeasure, q: float = 0.9) -> float:
    """Fraction of the circle (in bins) needed to hold mass ``q``."""
    return mass_support(mu, q).size / mu.n_bins


def disjoint_supports(mu1: EmpiricalBoundaryMeasure, mu2: EmpiricalBoundaryMeasure, q: float = 0.99):
    """Whether the minimal ``q``-mass bin sets are disjoint; returns ``(flag, overlap size)``."""
    if mu1.n_bins != mu2.n_bins:
        raise ValueError("measures use different bins")
    common = np.intersect1d(mass_support(mu1, q), mass_support(mu2, q))
    return common.size == 0, int(common.size)
