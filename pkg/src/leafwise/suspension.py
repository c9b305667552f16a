"""Suspension laminations ``M = Gamma \\ (D^2 x Z)`` and leafwise Brownian motion on them.

A state is ``(u, z)`` with ``u`` in the octagon and ``z`` in the transverse
space.  Gamma acts diagonally, ``gamma (p, z) = (gamma p, rho(gamma) z)``.
When the leafwise path leaves the octagon through side ``k`` the fold
emits letter ``k`` (``g_k u_new = u_old``) and the state is replaced by its
``g_k^{-1}`` translate, so ``z <- rho(g_k)^{-1} z``.  After any number of
steps the accumulated word ``W`` satisfies ``lift = W u`` and
``z = rho(W)^{-1} z_0``.

Besides the state the ensemble keeps ``log_jac = sum log |rho(g_k)'(z_new)|``
over all folds (zero for finite transverse spaces).  For the boundary
action it converts chart quantities to lifted ones:
``log k_{z_0}(W u) = log k_z(u) - log_jac``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .diffusion import BOUNDARY_GAP, MAX_DRIFT_STEP, check_step_params, refine_step
from .errors import ConstructionError, DomainError, InsufficientDataError
from .hypdisk import EPS_BOUNDARY, TWO_PI, DiskPoint, MobiusIsometry
from .rng import PathStreams, event_generator
from .tessellation import (INRADIUS, N_SIDES, PAIRING, RELATOR, FuchsianSetup, GroupWord,
                           NAME_TO_LETTER)

GEN_LETTERS = {name: NAME_TO_LETTER[name] for name in ("a1", "b1", "a2", "b2")}
CIRCLE_TOL = 1e-9
N_TEST_ANGLES = 64


# ---------------------------------------------------------------------------
# Transverse systems


def _letters_from_generators(images: dict, inverse) -> list:
    """Images of all eight letters from images of a1, b1, a2, b2."""
    out = [None] * N_SIDES
    for name, k in GEN_LETTERS.items():
        out[k] = images[name]
        out[PAIRING[k]] = inverse(images[name])
    return out


class TransverseSystem:
    """Base class; ``act`` moves transverse coordinates across folds by letter ``k``."""

    kind = "abstract"
    discrete = False

    def act(self, letters, z):
        """``rho(g_k)^{-1} z`` elementwise."""
        raise NotImplementedError

    def log_derivative(self, letters, z_new):
        """``log |rho(g_k)'(z_new)|``; zero for finite transverse spaces."""
        return np.zeros(np.shape(z_new))

    def relator_residual(self) -> float:
        raise NotImplementedError

    def z_bin(self, z, n_bins: int):
        if self.discrete:
            return np.asarray(z, dtype=np.int64)
        return np.minimum((np.asarray(z) * (n_bins / TWO_PI)).astype(np.int64), n_bins - 1)

    def describe(self) -> dict:
        return {"variant": self.kind}


class FinitePermutation(TransverseSystem):
    """``rho(g_k)`` is the permutation ``images[k]`` of ``{0, ..., n-1}``."""

    kind = "FinitePermutation"
    discrete = True

    def __init__(self, n: int, images):
        self.n = int(n)
        self.images = np.array(images, dtype=np.int64).reshape(N_SIDES, self.n)
        for k, perm in enumerate(self.images):
            if sorted(perm.tolist()) != list(range(self.n)):
                raise ConstructionError(f"image of letter {k} is not a permutation")
            if np.any(self.images[PAIRING[k]][perm] != np.arange(self.n)):
                raise ConstructionError(f"letters {k} and {PAIRING[k]} are not mutually inverse")
        # act by the inverse of the letter, i.e. the pairing letter
        self._table = self.images[list(PAIRING)]
        if self.relator_residual() != 0:
            raise ConstructionError("relator does not act trivially")

    @classmethod
    def from_generators(cls, n: int, a1, b1, a2, b2) -> "FinitePermutation":
        def inverse(p):
            p = np.asarray(p)
            inv = np.empty_like(p)
            inv[p] = np.arange(p.size)
            return inv
        imgs = _letters_from_generators({"a1": np.asarray(a1), "b1": np.asarray(b1),
                                         "a2": np.asarray(a2), "b2": np.asarray(b2)}, inverse)
        return cls(n, imgs)

    def act(self, letters, z):
        return self._table[letters, z]

    def relator_residual(self) -> float:
        z = np.arange(self.n)
        for k in reversed(RELATOR):
            z = self.images[k][z]
        return float(np.count_nonzero(z != np.arange(self.n)))

    def describe(self) -> dict:
        return {"variant": self.kind, "n": self.n, "images": self.images.tolist()}


class CircleMobius(TransverseSystem):
    """``rho(g_k)`` is a Mobius map acting on boundary angles."""

    kind = "CircleMobius"

    def __init__(self, images):
        self.images = tuple(images)
        if len(self.images) != N_SIDES:
            raise ConstructionError("need one isometry per letter")
        inv = [g.inverse() for g in self.images]
        self._ia = np.array([g.a for g in inv])
        self._ib = np.array([g.b for g in inv])
        self._c = np.array([g.c for g in self.images])
        self._d = np.array([g.d for g in self.images])
        res = self.relator_residual()
        if res > CIRCLE_TOL:
            raise ConstructionError(f"relator residual {res:.3e} on test angles")

    @classmethod
    def from_generators(cls, a1, b1, a2, b2) -> "CircleMobius":
        return cls(_letters_from_generators({"a1": a1, "b1": b1, "a2": a2, "b2": b2},
                                            lambda g: g.inverse()))

    def act(self, letters, z):
        w = np.exp(1j * np.asarray(z, dtype=float))
        a, b = self._ia[letters], self._ib[letters]
        return np.mod(np.angle((a * w + b) / (np.conj(b) * w + np.conj(a))), TWO_PI)

    def log_derivative(self, letters, z_new):
        w = np.exp(1j * np.asarray(z_new, dtype=float))
        return -2.0 * np.log(np.abs(self._c[letters] * w + self._d[letters]))

    def relator_residual(self) -> float:
        theta = np.arange(N_TEST_ANGLES) * (TWO_PI / N_TEST_ANGLES)
        out = theta.copy()
        for k in reversed(RELATOR):
            out = np.asarray(self.images[k].apply_angle(out))
        diff = np.angle(np.exp(1j * (out - theta)))
        return float(np.max(np.abs(diff)))

    def describe(self) -> dict:
        return {"variant": self.kind,
                "images": [[[g.a.real, g.a.imag], [g.b.real, g.b.imag]] for g in self.images]}


class BoundaryAction(CircleMobius):
    """Each letter acts on angles by its own boundary action (the stable foliation)."""

    kind = "BoundaryAction"

    def __init__(self, setup: FuchsianSetup):
        super().__init__(setup.generators)

    def describe(self) -> dict:
        return {"variant": self.kind}


def build_type2_system() -> CircleMobius:
    """rho(a1), rho(a2) hyperbolic with crossing axes (translation length 1), rho(b1) = rho(b2) = id."""
    g1 = MobiusIsometry.translation(1.0, 0.0)
    g2 = MobiusIsometry.translation(1.0, math.pi / 2)
    ident = MobiusIsometry.identity()
    return CircleMobius.from_generators(g1, ident, g2, ident)


def cyclic_permutation_system(n: int = 4) -> FinitePermutation:
    """rho(a1) = rho(a2) = cyclic shift, rho(b1) = rho(b2) = id (abelian image)."""
    shift = (np.arange(n) + 1) % n
    ident = np.arange(n)
    return FinitePermutation.from_generators(n, shift, ident, shift, ident)


def trivial_permutation_system(n: int = 4) -> FinitePermutation:
    ident = np.arange(n)
    return FinitePermutation.from_generators(n, ident, ident, ident, ident)


# ---------------------------------------------------------------------------
# Spatial cells


class SpatialCells:
    """Equal-volume polar cells clipped to the octagon.

    ``n_ang`` congruent wedges centred on the side normals, each cut into
    ``n_rad`` cells by hyperbolic radii chosen so that all cells carry the
    same hyperbolic area.  ``n_ang`` must divide 8 times something that keeps
    wedges congruent; 8 is the natural choice.
    """

    def __init__(self, n_ang: int = 8, n_rad: int = 8):
        if n_ang % N_SIDES:
            raise ValueError("n_ang must be a multiple of 8 to keep the wedges congruent")
        self.n_ang, self.n_rad = int(n_ang), int(n_rad)
        self.width = TWO_PI / self.n_ang
        self.wedge_area = self._wedge_volume(np.inf)
        targets = self.wedge_area * np.arange(1, self.n_rad) / self.n_rad
        circ = 2 * INRADIUS
        self.breaks = np.array([optimize.brentq(lambda R, v=v: self._wedge_volume(R) - v, 0.0, circ,
                                                xtol=1e-14) for v in targets])
        self.edges = np.concatenate([[0.0], self.breaks, [np.inf]])
        self.volumes = np.array([
            self._wedge_volume(self.edges[i + 1]) - self._wedge_volume(self.edges[i])
            for _ in range(self.n_ang) for i in range(self.n_rad)])

    @property
    def n_cells(self) -> int:
        return self.n_ang * self.n_rad

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    def _r_oct(self, off):
        return np.arctanh(math.tanh(INRADIUS) / np.cos(off))

    def _phi_limits(self, R):
        """Offsets in [0, width/2] where the radius-R circle crosses the octagon."""
        half = 0.5 * self.width
        if R <= INRADIUS:
            return half  # circle lies inside the whole wedge
        c = math.tanh(INRADIUS) / math.tanh(R)
        # octagon boundary angle offset measured from the nearest side normal
        return min(half, math.acos(min(1.0, c)))

    def _wedge_volume(self, R):
        """Hyperbolic area of ``{r < R}`` intersected with one wedge and the octagon."""
        half = 0.5 * self.width

        def f(off):
            return math.cosh(min(R, float(self._r_oct(off)))) - 1.0

        pts = [0.0, half]
        if math.isfinite(R):
            cut = self._phi_limits(R)
            if 0 < cut < half:
                pts = [0.0, cut, half]
        tot = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            tot += integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
        return 2.0 * tot  # wedge symmetric about its normal

    def locate(self, u):
        """Cell index of complex points ``u`` (wedge-major)."""
        u = np.asarray(u, dtype=complex)
        r = 2.0 * np.arctanh(np.abs(u))
        ang = np.mod(np.angle(u) + 0.5 * self.width, TWO_PI)
        wedge = np.minimum((ang / self.width).astype(np.int64), self.n_ang - 1)
        radial = np.searchsorted(self.breaks, r, side="right")
        return wedge * self.n_rad + radial

    def centers(self) -> np.ndarray:
        """Representative point of each cell: mid-area radius on the wedge centre line."""
        out = []
        for j in range(self.n_ang):
            for i in range(self.n_rad):
                lo = self._wedge_volume(self.edges[i])
                hi = self._wedge_volume(self.edges[i + 1])
                mid = 0.5 * (lo + hi)
                top = 2 * INRADIUS if i == self.n_rad - 1 else self.edges[i + 1]
                rm = optimize.brentq(lambda R: self._wedge_volume(R) - mid, self.edges[i], top,
                                     xtol=1e-12)
                theta = j * self.width
                out.append(math.tanh(0.5 * rm) * complex(math.cos(theta), math.sin(theta)))
        return np.array(out)

    def quadrature(self, order: int = 12):
        """Nodes (complex) and hyperbolic-area weights per cell, as lists of arrays."""
        x, w = np.polynomial.legendre.leggauss(order)
        half = 0.5 * self.width
        nodes, weights = [], []
        for j in range(self.n_ang):
            theta0 = j * self.width
            for i in range(self.n_rad):
                r_lo, r_hi = self.edges[i], self.edges[i + 1]
                pts = sorted({0.0, half, *[p for p in (self._phi_limits(r_lo), self._phi_limits(r_hi))
                                           if 0 < p < half]})
                zs, ws = [], []
                for sign in (-1.0, 1.0):
                    for a, b in zip(pts[:-1], pts[1:]):
                        off = 0.5 * (a + b) + 0.5 * (b - a) * x
                        w_off = 0.5 * (b - a) * w
                        top = np.minimum(r_hi, self._r_oct(off))
                        bottom = np.minimum(r_lo, top)
                        for o, wo, lo_, hi_ in zip(off, w_off, bottom, top):
                            if hi_ <= lo_:
                                continue
                            r = 0.5 * (lo_ + hi_) + 0.5 * (hi_ - lo_) * x
                            wr = 0.5 * (hi_ - lo_) * w
                            ang = theta0 + sign * o
                            zs.append(np.tanh(0.5 * r) * np.exp(1j * ang))
                            ws.append(wo * wr * np.sinh(r))
                nodes.append(np.concatenate(zs))
                weights.append(np.concatenate(ws))
        return nodes, weights

    def describe(self) -> dict:
        return {"n_ang": self.n_ang, "n_rad": self.n_rad, "radial_breaks": self.breaks.tolist()}


# ---------------------------------------------------------------------------
# Foliated states and dynamics


@dataclass(frozen=True)
class FoliatedState:
    u: DiskPoint
    z: float
    word: GroupWord = field(default_factory=lambda: GroupWord(()))


def _boundary_grad(u, z):
    """Chart gradient of ``log k_z(u)`` for complex ``u`` and angles ``z``."""
    xi = np.exp(1j * z)
    s = 1.0 - (u.real ** 2 + u.imag ** 2)
    d = u - xi
    return -2.0 * u / s - 2.0 * d / (d.real ** 2 + d.imag ** 2)


def boundary_drift(u, z):
    """Drift callback ``grad log h`` for ``h(u, z) = k_z(u)`` (the stable-foliation h-transform)."""
    return _boundary_grad(np.asarray(u, dtype=complex), np.asarray(z, dtype=float))


def step_foliated(state: FoliatedState, setup: FuchsianSetup, system: TransverseSystem, dt: float,
                  rng: np.random.Generator, drift=None) -> FoliatedState:
    """One Euler step of the leafwise motion followed by folding and transverse update.

    ``drift(u, z)`` (optional) returns the chart gradient of ``log h``.
    """
    u = state.u.z
    dn = complex(*rng.standard_normal(2))
    s = 1.0 - abs(u) ** 2
    new = u + s * math.sqrt(0.5 * dt) * dn
    if drift is not None:
        g = complex(np.asarray(drift(np.array([u]), np.array([state.z])))[0])
        new += 0.5 * s * s * g * dt
    if 1.0 - abs(new) ** 2 < EPS_BOUNDARY:
        raise DomainError("step left the disk")
    point, word = setup.fold(complex(new))
    z = state.z
    letters = []
    for k in word.letters:
        z = system.act(np.array([k]), np.array([z]))[0]
        letters.append(k)
    z = int(z) if system.discrete else float(z)
    return FoliatedState(point, z, state.word * GroupWord(tuple(letters)))


def follow_lifted_path(setup: FuchsianSetup, system: TransverseSystem, points, z0):
    """Track a lifted disk path stepwise in the suspension.

    Each lifted point is pulled back by the current word and folded; the
    emitted letters update ``z``.  Returns ``(u, z, word, log_jac)`` at the end.
    """
    word = GroupWord(())
    z = z0
    u = None
    log_jac = 0.0
    for p in points:
        m = setup.word_matrix(word.inverse().letters)
        q = (m[0, 0] * p + m[0, 1]) / (m[1, 0] * p + m[1, 1])
        u, w = setup.fold(complex(q))
        for k in w.letters:
            z = system.act(np.array([k]), np.array([z]))[0]
            if not system.discrete:
                log_jac += float(system.log_derivative(np.array([k]), np.array([z]))[0])
        word = word * w
    return u, z, word, log_jac


class FoliatedEnsemble:
    """Vectorized ensemble of foliated states driven by per-path noise streams.

    Parameters
    ----------
    u0, z0 : start states (broadcast to ``path_ids``); ``u0`` must lie in the octagon.
    drift : optional ``drift(u, z) -> complex grad log h`` for an h-transform.
    track_matrix : keep the matrix of the accumulated word (needed for lifted distances).
    track_words : keep explicit letter lists (short runs only).
    """

    def __init__(self, setup: FuchsianSetup, system: TransverseSystem, u0, z0, dt: float, seed: int,
                 path_ids, drift=None, track_matrix: bool = False, track_words: bool = False):
        self.setup, self.system, self.dt, self.seed = setup, system, float(dt), int(seed)
        self.path_ids = np.asarray(path_ids, dtype=np.int64)
        n = self.path_ids.size
        u = np.broadcast_to(np.asarray(u0, dtype=complex), (n,)).copy()
        u, rounds = setup.fold_array(u)
        if rounds:
            raise DomainError("start points must lie in the fundamental domain")
        self.u = u
        zdtype = np.int64 if system.discrete else float
        self.z = np.broadcast_to(np.asarray(z0, dtype=zdtype), (n,)).copy()
        self.log_jac = np.zeros(n)
        self.n_folds = np.zeros(n, dtype=np.int64)
        self.drift = drift
        self.streams = PathStreams(seed, self.path_ids)
        self.matrix = np.tile(np.eye(2, dtype=complex), (n, 1, 1)) if track_matrix else None
        self.words = [[] for _ in range(n)] if track_words else None
        self.step_count = 0
        self._noise = None
        self._pos = 0
        self._scale = math.sqrt(0.5 * dt)

    @property
    def n_paths(self) -> int:
        return self.path_ids.size

    def _next_noise(self):
        if self._noise is None or self._pos == self._noise.shape[0]:
            self._noise = self.streams.normals(64)
            self._pos = 0
        out = self._noise[self._pos]
        self._pos += 1
        return out

    def step(self):
        self.step_count += 1
        dn = self._next_noise()
        u = self.u
        s = 1.0 - (u.real ** 2 + u.imag ** 2)
        new = u + (s * self._scale) * dn
        if self.drift is not None:
            d = (0.5 * self.dt) * s * s * self.drift(u, self.z)
            new += d
            bad = np.abs(d) > MAX_DRIFT_STEP
            s_new = 1.0 - (new.real ** 2 + new.imag ** 2)
            bad |= ((s < BOUNDARY_GAP) & (s_new < 0.5 * s)) | ~(s_new >= EPS_BOUNDARY)
            for i in np.nonzero(bad)[0]:
                zi = self.z[i:i + 1]
                rng = event_generator(self.seed, int(self.path_ids[i]), self.step_count)
                new[i] = refine_step(complex(u[i]), math.sqrt(self.dt) * complex(dn[i]), self.dt,
                                     lambda w, zi=zi: self.drift(w, zi), rng)
        self._fold(new)

    def _fold(self, new):
        folded, rounds = self.setup.fold_array(new)
        self.u = folded
        if not rounds:
            return
        mats = self.setup._matrices
        for idx, letters in rounds:
            z_new = self.system.act(letters, self.z[idx])
            self.z[idx] = z_new
            if not self.system.discrete:
                self.log_jac[idx] += self.system.log_derivative(letters, z_new)
            self.n_folds[idx] += 1
            if self.matrix is not None:
                self.matrix[idx] = np.einsum("nij,njk->nik", self.matrix[idx], mats[letters])
            if self.words is not None:
                for i, k in zip(idx.tolist(), letters.tolist()):
                    w = self.words[i]
                    if w and w[-1] == PAIRING[k]:
                        w.pop()
                    else:
                        w.append(k)
        if self.matrix is not None:
            # |a|^2 - |b|^2 cancels catastrophically for long words; those keep relative accuracy anyway
            m = self.matrix
            a2 = np.abs(m[:, 0, 0]) ** 2
            small = a2 < 1e8
            det = a2[small] - np.abs(m[small, 0, 1]) ** 2
            m[small] /= np.sqrt(det)[:, None, None]

    def run(self, n_steps: int, callback=None, every: int = 1):
        """Advance ``n_steps``; ``callback(self)`` after every ``every`` steps."""
        for i in range(n_steps):
            self.step()
            if callback is not None and (i + 1) % every == 0:
                callback(self)

    def lift_distance(self) -> np.ndarray:
        """``d(0, lift)`` from the word matrices."""
        if self.matrix is None:
            raise ValueError("ensemble was built without track_matrix")
        m = self.matrix
        a, b = m[:, 0, 0], m[:, 0, 1]
        u = self.u
        cosh_d = (np.abs(np.conj(b) * u + np.conj(a)) ** 2 + np.abs(a * u + b) ** 2) / (1 - np.abs(u) ** 2)
        return np.arccosh(np.maximum(cosh_d, 1.0))

    def lifted_points(self) -> np.ndarray:
        """Explicit lifts ``W u`` (only representable for short paths)."""
        if self.matrix is None:
            raise ValueError("ensemble was built without track_matrix")
        m = self.matrix
        p = (m[:, 0, 0] * self.u + m[:, 0, 1]) / (m[:, 1, 0] * self.u + m[:, 1, 1])
        if np.any(1.0 - np.abs(p) ** 2 < EPS_BOUNDARY):
            raise DomainError("lift is beyond the representable disk")
        return p

    def log_kernel_lift(self) -> np.ndarray:
        """``log k_{z_0}(lift)`` for the boundary action, via chart quantities."""
        u, z = self.u, self.z
        xi = np.exp(1j * z)
        return np.log(1 - np.abs(u) ** 2) - np.log(np.abs(xi - u) ** 2) - self.log_jac


# ---------------------------------------------------------------------------
# Occupation grids


@dataclass
class OccupationGrid:
    """Occupation time per (spatial cell, transverse bin)."""

    cells: SpatialCells
    n_z: int
    counts: np.ndarray
    total_time: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if self.counts.shape != (self.cells.n_cells, self.n_z):
            raise ValueError("counts shape does not match the bins")
        if np.any(self.counts < 0):
            raise ValueError("negative occupation")
        if abs(self.counts.sum() - self.total_time) > 1e-9 * max(1.0, self.total_time):
            raise ValueError("counts do not sum to total_time")

    @property
    def volumes(self) -> np.ndarray:
        return self.cells.volumes

    def u_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def z_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def z_centers(self) -> np.ndarray:
        return (np.arange(self.n_z) + 0.5) * (TWO_PI / self.n_z)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["u_bin", "z_bin", "occupation", "volume"])
            for i in range(self.cells.n_cells):
                for j in range(self.n_z):
                    w.writerow([i, j, repr(float(self.counts[i, j])), repr(float(self.volumes[i]))])

    def metadata_json(self) -> str:
        keys = ("horizon", "dt", "seed", "burn_in", "variant")
        doc = {k: self.metadata.get(k) for k in keys}
        doc.update({k: v for k, v in self.metadata.items() if k not in keys})
        return json.dumps(doc, indent=2)

    @staticmethod
    def merge(grids) -> "OccupationGrid":
        """Cellwise sum, in a fixed order (by replica key) independent of input order."""
        grids = sorted(grids, key=lambda g: tuple(g.metadata.get("replicas", [0])))
        counts = np.zeros_like(grids[0].counts)
        total = 0.0
        replicas = []
        for g in grids:
            counts = counts + g.counts
            total += g.total_time
            replicas.extend(g.metadata.get("replicas", []))
        meta = dict(grids[0].metadata)
        meta["replicas"] = sorted(replicas)
        meta["horizon"] = sum(g.metadata.get("horizon", 0.0) for g in grids)
        return OccupationGrid(grids[0].cells, grids[0].n_z, counts, total, meta)


@dataclass(frozen=True)
class GridSpec:
    cells: SpatialCells
    n_z: int = 32


def run_occupation(start, setup: FuchsianSetup, system: TransverseSystem, horizon: float, dt: float,
                   grids: GridSpec, seed: int, n_replicas: int = 1, first_replica: int = 0,
                   burn_in: float = 0.1, drift=None, per_replica: bool = False):
    """Occupation-time grid of the foliated motion.

    Each replica runs ``burn_in * horizon`` unrecorded, then ``horizon``
    recorded, adding ``dt`` to the cell of every visited state.  All
    replicas start at ``start = (u, z)`` and use disjoint path indices.
    With ``per_replica`` a list of one grid per replica is returned,
    otherwise their merge.
    """
    n_steps = check_step_params(horizon, dt)
    if n_steps < 10_000:
        raise ValueError("horizon must be at least 1e4 dt")
    n_burn = int(round(burn_in * n_steps))
    u0, z0 = start
    if isinstance(u0, DiskPoint):
        u0 = u0.z
    ids = np.arange(first_replica, first_replica + n_replicas)
    ens = FoliatedEnsemble(setup, system, u0, z0, dt, seed, ids, drift=drift)
    ens.run(n_burn)
    cells, n_z = grids.cells, grids.n_z
    if system.discrete and n_z != system.n:
        raise ValueError("z bins of a finite system must be its n classes")
    ncell = cells.n_cells * n_z
    tally = np.zeros((n_replicas, ncell), dtype=np.int64)
    offs = (np.arange(n_replicas) * ncell)[:, None]
    block = 256
    done = 0
    while done < n_steps:
        m = min(block, n_steps - done)
        idx = np.empty((m, n_replicas), dtype=np.int64)
        for j in range(m):
            ens.step()
            idx[j] = cells.locate(ens.u) * n_z + system.z_bin(ens.z, n_z)
        tally += np.bincount((idx.T + offs).ravel(), minlength=n_replicas * ncell).reshape(n_replicas, ncell)
        done += m
    out = []
    for r in range(n_replicas):
        counts = tally[r].reshape(cells.n_cells, n_z) * dt
        meta = {"horizon": n_steps * dt, "dt": dt, "seed": seed, "burn_in": n_burn * dt,
                "variant": system.kind, "replicas": [int(ids[r])]}
        out.append(OccupationGrid(cells, n_z, counts, float(tally[r].sum() * dt), meta))
    return out if per_replica else OccupationGrid.merge(out)


# ---------------------------------------------------------------------------
# Pointed disintegration


def kernel_cell_masses(cells: SpatialCells, n_z: int, mode: str = "integrated", order: int = 12):
    """Predicted shape ``P[u, j]`` of ``k_xi vol`` per (cell, angle bin).

    ``integrated`` averages ``k_xi(u)`` over the angle bin and integrates it
    over the cell; ``center`` uses the cell centre and bin centre times the
    cell volume.
    """
    edges = np.arange(n_z + 1) * (TWO_PI / n_z)
    if mode == "center":
        c = cells.centers()
        xi = np.exp(1j * (edges[:-1] + 0.5 * np.diff(edges)))
        k = (1 - np.abs(c[:, None]) ** 2) / np.abs(xi[None, :] - c[:, None]) ** 2
        return k * cells.volumes[:, None]
    if mode != "integrated":
        raise ValueError(f"unknown kernel mode {mode!r}")
    nodes, weights = cells.quadrature(order)
    out = np.empty((cells.n_cells, n_z))
    for i, (zq, wq) in enumerate(zip(nodes, weights)):
        r = np.abs(zq)
        phi = np.angle(zq)
        # exact arc integral of the Poisson kernel: harmonic measure of the arc times 2 pi
        a = edges[:-1][None, :] - phi[:, None]
        b = edges[1:][None, :] - phi[:, None]
        out[i] = ((_arc_angle(r[:, None], b) - _arc_angle(r[:, None], a)) * wq[:, None]).sum(axis=0) / (TWO_PI / n_z)
    return out


def _arc_angle(r, a):
    """Antiderivative in ``a`` of ``(1 - r^2) / (1 - 2 r cos a + r^2)``, continuous in ``a``."""
    q = (1 + r) / (1 - r)
    turns = np.floor((a + math.pi) / TWO_PI)
    a0 = a - turns * TWO_PI
    return 2.0 * np.arctan(q * np.tan(0.5 * a0)) + turns * TWO_PI


def pointed_disintegration_check(grid: OccupationGrid, mode: str = "integrated", min_count=None) -> float:
    """Max over angle bins of the relative L1 residual of ``counts(., xi) ~ c_xi k_xi vol``.

    ``c_xi`` matches the total occupation of the bin.
    """
    dt = grid.metadata.get("dt", 0.0)
    floor = 100 * dt if min_count is None else min_count
    z_tot = grid.z_marginal()
    if grid.n_z < 16:
        raise ValueError("need at least 16 angle bins")
    starved = np.nonzero(z_tot < floor)[0]
    if starved.size:
        raise InsufficientDataError(f"z-bin {int(starved[0])} has occupation {z_tot[starved[0]]:.3g} < {floor:.3g}")
    pred = kernel_cell_masses(grid.cells, grid.n_z, mode)
    worst = 0.0
    for j in range(grid.n_z):
        obs = grid.counts[:, j]
        c = obs.sum() / pred[:, j].sum()
        worst = max(worst, float(np.abs(obs - c * pred[:, j]).sum() / obs.sum()))
    return worst


def synthetic_kernel_grid(cells: SpatialCells, n_z: int = 16, scale=1.0, mode: str = "integrated",
                          dt: float = 0.01) -> OccupationGrid:
    """Grid filled exactly with ``c_xi k_xi vol`` (for checking the fit)."""
    pred = kernel_cell_masses(cells, n_z, mode) * np.broadcast_to(np.asarray(scale, dtype=float), (n_z,))
    return OccupationGrid(cells, n_z, pred, float(pred.sum()),
                          {"dt": dt, "variant": "BoundaryAction", "horizon": float(pred.sum())})


# ---------------------------------------------------------------------------
# Statistics on grids


def dispersion_chi2(replica_fractions, expected):
    """Chi-square goodness of fit with the sample size estimated from replica spread.

    ``replica_fractions`` has one row of cell fractions per replica.  Time
    averages of a Markov path are correlated, so the multinomial sample size
    is replaced by the effective one implied by the between-replica variance.
    Returns ``(statistic, dof, p_value, n_eff_total)``.
    """
    from scipy import stats

    f = np.asarray(replica_fractions, dtype=float)
    p = np.asarray(expected, dtype=float)
    p = p / p.sum()
    r = f.shape[0]
    if r < 2:
        raise InsufficientDataError("need at least two replicas")
    var = f.var(axis=0, ddof=1)
    n_eff = float(np.sum(p * (1 - p)) / np.sum(var))
    mean = f.mean(axis=0)
    stat = float(r * n_eff * np.sum((mean - p) ** 2 / p))
    dof = p.size - 1
    return stat, dof, float(stats.chi2.sf(stat, dof)), r * n_eff
