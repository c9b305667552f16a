"""Genus-2 Fuchsian group acting on the disk with a regular octagon fundamental domain.

Side ``k`` of the octagon is the geodesic whose closest point to the origin
lies in direction ``k pi/4`` at distance equal to the inradius.  Letter
``k`` of a group word is the deck transformation ``g_k`` carrying the
octagon onto the tile adjacent across side ``k``; its inverse is letter
``pairing[k]``.  A point that leaves the octagon through side ``k`` is
brought back by ``g_k^{-1}`` and the fold emits letter ``k``, so that
``g_k (new point) = old point``.

With ``a1 = g_0, b1 = g_3, a2 = g_4, b2 = g_7`` the surface relation
``[a1, b1][a2, b2] = 1`` reads ``g_0 g_3 g_2 g_1 g_4 g_7 g_6 g_5``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, FoldLimitError
from .hypdisk import DiskPoint, MobiusIsometry, hyp_distance

N_SIDES = 8
PAIRING = (2, 3, 0, 1, 6, 7, 4, 5)
RELATOR = (0, 3, 2, 1, 4, 7, 6, 5)
GENERATOR_NAMES = ("a1", "b1^-1", "a1^-1", "b1", "a2", "b2^-1", "a2^-1", "b2")
NAME_TO_LETTER = {name: k for k, name in enumerate(GENERATOR_NAMES)}
MAX_FOLDS = 10_000
INSIDE_TOL = 1e-12
INRADIUS = math.acosh(1.0 / math.tan(math.pi / 8))
CIRCUMRADIUS = math.acosh(1.0 / math.tan(math.pi / 8) ** 2)


def inverse_letter(k: int) -> int:
    return PAIRING[k]


def reduce_word(letters) -> list:
    """Free reduction: cancel adjacent ``k, pairing[k]`` pairs."""
    out = []
    for k in letters:
        if out and out[-1] == PAIRING[k]:
            out.pop()
        else:
            out.append(int(k))
    return out


@dataclass(frozen=True)
class GroupWord:
    letters: tuple = ()

    def __post_init__(self):
        letters = tuple(int(k) for k in self.letters)
        if any(not 0 <= k < N_SIDES for k in letters):
            raise ValueError(f"letters must lie in 0..7, got {letters}")
        object.__setattr__(self, "letters", tuple(reduce_word(letters)))

    def __len__(self):
        return len(self.letters)

    def __mul__(self, other: "GroupWord") -> "GroupWord":
        return GroupWord(self.letters + other.letters)

    def inverse(self) -> "GroupWord":
        return GroupWord(tuple(PAIRING[k] for k in reversed(self.letters)))

    def names(self) -> str:
        return " ".join(GENERATOR_NAMES[k] for k in self.letters)

    @classmethod
    def from_names(cls, text: str) -> "GroupWord":
        return cls(tuple(NAME_TO_LETTER[t] for t in text.split()))


def _pair_isometry(k: int) -> MobiusIsometry:
    """``g_k``: maps side ``pairing[k]`` onto side ``k`` and the domain across side ``k``."""
    phi = np.arange(N_SIDES) * math.pi / 4
    j = PAIRING[k]
    return (MobiusIsometry.rotation(phi[k]) @ MobiusIsometry.translation(2 * INRADIUS)
            @ MobiusIsometry.rotation(math.pi - phi[j]))


@dataclass(frozen=True)
class FuchsianSetup:
    generators: tuple
    pairing: tuple
    vertices: tuple
    relator: tuple
    relator_residual: float
    min_translation_length: float
    side_normals: np.ndarray = field(repr=False)
    neighbor_centers: np.ndarray = field(repr=False)
    _matrices: np.ndarray = field(repr=False)
    _inv_coeffs: np.ndarray = field(repr=False)

    # Geometry -----------------------------------------------------------

    @property
    def inradius(self) -> float:
        return INRADIUS

    @property
    def circumradius(self) -> float:
        return CIRCUMRADIUS

    def side_arc(self, k: int):
        """Euclidean circle ``(center, radius)`` carrying side ``k``, plus its endpoints."""
        m = math.tanh(INRADIUS / 2)
        dist = (1 + m * m) / (2 * m)
        radius = (1 - m * m) / (2 * m)
        center = dist * complex(math.cos(self.side_normals[k]), math.sin(self.side_normals[k]))
        v0 = complex(self.vertices[k].x, self.vertices[k].y)
        v1 = complex(self.vertices[(k + 1) % N_SIDES].x, self.vertices[(k + 1) % N_SIDES].y)
        return center, radius, (v0, v1)

    def vertex_angles(self) -> np.ndarray:
        """Interior angle at each vertex, from the tangent vectors of the two side arcs."""
        angles = []
        for k in range(N_SIDES):
            v = complex(self.vertices[k].x, self.vertices[k].y)
            c_prev, _, _ = self.side_arc((k - 1) % N_SIDES)
            c_next, _, _ = self.side_arc(k)
            # tangents point from v along each side, into the polygon boundary
            t_prev = 1j * (v - c_prev)
            t_next = 1j * (v - c_next)
            v_prev = complex(self.vertices[(k - 1) % N_SIDES].x, self.vertices[(k - 1) % N_SIDES].y)
            v_next = complex(self.vertices[(k + 1) % N_SIDES].x, self.vertices[(k + 1) % N_SIDES].y)
            if (np.conj(t_prev) * (v_prev - v)).real < 0:
                t_prev = -t_prev
            if (np.conj(t_next) * (v_next - v)).real < 0:
                t_next = -t_next
            angles.append(abs(np.angle(t_next / t_prev)))
        return np.array(angles)

    def word_matrix(self, letters) -> np.ndarray:
        """2x2 complex matrix of the product ``g_{l1} g_{l2} ...``."""
        m = np.eye(2, dtype=complex)
        for k in letters:
            m = m @ self._matrices[k]
        return m

    def word_isometry(self, letters) -> MobiusIsometry:
        return MobiusIsometry.from_matrix(self.word_matrix(letters), renormalize=True)

    # Point location -----------------------------------------------------

    def side_excess(self, z):
        """Positive entries mark violated sides; shape ``z.shape + (8,)``.

        Side ``k`` is the perpendicular bisector between 0 and the neighbour
        centre ``c_k``; ``z`` is beyond it iff ``d(z, c_k) < d(z, 0)``.
        """
        z = np.asarray(z, dtype=complex)[..., None]
        c = self.neighbor_centers
        return (np.abs(z) ** 2 - np.abs(z - c) ** 2 / (1 - np.abs(c) ** 2))

    def locate(self, p):
        """``"inside"`` or ``("outside", k)`` with ``k`` the smallest violated side."""
        z = p.z if isinstance(p, DiskPoint) else complex(p)
        excess = self.side_excess(z)
        bad = np.nonzero(excess > INSIDE_TOL)[0]
        if bad.size == 0:
            return "inside"
        return ("outside", int(bad[0]))

    def first_violated(self, z) -> np.ndarray:
        """Vectorized locate: index of first violated side or -1 where inside."""
        bad = self.side_excess(z) > INSIDE_TOL
        idx = np.argmax(bad, axis=-1)
        return np.where(bad.any(axis=-1), idx, -1)

    def fold_array(self, z, max_folds: int = MAX_FOLDS):
        """Fold complex points into the octagon.

        Returns the folded points and a list (one per fold round) of
        ``(indices, letters)`` pairs: in that round the flat points at
        ``indices`` crossed the sides ``letters``.
        """
        z = np.array(z, dtype=complex, copy=True)
        rounds = []
        active = np.arange(z.size)
        flat = z.reshape(-1)
        for _ in range(max_folds):
            side = self.first_violated(flat[active])
            moving = side >= 0
            if not moving.any():
                return flat.reshape(z.shape), rounds
            idx = active[moving]
            k = side[moving]
            inv = self._inv_coeffs
            a, b = inv[k, 0], inv[k, 1]
            w = flat[idx]
            flat[idx] = (a * w + b) / (np.conj(b) * w + np.conj(a))
            rounds.append((idx, k))
            active = idx
        raise FoldLimitError(f"fold did not terminate within {max_folds} steps")

    def fold(self, p, max_folds: int = MAX_FOLDS):
        """Fold ``p`` into the domain; returns ``(point, GroupWord)`` with ``word . point = p``."""
        z = p.z if isinstance(p, DiskPoint) else complex(p)
        letters = []
        for _ in range(max_folds):
            where = self.locate(z)
            if where == "inside":
                return DiskPoint.from_complex(z), GroupWord(tuple(letters))
            k = where[1]
            z = self.generators[k].inverse().apply_complex(z)
            letters.append(k)
        raise FoldLimitError(f"fold did not terminate within {max_folds} steps")

    # Diagnostics --------------------------------------------------------

    def to_json(self) -> str:
        sides = []
        for k in range(N_SIDES):
            center, radius, (v0, v1) = self.side_arc(k)
            sides.append({
                "index": k,
                "start": [v0.real, v0.imag],
                "end": [v1.real, v1.imag],
                "circle_center": [center.real, center.imag],
                "circle_radius": radius,
            })
        doc = {
            "vertices": [[v.x, v.y] for v in self.vertices],
            "sides": sides,
            "pairing": list(self.pairing),
            "relator_residual": self.relator_residual,
        }
        return json.dumps(doc, indent=2)


def build_genus2_group(tol: float = 1e-9) -> FuchsianSetup:
    """Regular octagon with angles pi/4 and its side pairings."""
    gens = tuple(_pair_isometry(k) for k in range(N_SIDES))
    mats = np.array([g.matrix for g in gens])
    r_e = math.tanh(CIRCUMRADIUS / 2)
    vertices = tuple(
        DiskPoint(r_e * math.cos((2 * k - 1) * math.pi / 8), r_e * math.sin((2 * k - 1) * math.pi / 8))
        for k in range(N_SIDES))
    normals = np.arange(N_SIDES) * math.pi / 4
    centers = np.array([g.apply_complex(0.0) for g in gens])

    m = np.eye(2, dtype=complex)
    for k in RELATOR:
        m = m @ mats[k]
    residual = float(min(np.abs(m - np.eye(2)).max(), np.abs(m + np.eye(2)).max()))
    if residual > tol:
        raise ConstructionError(f"relator residual {residual:.3e} exceeds {tol}")
    for k in range(N_SIDES):
        g = gens[k]
        j = PAIRING[k]
        # endpoints of side j must land on the endpoints of side k
        src = {complex(vertices[j].x, vertices[j].y), complex(vertices[(j + 1) % 8].x, vertices[(j + 1) % 8].y)}
        dst = [complex(vertices[k].x, vertices[k].y), complex(vertices[(k + 1) % 8].x, vertices[(k + 1) % 8].y)]
        for s in src:
            if min(abs(g.apply_complex(s) - d) for d in dst) > tol:
                raise ConstructionError(f"generator {k} does not map side {j} onto side {k}")
    min_len = min(g.translation_length() for g in gens)
    return FuchsianSetup(
        generators=gens,
        pairing=PAIRING,
        vertices=vertices,
        relator=RELATOR,
        relator_residual=residual,
        min_translation_length=min_len,
        side_normals=normals,
        neighbor_centers=centers,
        _matrices=mats,
        _inv_coeffs=np.array([[m[1, 1], -m[0, 1]] for m in mats]),
    )


def octagon_distance_to_boundary(theta):
    """Hyperbolic distance from 0 to the octagon boundary in direction ``theta``."""
    theta = np.asarray(theta, dtype=float)
    off = np.mod(theta + math.pi / 8, math.pi / 4) - math.pi / 8
    return np.arctanh(math.tanh(INRADIUS) / np.cos(off))


def lift_distance(word_matrix: np.ndarray, u) -> np.ndarray:
    """``d(0, W u)`` computed from the matrix of ``W`` without forming ``W u``.

    Stable when ``W u`` is far beyond the float64-representable disk.
    """
    m = np.asarray(word_matrix)
    a, b = m[..., 0, 0], m[..., 0, 1]
    u = np.asarray(u, dtype=complex)
    num = np.abs(np.conj(b) * u + np.conj(a)) ** 2 + np.abs(a * u + b) ** 2
    cosh_d = num / (1 - np.abs(u) ** 2)
    return np.arccosh(np.maximum(cosh_d, 1.0))


def separation_distance(setup: FuchsianSetup, p) -> float:
    """Smallest ``d(p, g p)`` over single-letter generators."""
    return min(hyp_distance(p, DiskPoint.from_complex(g.apply_complex(p.z))) for g in setup.generators)
