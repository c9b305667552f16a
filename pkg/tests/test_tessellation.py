import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leafwise.errors import FoldLimitError
from leafwise.hypdisk import DiskPoint, hyp_distance
from leafwise.tessellation import (CIRCUMRADIUS, INRADIUS, PAIRING, GroupWord, build_genus2_group,
                                   lift_distance, octagon_distance_to_boundary, reduce_word,
                                   separation_distance)

SETUP = build_genus2_group()


def outside_side_oracle(setup, z, k):
    """Half-plane test: z is beyond side k iff it lies inside the Euclidean circle carrying it."""
    center, radius, _ = setup.side_arc(k)
    return abs(z - center) < radius


def inside_points(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        z = 0.95 * math.sqrt(rng.random()) * cmath.exp(2j * math.pi * rng.random())
        if SETUP.locate(z) == "inside":
            out.append(z)
    return out


def test_circumradius_matches_right_triangle_identity():
    assert SETUP.circumradius == pytest.approx(math.acosh(1 / math.tan(math.pi / 8) ** 2), abs=1e-12)
    assert CIRCUMRADIUS == pytest.approx(2.4485, abs=1e-4)
    r_vertex = 2 * math.atanh(abs(SETUP.vertices[0].z))
    assert r_vertex == pytest.approx(CIRCUMRADIUS, abs=1e-9)


def test_vertex_angles_are_quarter_pi_and_sum_to_two_pi():
    ang = SETUP.vertex_angles()
    assert ang == pytest.approx(np.full(8, math.pi / 4), abs=1e-9)
    assert ang.sum() == pytest.approx(2 * math.pi, abs=1e-9)


def test_relator_is_identity():
    assert SETUP.relator_residual < 1e-9
    m = SETUP.word_matrix(SETUP.relator)
    assert min(np.abs(m - np.eye(2)).max(), np.abs(m + np.eye(2)).max()) < 1e-9


def test_each_generator_maps_paired_side_onto_side():
    for k, g in enumerate(SETUP.generators):
        j = PAIRING[k]
        src = [SETUP.vertices[j].z, SETUP.vertices[(j + 1) % 8].z]
        dst = [SETUP.vertices[k].z, SETUP.vertices[(k + 1) % 8].z]
        for s in src:
            assert min(abs(g.apply_complex(s) - d) for d in dst) < 1e-9


def test_locate_origin_and_vertices_inside():
    assert SETUP.locate(DiskPoint(0, 0)) == "inside"
    for v in SETUP.vertices:
        assert SETUP.locate(v) == "inside"


@pytest.mark.parametrize("k", range(8))
def test_locate_far_point_along_side_normal(k):
    z = 0.999 * cmath.exp(1j * k * math.pi / 4)
    assert outside_side_oracle(SETUP, z, k)
    assert SETUP.locate(z) == ("outside", k)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.99), st.floats(0, 2 * math.pi))
def test_locate_agrees_with_half_plane_oracle(r, a):
    z = r * cmath.exp(1j * a)
    violated = [k for k in range(8) if outside_side_oracle(SETUP, z, k)]
    where = SETUP.locate(z)
    if where == "inside":
        # points within rounding of a side may count as inside
        assert all(abs(abs(z - SETUP.side_arc(k)[0]) - SETUP.side_arc(k)[1]) < 1e-9 for k in violated)
    else:
        assert where[1] == min(violated) or abs(abs(z - SETUP.side_arc(where[1])[0]) - SETUP.side_arc(where[1])[1]) < 1e-9


def test_octagon_boundary_distance():
    assert octagon_distance_to_boundary(0.0) == pytest.approx(INRADIUS)
    assert octagon_distance_to_boundary(math.pi / 8) == pytest.approx(CIRCUMRADIUS, abs=1e-9)


def test_fold_of_inside_point_is_trivial():
    p, w = SETUP.fold(DiskPoint(0.1, -0.2))
    assert (p.x, p.y) == (0.1, -0.2) and len(w) == 0


@pytest.mark.parametrize("k", range(8))
def test_fold_just_across_a_side(k):
    foot = math.tanh(INRADIUS / 2) * cmath.exp(1j * k * math.pi / 4)
    z = foot * (1 + 1e-3)
    p, w = SETUP.fold(z)
    assert w.letters == (k,)
    oracle = SETUP.generators[k].inverse().apply_complex(z)
    assert abs(p.z - oracle) < 1e-12
    assert SETUP.locate(oracle) == "inside"


def test_fold_of_a1_b1_image_of_origin():
    word = GroupWord.from_names("a1 b1")
    m = SETUP.word_matrix(word.letters)
    z = (m[0, 0] * 0 + m[0, 1]) / (m[1, 0] * 0 + m[1, 1])
    p, w = SETUP.fold(z)
    assert abs(p.z) < 1e-9
    assert w.names() == "a1 b1"


def reconstruct(point, word):
    m = SETUP.word_matrix(word.letters)
    return (m[0, 0] * point.z + m[0, 1]) / (m[1, 0] * point.z + m[1, 1])


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.995), st.floats(0, 2 * math.pi))
def test_fold_reconstructs_and_retracts(r, a):
    z = r * cmath.exp(1j * a)
    p, w = SETUP.fold(z)
    assert SETUP.locate(p) == "inside"
    assert abs(reconstruct(p, w) - z) < 1e-9
    assert list(w.letters) == reduce_word(w.letters)
    p2, w2 = SETUP.fold(p)
    assert p2 == p and len(w2) == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 0.9), st.floats(0, 2 * math.pi), st.integers(0, 7))
def test_fold_is_equivariant(r, a, k):
    z = r * cmath.exp(1j * a)
    gz = SETUP.generators[k].apply_complex(z)
    p, _ = SETUP.fold(z)
    q, _ = SETUP.fold(gz)
    # representatives agree, or both lie on the domain boundary (tie between paired sides)
    if abs(p.z - q.z) > 1e-9:
        assert np.max(SETUP.side_excess(p.z)) > -1e-9


def test_fold_array_matches_scalar_fold():
    rng = np.random.default_rng(2)
    z = 0.99 * np.sqrt(rng.random(200)) * np.exp(2j * np.pi * rng.random(200))
    folded, rounds = SETUP.fold_array(z)
    letters = [[] for _ in z]
    for idx, ks in rounds:
        for i, k in zip(idx, ks):
            letters[i].append(int(k))
    for i, zi in enumerate(z):
        p, w = SETUP.fold(zi)
        assert abs(folded[i] - p.z) < 1e-12
        assert GroupWord(tuple(letters[i])) == w


def test_fold_iteration_limit():
    with pytest.raises(FoldLimitError):
        SETUP.fold(0.999999, max_folds=2)


def test_orbit_separation():
    assert SETUP.min_translation_length > 0
    for z in inside_points(100, 4):
        assert separation_distance(SETUP, DiskPoint.from_complex(z)) >= SETUP.min_translation_length - 1e-12


def test_lift_distance_from_matrix():
    word = GroupWord.from_names("a1 b2 a2")
    m = SETUP.word_matrix(word.letters)
    u = 0.2 + 0.1j
    lifted = (m[0, 0] * u + m[0, 1]) / (m[1, 0] * u + m[1, 1])
    assert lift_distance(m, u) == pytest.approx(hyp_distance(0.0, lifted), rel=1e-10)


def test_group_word_reduction_and_inverse():
    w = GroupWord((0, 2, 1))
    assert w.letters == (1,)
    g = GroupWord.from_names("a1 b1 a2")
    assert len(g * g.inverse()) == 0


def test_json_dump_fields():
    doc = json.loads(SETUP.to_json())
    assert set(doc) == {"vertices", "sides", "pairing", "relator_residual"}
    assert len(doc["vertices"]) == 8 and doc["pairing"] == list(PAIRING)
