import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from leafwise.boundary import (EmpiricalBoundaryMeasure, TypeVerdict, bin_index, classify_type, counts_of,
                               disjoint_supports, forward_map, hitting_measure, inversion_grid,
                               mass_near, mass_support, poisson_inverse, singularity_stat)
from leafwise.diffusion import exit_sample
from leafwise.errors import InsufficientDataError, SolverError

PTS = inversion_grid()


def kernel(theta, pts=PTS):
    return (1 - np.abs(pts) ** 2) / np.abs(np.exp(1j * theta) - pts) ** 2


def point_mass(B, b=0):
    w = np.zeros(B)
    w[b] = 1.0
    return EmpiricalBoundaryMeasure(w)


def test_measure_invariants():
    with pytest.raises(ValueError):
        EmpiricalBoundaryMeasure(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        EmpiricalBoundaryMeasure(np.array([1.5, -0.5]))


def test_hitting_measure_normalization_and_min_samples():
    rng = np.random.default_rng(0)
    mu = hitting_measure(rng.uniform(0, 2 * math.pi, 5000), 32)
    assert abs(mu.weights.sum() - 1) <= 1e-12
    assert counts_of(mu).sum() == 5000
    with pytest.raises(InsufficientDataError):
        hitting_measure(np.zeros(999), 32)


def test_bins_are_centred_on_multiples_of_the_width():
    B = 8
    w = 2 * math.pi / B
    assert bin_index(np.array([0.0, 0.49 * w, 0.51 * w, 2 * math.pi - 0.1 * w]), B).tolist() == [0, 0, 1, 0]
    assert point_mass(B, 3).bin_centers[3] == pytest.approx(3 * w)


def test_forward_hitting_measure_is_uniform():
    res = exit_sample(20000, 0.01, 3, 100.0)
    mu = hitting_measure(res.exit_angle[res.exited], 32)
    assert stats.chisquare(counts_of(mu)).pvalue > 0.01
    # rotating all angles gives the same law
    rot = hitting_measure(np.mod(res.exit_angle[res.exited] + 1.0, 2 * math.pi), 32)
    assert stats.chisquare(counts_of(rot)).pvalue > 0.01


def test_conditioned_hitting_measure_concentrates():
    from leafwise.hypdisk import grad_log_poisson
    res = exit_sample(2000, 0.005, 4, 100.0, grad_log_h=lambda z: grad_log_poisson(0.0, z))
    mu = hitting_measure(res.exit_angle[res.exited], 32)
    assert mass_near(mu, 0.0, 1) >= 0.99


def test_inversion_recovers_an_atom():
    mu = poisson_inverse(kernel(math.pi / 3), 64, 1e-6)
    assert mass_near(mu, math.pi / 3, 2) >= 0.9
    # forward-map oracle: the recovered measure reproduces h
    h = kernel(math.pi / 3)
    assert np.linalg.norm(forward_map(mu) - h) / np.linalg.norm(h) < 0.05


def test_inversion_of_constant_is_uniform():
    mu = poisson_inverse(np.ones(PTS.size), 64, 1e-6)
    assert np.abs(mu.weights - 1 / 64).max() <= 1e-6
    assert mu.residual <= 1e-5


def test_inversion_of_two_atoms():
    mu = poisson_inverse(0.5 * kernel(0.0) + 0.5 * kernel(math.pi), 64, 1e-6)
    assert mass_near(mu, 0.0, 2) == pytest.approx(0.5, abs=0.05)
    assert mass_near(mu, math.pi, 2) == pytest.approx(0.5, abs=0.05)
    assert mu.residual <= 1e-5


def test_inversion_of_on_grid_atom_meets_ridge_level_residual():
    mu = poisson_inverse(kernel(2 * math.pi * 5 / 64), 64, 1e-6)
    assert mu.residual <= 1e-5


def test_inversion_preconditions():
    with pytest.raises(ValueError):
        poisson_inverse(np.ones(10), 64, points=PTS[:10])
    with pytest.raises(ValueError):
        poisson_inverse(-np.ones(PTS.size), 64)
    with pytest.raises(ValueError):
        poisson_inverse(2 * np.ones(PTS.size), 64)


def test_solver_iteration_limit_is_reported(monkeypatch):
    from leafwise import boundary

    def fail(*args, **kwargs):
        raise RuntimeError("too many iterations")
    monkeypatch.setattr(boundary.optimize, "nnls", fail)
    with pytest.raises(SolverError):
        poisson_inverse(np.ones(PTS.size), 64)


def test_classifier_examples():
    B = 32
    assert classify_type(point_mass(B)).verdict == "TypeI"
    assert classify_type(EmpiricalBoundaryMeasure(np.full(B, 1 / B))).verdict == "TypeII"
    half = np.zeros(B)
    half[:B // 2] = 2 / B
    v = classify_type(EmpiricalBoundaryMeasure(half))
    assert v.verdict == "Indeterminate" and v.support_fraction == 0.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=16, max_size=16).filter(lambda w: sum(w) > 0), st.integers(0, 15))
def test_classifier_is_rotation_invariant(w, shift):
    w = np.array(w) / np.sum(w)
    w[np.argmax(w)] += 1 - w.sum()
    mu = EmpiricalBoundaryMeasure(np.maximum(w, 0))
    a, b = classify_type(mu), classify_type(mu.rotated(shift))
    assert a.verdict == b.verdict
    assert a.max_atom == pytest.approx(b.max_atom) and a.support_fraction == b.support_fraction
    assert 0 <= singularity_stat(mu) <= 1


def test_verdict_json_and_bounds():
    v = classify_type(point_mass(32))
    doc = json.loads(v.to_json())
    assert set(doc) == {"verdict", "max_atom", "support_fraction", "thresholds", "n_samples"}
    assert doc["thresholds"]["floor"] == 1 / 320
    with pytest.raises(ValueError):
        TypeVerdict("TypeI", 1.5, 0.0, {})


def test_singularity_statistic():
    B = 64
    uniform = EmpiricalBoundaryMeasure(np.full(B, 1 / B))
    assert singularity_stat(uniform) == pytest.approx(0.9, abs=1 / B)
    assert singularity_stat(point_mass(B)) <= 3 / B


def test_disjoint_supports():
    B = 32
    a, b = point_mass(B, 0), point_mass(B, 16)
    assert disjoint_supports(a, b) == (True, 0)
    uniform = EmpiricalBoundaryMeasure(np.full(B, 1 / B))
    flag, overlap = disjoint_supports(uniform, a, 0.99)
    assert not flag and overlap == 1
    assert mass_support(uniform, 0.99).size == B


def test_measure_csv(tmp_path):
    out = tmp_path / "m.csv"
    point_mass(8, 2).to_csv(out)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "bin_center,weight" and len(lines) == 9


def test_inversion_is_stable_under_moving_the_base_point():
    # h normalized at a different grid point still recovers the same shape after renormalizing
    h = 0.5 * kernel(0.0) + 0.5 * kernel(math.pi / 2)
    mu = poisson_inverse(h, 32, 1e-6)
    alt = inversion_grid(radius=0.6)
    mu_alt = poisson_inverse(0.5 * kernel(0.0, alt) + 0.5 * kernel(math.pi / 2, alt), 32, 1e-6, alt)
    assert np.abs(mu.weights - mu_alt.weights).sum() < 0.05
