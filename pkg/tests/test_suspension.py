import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leafwise.errors import ConstructionError, InsufficientDataError
from leafwise.hypdisk import DiskPoint, MobiusIsometry
from leafwise.suspension import (BoundaryAction, CircleMobius, FinitePermutation, FoliatedEnsemble,
                                 FoliatedState, GridSpec, OccupationGrid, SpatialCells,
                                 build_type2_system, cyclic_permutation_system, dispersion_chi2,
                                 follow_lifted_path, kernel_cell_masses, pointed_disintegration_check,
                                 run_occupation, step_foliated, synthetic_kernel_grid,
                                 trivial_permutation_system)
from leafwise.tessellation import INRADIUS, PAIRING, RELATOR, build_genus2_group

SETUP = build_genus2_group()
CELLS = SpatialCells(8, 8)


def boundary_angle(m, theta):
    w = np.exp(1j * theta)
    return np.mod(np.angle((m[0, 0] * w + m[0, 1]) / (m[1, 0] * w + m[1, 1])), 2 * math.pi)


def test_relator_acts_trivially():
    assert BoundaryAction(SETUP).relator_residual() < 1e-9
    assert cyclic_permutation_system(4).relator_residual() == 0
    assert build_type2_system().relator_residual() < 1e-12


def test_invalid_systems_are_rejected():
    with pytest.raises(ConstructionError):
        FinitePermutation(3, [[0, 0, 1]] * 8)
    shift = [1, 2, 0]
    swap = [1, 0, 2]
    with pytest.raises(ConstructionError):  # [shift, swap] is not trivial
        FinitePermutation.from_generators(3, shift, swap, [0, 1, 2], [0, 1, 2])
    g = MobiusIsometry.translation(1.0)
    h = MobiusIsometry.translation(1.0, math.pi / 2)
    with pytest.raises(ConstructionError):
        CircleMobius.from_generators(g, h, MobiusIsometry.identity(), MobiusIsometry.identity())


def test_type2_system_witnesses():
    sys2 = build_type2_system()
    b1 = sys2.images[3]
    assert abs(b1.a - 1) < 1e-15 and abs(b1.b) < 1e-15  # rho(b1) = id: not injective
    g1, g2 = sys2.images[0], sys2.images[4]
    fixed = [np.array([0.0, math.pi]), np.array([math.pi / 2, 3 * math.pi / 2])]
    th = np.linspace(0, 2 * math.pi, 3600, endpoint=False)
    for g, f in zip((g1, g2), fixed):
        assert np.abs(np.angle(np.exp(1j * (np.asarray(g.apply_angle(f)) - f)))).max() < 1e-12
        gap = np.abs(np.angle(np.exp(1j * (np.asarray(g.apply_angle(th)) - th))))
        far = np.min(np.abs(np.angle(np.exp(1j * (th[:, None] - f[None, :])))), axis=1) > 0.05
        assert gap[far].min() > 1e-3  # no other fixed points
        assert g.translation_length() == pytest.approx(1.0)
    pts = np.concatenate(fixed)
    # an invariant probability of a hyperbolic map lives on its fixed points, and each
    # map moves the other one's fixed points off all four
    for g, other in ((g1, fixed[1]), (g2, fixed[0])):
        img = np.asarray(g.apply_angle(other))
        assert np.min(np.abs(np.angle(np.exp(1j * (img[:, None] - pts[None, :]))))) > 0.1


def test_trivial_system_never_changes_z():
    sys0 = trivial_permutation_system(4)
    ens = FoliatedEnsemble(SETUP, sys0, 0.0, 2, 0.01, 1, np.arange(10))
    ens.run(10_000)
    assert np.all(ens.z == 2) and ens.n_folds.sum() > 0


def test_boundary_step_moves_z_by_the_letter():
    rng = np.random.default_rng(0)
    state = FoliatedState(DiskPoint(0.0, 0.0), 1.0)
    action = BoundaryAction(SETUP)
    seen = 0
    while seen < 20:
        new = step_foliated(state, SETUP, action, 0.01, rng)
        grew = len(new.word) == len(state.word) + 1 and new.word.letters[:-1] == state.word.letters
        if grew:
            k = new.word.letters[-1]
            expected = SETUP.generators[k].inverse().apply_angle(state.z)
            assert abs(np.angle(np.exp(1j * (new.z - expected)))) < 1e-12
            seen += 1
        state = new


def test_single_fold_extends_word_by_one():
    rng = np.random.default_rng(1)
    state = FoliatedState(DiskPoint.from_complex(0.999 * math.tanh(INRADIUS / 2)), 0.5)
    for _ in range(200):
        new = step_foliated(state, SETUP, BoundaryAction(SETUP), 0.0001, rng)
        raw_word = SETUP.fold(new.u.z)[1]
        assert len(raw_word) == 0
        if new.word != state.word:
            assert abs(len(new.word) - len(state.word)) == 1
            break
        state = new


def lifted_brownian_path(n, dt, seed):
    rng = np.random.default_rng(seed)
    z = [0.0 + 0.0j]
    for _ in range(n):
        w = z[-1]
        w = w + (1 - abs(w) ** 2) * math.sqrt(dt / 2) * complex(*rng.standard_normal(2))
        z.append(w)
    return np.array(z)


@pytest.mark.parametrize("seed", range(5))
def test_stepwise_and_single_fold_agree(seed):
    pts = lifted_brownian_path(3000, 0.002, seed)
    action = BoundaryAction(SETUP)
    u, z, word, _ = follow_lifted_path(SETUP, action, pts, 0.3)
    u_end, w_end = SETUP.fold(complex(pts[-1]))
    z_end = 0.3
    for k in w_end.letters:
        z_end = float(action.act(np.array([k]), np.array([z_end]))[0])
    assert abs(u.z - u_end.z) < 1e-9
    m1, m2 = SETUP.word_matrix(word.letters), SETUP.word_matrix(w_end.letters)
    assert min(np.abs(m1 - m2).max(), np.abs(m1 + m2).max()) < 1e-9 * np.abs(m1).max()
    assert abs(np.angle(np.exp(1j * (z - z_end)))) < 1e-9


def test_stable_foliation_reconstruction():
    action = BoundaryAction(SETUP)
    ens = FoliatedEnsemble(SETUP, action, 0.0, 1.1, 0.01, 3, np.arange(64), track_matrix=True,
                           track_words=True)
    ens.run(400)
    for i in range(64):
        inv = SETUP.word_matrix([PAIRING[k] for k in reversed(ens.words[i])])
        expected = boundary_angle(inv, 1.1)
        assert abs(np.angle(np.exp(1j * (ens.z[i] - expected)))) < 1e-9
    lifted = ens.lifted_points()
    # log k_{z0}(lift) from the chart and the Jacobian equals the direct evaluation
    direct = np.log(1 - np.abs(lifted) ** 2) - np.log(np.abs(np.exp(1.1j) - lifted) ** 2)
    assert ens.log_kernel_lift() == pytest.approx(direct, abs=1e-7)


def test_cells_have_equal_volume_and_cover_the_octagon():
    oct_area = 4 * math.pi  # genus 2: 2 pi (2g - 2)
    assert CELLS.total_volume == pytest.approx(oct_area, rel=1e-12)
    assert CELLS.volumes == pytest.approx(np.full(64, oct_area / 64), rel=1e-10)
    nodes, weights = CELLS.quadrature()
    assert np.array([w.sum() for w in weights]) == pytest.approx(CELLS.volumes, rel=1e-9)
    for i, zq in enumerate(nodes):
        assert np.all(CELLS.locate(zq) == i)


def test_cell_volumes_match_monte_carlo_area():
    rng = np.random.default_rng(7)
    n = 400_000
    r = np.arccosh(1 + rng.random(n) * (math.cosh(2.45) - 1))  # uniform area in the radius-2.45 disk
    z = np.tanh(r / 2) * np.exp(2j * math.pi * rng.random(n))
    inside = SETUP.first_violated(z) < 0
    area = 2 * math.pi * (math.cosh(2.45) - 1)
    counts = np.bincount(CELLS.locate(z[inside]), minlength=64) * area / n
    assert counts == pytest.approx(CELLS.volumes, rel=0.05)


def test_occupation_bookkeeping_and_errors():
    grid = run_occupation((0.0, 0), SETUP, cyclic_permutation_system(4), 100.0, 0.01,
                          GridSpec(CELLS, 4), 5)
    assert grid.total_time == pytest.approx(100.0, abs=1e-9)
    assert grid.counts.sum() == pytest.approx(grid.total_time, abs=1e-9)
    with pytest.raises(ValueError):
        run_occupation((0.0, 0), SETUP, cyclic_permutation_system(4), 50.0, 0.01, GridSpec(CELLS, 4), 5)
    with pytest.raises(ValueError):
        OccupationGrid(CELLS, 4, -np.ones((64, 4)), -256.0)


def test_merge_order_does_not_matter():
    grids = run_occupation((0.0, 0.0), SETUP, BoundaryAction(SETUP), 100.0, 0.01, GridSpec(CELLS, 16), 6,
                           n_replicas=3, per_replica=True)
    a = OccupationGrid.merge(grids)
    b = OccupationGrid.merge(grids[::-1])
    assert np.array_equal(a.counts, b.counts)
    assert a.metadata["replicas"] == [0, 1, 2]


def test_occupation_is_invariant_under_cyclic_relabelling():
    sys4 = cyclic_permutation_system(4)
    g0 = run_occupation((0.0, 0), SETUP, sys4, 100.0, 0.01, GridSpec(CELLS, 4), 8)
    g1 = run_occupation((0.0, 1), SETUP, sys4, 100.0, 0.01, GridSpec(CELLS, 4), 8)
    assert np.array_equal(np.roll(g0.counts, 1, axis=1), g1.counts)


def test_grid_dump_formats(tmp_path):
    grid = synthetic_kernel_grid(CELLS, 16)
    out = tmp_path / "occupation.csv"
    grid.to_csv(out)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "u_bin,z_bin,occupation,volume" and len(lines) == 1 + 64 * 16
    meta = json.loads(grid.metadata_json())
    assert list(meta)[:5] == ["horizon", "dt", "seed", "burn_in", "variant"]


def test_synthetic_kernel_grid_fits_exactly():
    for mode in ("integrated", "center"):
        grid = synthetic_kernel_grid(CELLS, 16, scale=np.linspace(1, 3, 16), mode=mode)
        assert pointed_disintegration_check(grid, mode) < 1e-12


def test_integrated_kernel_masses_are_consistent():
    masses = kernel_cell_masses(CELLS, 16)
    # averaged over all boundary angles the Poisson kernel integrates to 1, leaving the volume
    assert masses.mean(axis=1) == pytest.approx(CELLS.volumes, rel=1e-9)
    center = kernel_cell_masses(CELLS, 16, "center")
    inner = CELLS.locate(CELLS.centers()) % CELLS.n_rad == 0
    assert np.abs(masses[inner] / center[inner] - 1).max() < 0.1


def test_disintegration_requires_data_and_bins():
    grid = synthetic_kernel_grid(CELLS, 16)
    grid.counts[:, 3] = 0
    starved = OccupationGrid(CELLS, 16, grid.counts, float(grid.counts.sum()), grid.metadata)
    with pytest.raises(InsufficientDataError):
        pointed_disintegration_check(starved)
    with pytest.raises(ValueError):
        pointed_disintegration_check(synthetic_kernel_grid(CELLS, 8))


def test_finite_system_fits_volume_not_a_kernel():
    sys4 = cyclic_permutation_system(4)
    grid = run_occupation((0.0, 0), SETUP, sys4, 400.0, 0.01, GridSpec(CELLS, 4), 9)
    u = grid.u_marginal()
    flat = np.abs(u / grid.total_time - CELLS.volumes / CELLS.total_volume).sum()
    k = kernel_cell_masses(CELLS, 16)[:, 0]
    kernel_fit = np.abs(u / grid.total_time - k / k.sum()).sum()
    assert flat < 0.15 < kernel_fit


def test_dispersion_chi2_on_exact_multinomials():
    rng = np.random.default_rng(3)
    p = np.full(64, 1 / 64)
    f = rng.multinomial(5000, p, size=16) / 5000
    stat, dof, pval, n_eff = dispersion_chi2(f, p)
    assert dof == 63 and pval > 0.001
    assert n_eff == pytest.approx(16 * 5000, rel=0.3)
    with pytest.raises(InsufficientDataError):
        dispersion_chi2(f[:1], p)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 7), st.floats(0, 2 * math.pi))
def test_letter_and_inverse_cancel_on_angles(k, theta):
    action = BoundaryAction(SETUP)
    there = action.act(np.array([k]), np.array([theta]))
    back = action.act(np.array([PAIRING[k]]), there)
    assert abs(np.angle(np.exp(1j * (back[0] - theta)))) < 1e-12


def test_relator_word_order():
    assert RELATOR == (0, 3, 2, 1, 4, 7, 6, 5)
