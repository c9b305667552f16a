"""Named experiments E1-E8: each returns a :class:`RunReport` of tagged checks and artifacts.

Checks flagged ``pass`` carry a hard tolerance; ``report`` checks are
diagnostics that never affect the exit status.  Path sampling is split over
worker processes by path (or replica) index; every random draw depends only
on ``(seed, index)``, so the worker count does not change any number.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import boundary as bd
from .config import ExperimentConfig
from .diffusion import PathRecord, exit_sample, sample_bm
from .errors import LeafwiseError
from .exponent import EstimatedH, a_t_exact, estimate_h, estimate_lambda, run_cocycle
from .heatkernel import HeatKernelEval, normalization, q_kernel_residuals, semigroup_residual
from .hypdisk import grad_log_poisson
from .rng import BLOCK
from .suspension import (BoundaryAction, GridSpec, OccupationGrid, SpatialCells, build_type2_system,
                         cyclic_permutation_system, dispersion_chi2, pointed_disintegration_check,
                         run_occupation, trivial_permutation_system)
from .tessellation import build_genus2_group


@dataclass
class Check:
    name: str
    value: float | str | bool
    tolerance: str
    flag: str  # "pass" or "report"
    passed: bool | None = None

    def to_dict(self) -> dict:
        v = self.value
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        return {"name": self.name, "value": v, "tolerance": self.tolerance, "flag": self.flag,
                "passed": self.passed}


@dataclass
class RunReport:
    config: dict
    checks: list = field(default_factory=list)
    wall_time: float = 0.0
    tables: dict = field(default_factory=dict)   # file name -> (header, rows)
    documents: dict = field(default_factory=dict)  # file name -> JSON-able dict

    def require(self, name, value, ok: bool, tolerance: str):
        self.checks.append(Check(name, value, tolerance, "pass", bool(ok)))

    def note(self, name, value, tolerance: str = "report only"):
        self.checks.append(Check(name, value, tolerance, "report", None))

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.flag == "pass")

    def check(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.config.get("seed"),
                "checks": [c.to_dict() for c in self.checks],
                "all_passed": self.all_passed, "wall_time": self.wall_time}


class ExperimentError(LeafwiseError):
    pass


# ---------------------------------------------------------------------------
# Parallel helpers


def _pmap(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _split(n: int, workers: int, align: int = 1):
    """Contiguous ``(first, count)`` ranges covering ``range(n)``."""
    if workers <= 1:
        return [(0, n)]
    size = max(align, int(math.ceil(n / workers / align)) * align)
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def _exit_task(args):
    first, count, dt, seed, t_max, drift_xi, snaps = args
    grad = None
    if drift_xi is not None:
        def grad(z, xi=drift_xi):
            return grad_log_poisson(xi, z)
    res = exit_sample(count, dt, seed, t_max, grad_log_h=grad, snapshot_times=snaps, first_path=first)
    snap = {t: res.snapshots[int(round(t / dt))] for t in snaps}
    return res.exit_angle, res.exit_step, snap


def _exits(cfg: ExperimentConfig, n_paths: int, drift_xi=None, snaps=()):
    tasks = [(f, c, cfg.dt, cfg.seed, cfg.horizon, drift_xi, tuple(snaps))
             for f, c in _split(n_paths, cfg.workers, BLOCK)]
    parts = _pmap(_exit_task, tasks, cfg.workers)
    angles = np.concatenate([p[0] for p in parts])
    steps = np.concatenate([p[1] for p in parts])
    snap = {t: np.concatenate([p[2][t] for p in parts]) for t in snaps}
    return angles, steps, snap


def _system(spec: str, setup):
    if spec == "boundary":
        return BoundaryAction(setup)
    if spec == "type2":
        return build_type2_system()
    kind, n = spec.split(":")
    n = int(n)
    return cyclic_permutation_system(n) if kind == "cyclic" else trivial_permutation_system(n)


def _z_start(cfg: ExperimentConfig):
    """Start transverse coordinate: class 0 for finite systems, angle 0 otherwise."""
    return 0 if ":" in cfg.system else 0.0


def _cells(cfg: ExperimentConfig) -> SpatialCells:
    return SpatialCells(8, cfg.u_bins // 8)


def _occ_task(args):
    spec, n_ang, n_rad, n_z, horizon, dt, seed, first, count, z0 = args
    setup = build_genus2_group()
    system = _system(spec, setup)
    grids = run_occupation((0.0, z0), setup, system, horizon, dt, GridSpec(SpatialCells(n_ang, n_rad), n_z),
                           seed, n_replicas=count, first_replica=first, per_replica=True)
    return [g.counts for g in grids], [g.metadata for g in grids]


def _occupation(cfg: ExperimentConfig, z0):
    cells = _cells(cfg)
    tasks = [(cfg.system, cells.n_ang, cells.n_rad, cfg.z_bins, cfg.horizon, cfg.dt, cfg.seed, f, c, z0)
             for f, c in _split(cfg.n_paths, cfg.workers)]
    parts = _pmap(_occ_task, tasks, cfg.workers)
    grids = []
    for counts, metas in parts:
        for c, m in zip(counts, metas):
            grids.append(OccupationGrid(cells, cfg.z_bins, c, float(c.sum()), m))
    return grids, OccupationGrid.merge(grids)


def _cocycle_task(args):
    spec, n, first, horizon, dt, seed, mode, h_est, record_every, track = args
    setup = build_genus2_group()
    system = _system(spec, setup)
    return run_cocycle(setup, system, n, horizon, dt, seed, mode=mode, h_est=h_est, first_path=first,
                       record_every=record_every, track_matrix=track)


def _cocycles(cfg: ExperimentConfig, mode: str, n_paths=None, horizon=None, h_est=None, track=False,
              system=None):
    n_paths = cfg.n_paths if n_paths is None else n_paths
    horizon = cfg.horizon if horizon is None else horizon
    tasks = [(system or cfg.system, c, f, horizon, cfg.dt, cfg.seed, mode, h_est, 1.0, track)
             for f, c in _split(n_paths, cfg.workers)]
    parts = _pmap(_cocycle_task, tasks, cfg.workers)
    first = parts[0]
    first.values = np.concatenate([p.values for p in parts])
    if track:
        first.extra["lift_distance"] = np.concatenate([p.extra["lift_distance"] for p in parts])
    return first


def _hist_rows(mu: bd.EmpiricalBoundaryMeasure):
    return [[repr(float(c)), repr(float(w))] for c, w in zip(mu.bin_centers, mu.weights)]


def _grid_rows(grid: OccupationGrid):
    return [[i, j, repr(float(grid.counts[i, j])), repr(float(grid.volumes[i]))]
            for i in range(grid.cells.n_cells) for j in range(grid.n_z)]


def _grid_meta(grid: OccupationGrid, cfg: ExperimentConfig) -> dict:
    meta = {"horizon": grid.metadata["horizon"], "dt": cfg.dt, "seed": cfg.seed,
            "burn_in": grid.metadata["burn_in"], "variant": grid.metadata["variant"],
            "replicas": len(grid.metadata.get("replicas", [])), "total_time": grid.total_time,
            "u_cells": grid.cells.describe(), "z_bins": grid.n_z}
    return meta


# ---------------------------------------------------------------------------
# Experiments


def run_e1(cfg: ExperimentConfig, rep: RunReport):
    angles, steps, snap = _exits(cfg, cfg.n_paths, snaps=(1.0,))
    exited = steps >= 0
    mu = bd.hitting_measure(angles[exited], cfg.boundary_bins)
    counts = bd.counts_of(mu)
    chi = stats.chisquare(counts)
    rep.require("hitting_uniform_chi2_p", float(chi.pvalue), chi.pvalue > 0.01, "> 0.01")
    x1 = snap[1.0]
    hk = HeatKernelEval(1.0)
    r1 = 2 * np.arctanh(np.abs(x1))
    ks = stats.kstest(r1, hk.radial_cdf)
    rep.require("radial_law_ks_t1", float(ks.statistic), ks.statistic < 0.01, "< 0.01")
    k = (1 - np.abs(x1) ** 2) / np.abs(1.0 - x1) ** 2
    mk = float(k.mean())
    rep.require("reproducing_mean_k_t1", mk, abs(mk - 1) <= 0.01, "1 +/- 0.01")
    rep.note("reproducing_mean_k_t1_stderr", float(k.std(ddof=1) / math.sqrt(k.size)))
    rep.note("exited_fraction", float(exited.mean()))
    rep.note("mean_exit_time", float(steps[exited].mean() * cfg.dt))
    rep.tables["hitting_histogram.csv"] = (["bin_center", "weight"], _hist_rows(mu))
    grid_r = np.linspace(0, 8, 161)
    emp = np.searchsorted(np.sort(r1), grid_r, side="right") / r1.size
    rep.tables["radial_law_t1.csv"] = (["r", "empirical_cdf", "exact_cdf"],
                                       [[repr(float(a)), repr(float(b)), repr(float(c))]
                                        for a, b, c in zip(grid_r, emp, hk.radial_cdf(grid_r))])


def run_e2(cfg: ExperimentConfig, rep: RunReport):
    for t in (0.5, 1.0, 2.0):
        n1, n2 = normalization(t), normalization(t, order=24, n_panels=60)
        rep.note(f"heat_normalization_t{t:g}", max(abs(n1 - 1), abs(n2 - 1)),
                 "|int p_t - 1| <= 1e-6 at two orders")
    sg = semigroup_residual(1.0)
    rep.note("heat_semigroup_rel_error", sg, "< 1e-3")
    rows = []
    for t in (0.5, 1.0):
        norm_res, ck_res = q_kernel_residuals(0.0, t)
        rep.require(f"q_normalization_t{t:g}", norm_res, norm_res < 1e-3, "|int q_t - 1| < 1e-3")
        rep.require(f"q_chapman_kolmogorov_t{t:g}", ck_res, ck_res < 1e-3, "< 1e-3")
        rows.append([t, repr(norm_res), repr(ck_res)])
    rot = max(q_kernel_residuals(math.pi / 2, 1.0))
    rep.note("q_residual_rotated_xi_t1", rot, "< 1e-3")
    off = max(q_kernel_residuals(0.0, 1.0, x=0.3 + 0.2j))
    rep.note("q_residual_offcenter_x_t1", off, "< 1e-3")
    rep.tables["q_kernel_residuals.csv"] = (["t", "normalization_residual", "chapman_kolmogorov_residual"], rows)


def run_e3(cfg: ExperimentConfig, rep: RunReport):
    fwd = _cocycles(cfg, "forward", track=True)
    rev = _cocycles(cfg, "reverse", track=True)
    ef, er = estimate_lambda(fwd), estimate_lambda(rev)
    rep.require("lambda_forward", ef.lambda_, abs(ef.lambda_ - 1) <= 0.05, "1.00 +/- 0.05")
    rep.require("lambda_reverse", er.lambda_, abs(er.lambda_ - 1) <= 0.05, "1.00 +/- 0.05")
    raw_f, raw_r = fwd.values[:, -1].mean(), rev.values[:, -1].mean()
    rep.require("opposite_raw_signs", bool(raw_f * raw_r < 0), raw_f * raw_r < 0, "sign(A_T) differ")
    # additivity: A_{t+s} in one pass against A_t plus A_s of the path shifted by t
    path = sample_bm(0.0, 5.0, cfg.dt, cfg.seed)
    whole = a_t_exact(path, 0.0).values
    i = path.times.size // 3
    tail = PathRecord(path.times[i:] - path.times[i], path.z[i:], path.seed, path.step)
    shifted = a_t_exact(tail, 0.0).values
    add_err = float(np.max(np.abs(whole[i:] - (whole[i] + shifted))))
    rep.require("cocycle_additivity_error", add_err, add_err <= 1e-12, "<= 1e-12 (machine precision)")
    comb = math.hypot(ef.stderr, er.stderr)
    rep.note("forward_reverse_gap_over_stderr", abs(ef.lambda_ - er.lambda_) / comb, "<= 2")
    rep.note("lambda_forward_stderr", ef.stderr)
    rep.note("lambda_reverse_stderr", er.stderr)
    k20 = int(np.searchsorted(rev.times, 20.0))
    if k20 < rev.times.size:
        rep.note("max_log_h_reverse_t20_500_paths", float(rev.values[:500, k20].max()), "> 10")
    rep.note("mean_lift_distance_rate", float(fwd.extra["lift_distance"].mean() / fwd.horizon), "1.0 +/- 0.05")
    rep.documents["exponent_forward.json"] = ef.to_dict()
    rep.documents["exponent_reverse.json"] = er.to_dict()
    rep.tables["a_t_trace.csv"] = (
        ["t", "mean_forward", "sd_forward", "mean_reverse", "sd_reverse"],
        [[repr(float(t)), repr(float(fwd.values[:, n].mean())), repr(float(fwd.values[:, n].std())),
          repr(float(rev.values[:, n].mean())), repr(float(rev.values[:, n].std()))]
         for n, t in enumerate(fwd.times)])


def _pearson_kernel(h: EstimatedH) -> float:
    """Mean over z-bins of the correlation between h_est and k_xi at cell centres."""
    centers = h.grid.cells.centers()
    rs = []
    for j, xi in enumerate(h.grid.z_centers()):
        k = (1 - np.abs(centers) ** 2) / np.abs(np.exp(1j * xi) - centers) ** 2
        rs.append(stats.pearsonr(h.values[:, j], k)[0])
    return float(np.min(rs))


def run_e4(cfg: ExperimentConfig, rep: RunReport):
    if cfg.system != "boundary":
        raise ExperimentError("E4 needs system = boundary")
    grids, grid = _occupation(cfg, 0.0)
    cells = grid.cells
    fr = np.array([g.u_marginal() / g.total_time for g in grids])
    stat, dof, p, n_eff = dispersion_chi2(fr, cells.volumes)
    rep.require("u_marginal_chi2_p", p, p > 0.01, "> 0.01 (dispersion-corrected)")
    rep.note("u_marginal_chi2_stat", stat, f"dof {dof}")
    rep.note("effective_sample_size", n_eff)
    res = pointed_disintegration_check(grid, "integrated")
    rep.require("pointed_disintegration_residual", res, res < 0.15, "< 0.15")
    rep.note("pointed_disintegration_residual_center_kernel", pointed_disintegration_check(grid, "center"), "< 0.15")
    zf = grid.z_marginal() / grid.total_time
    rep.note("z_marginal_max_rel_dev", float(np.abs(zf * grid.n_z - 1).max()))
    try:
        rep.note("h_est_min_pearson_vs_kernel", _pearson_kernel(estimate_h(grid)), "> 0.9")
    except LeafwiseError as exc:
        rep.note("h_est_min_pearson_vs_kernel", f"unavailable: {exc}", "> 0.9")
    rep.tables["occupation.csv"] = (["u_bin", "z_bin", "occupation", "volume"], _grid_rows(grid))
    rep.documents["occupation_meta.json"] = _grid_meta(grid, cfg)


def run_e5(cfg: ExperimentConfig, rep: RunReport):
    if not cfg.system.startswith("cyclic:"):
        raise ExperimentError("E5 needs a cyclic system")
    grids, grid = _occupation(cfg, 0)
    zf = grid.z_marginal() / grid.total_time
    dev = float(np.abs(zf - 1 / grid.n_z).max())
    rep.require("z_marginal_max_dev", dev, dev <= 0.02, f"1/{grid.n_z} +/- 0.02")
    exact = _cocycles(cfg, "forward", n_paths=100, horizon=20.0)
    lam = estimate_lambda(exact)
    rep.require("lambda_exact", lam.lambda_, lam.lambda_ == 0.0, "== 0 exactly")
    h = estimate_h(grid)
    hdev = float(np.abs(h.values - 1).max())
    rep.require("h_est_max_dev", hdev, hdev <= 0.1, "1 +/- 0.1 per cell")
    fr = np.array([g.u_marginal() / g.total_time for g in grids])
    rep.note("u_marginal_chi2_p", dispersion_chi2(fr, grid.cells.volumes)[2], "> 0.01")
    est = estimate_lambda(_cocycles(cfg, "forward", n_paths=200, horizon=20.0, h_est=h))
    rep.note("lambda_estimated_h", est.lambda_, "near 0")
    rep.tables["occupation.csv"] = (["u_bin", "z_bin", "occupation", "volume"], _grid_rows(grid))
    rep.documents["occupation_meta.json"] = _grid_meta(grid, cfg)
    rep.documents["exponent_exact.json"] = lam.to_dict()
    rep.documents["exponent_estimated.json"] = est.to_dict()


def run_e6(cfg: ExperimentConfig, rep: RunReport):
    fa, fs, _ = _exits(cfg, cfg.n_paths)
    ra, rs, _ = _exits(cfg, cfg.n_paths, drift_xi=0.0)
    fa, ra = fa[fs >= 0], ra[rs >= 0]
    B = cfg.boundary_bins
    mf, mr = bd.hitting_measure(fa, B), bd.hitting_measure(ra, B)
    ok, overlap = bd.disjoint_supports(mf, mr, 0.99)
    rep.require(f"disjoint_099_supports_B{B}", ok, ok, "0.99-mass bin sets disjoint")
    rep.note(f"support_overlap_bins_B{B}", overlap)
    rep.note(f"forward_099_support_bins_B{B}", int(bd.mass_support(mf, 0.99).size))
    rep.note(f"reverse_099_support_bins_B{B}", int(bd.mass_support(mr, 0.99).size))
    fine = 4 * B
    ok_f, ov_f = bd.disjoint_supports(bd.hitting_measure(fa, fine), bd.hitting_measure(ra, fine), 0.99)
    rep.note(f"disjoint_099_supports_B{fine}", ok_f)
    rep.note(f"support_overlap_bins_B{fine}", ov_f)
    near = float(np.mean(np.abs(np.angle(np.exp(1j * ra))) < 0.1))
    rep.note("reverse_mass_within_0.1_of_xi", near, ">= 0.99")
    rep.note("singularity_stat_forward", bd.singularity_stat(mf))
    rep.note("singularity_stat_reverse", bd.singularity_stat(mr))
    rep.tables["hitting_forward.csv"] = (["bin_center", "weight"], _hist_rows(mf))
    rep.tables["hitting_reverse.csv"] = (["bin_center", "weight"], _hist_rows(mr))


def run_e7(cfg: ExperimentConfig, rep: RunReport):
    B, ridge = cfg.boundary_bins, cfg.ridge
    pts = bd.inversion_grid()

    def k(th):
        return (1 - np.abs(pts) ** 2) / np.abs(np.exp(1j * th) - pts) ** 2

    cases = {
        "delta_pi_3": k(math.pi / 3),
        "uniform": np.ones(pts.size),
        "two_atoms_0_pi": 0.5 * k(0.0) + 0.5 * k(math.pi),
    }
    mus = {name: bd.poisson_inverse(h, B, ridge, pts) for name, h in cases.items()}
    m = bd.mass_near(mus["delta_pi_3"], math.pi / 3, 2)
    rep.require("delta_mass_within_2_bins", m, m >= 0.9, ">= 0.9")
    u = float(np.abs(mus["uniform"].weights - 1 / B).max())
    rep.require("uniform_max_weight_dev", u, u <= 1e-6, "1/B +/- 1e-6")
    m0 = bd.mass_near(mus["two_atoms_0_pi"], 0.0, 2)
    m1 = bd.mass_near(mus["two_atoms_0_pi"], math.pi, 2)
    rep.require("two_atom_cluster_masses", f"{m0:.6f},{m1:.6f}", abs(m0 - 0.5) <= 0.05 and abs(m1 - 0.5) <= 0.05,
                "0.5 +/- 0.05 each")
    for name, mu in mus.items():
        rep.require(f"forward_residual_{name}", mu.residual, mu.residual <= 10 * ridge, f"<= 10 x ridge = {10 * ridge:g}")
        rep.note(f"verdict_{name}", bd.classify_type(mu, cfg.atom_threshold, cfg.support_threshold).verdict)
        rep.tables[f"inverse_{name}.csv"] = (["bin_center", "weight"], _hist_rows(mu))


def _plaque_inversion(h: EstimatedH, j: int, B: int, ridge: float, cfg: ExperimentConfig):
    pts = bd.inversion_grid(radius=0.6)
    cells = h.grid.cells.locate(pts)
    vals = h.values[cells, j]
    vals = vals / vals[0]
    mu = bd.poisson_inverse(vals, B, ridge, pts)
    return mu, bd.classify_type(mu, cfg.atom_threshold, cfg.support_threshold, None)


def run_e8(cfg: ExperimentConfig, rep: RunReport, pass_flag: bool = False):
    grids, grid = _occupation(cfg, _z_start(cfg))
    h = estimate_h(grid)
    B = cfg.boundary_bins
    mu, verdict = _plaque_inversion(h, 0, B, cfg.ridge, cfg)
    rep.note("verdict_plaque_0", verdict.verdict, "expected TypeII (not asserted)")
    rep.note("support_fraction_plaque_0", verdict.support_fraction)
    rep.note("max_atom_plaque_0", verdict.max_atom)
    rep.note("singularity_stat_plaque_0", bd.singularity_stat(mu))
    rep.note("inversion_residual_plaque_0", mu.residual)
    tally = {}
    for j in range(grid.n_z):
        v = _plaque_inversion(h, j, B, cfg.ridge, cfg)[1].verdict
        tally[v] = tally.get(v, 0) + 1
    rep.note("verdicts_over_plaques", ",".join(f"{k}:{tally[k]}" for k in sorted(tally)))
    est = estimate_lambda(_cocycles(cfg, "forward", n_paths=200, horizon=50.0, h_est=h))
    rep.note("lambda_estimated_h", est.lambda_, "no bound")
    rep.note("lambda_estimated_h_stderr", est.stderr)
    rep.tables["occupation.csv"] = (["u_bin", "z_bin", "occupation", "volume"], _grid_rows(grid))
    rep.documents["occupation_meta.json"] = _grid_meta(grid, cfg)
    rep.tables["boundary_measure_plaque_0.csv"] = (["bin_center", "weight"], _hist_rows(mu))
    rep.documents["verdict.json"] = verdict.to_dict()
    rep.documents["exponent_estimated.json"] = est.to_dict()


def run_custom(cfg: ExperimentConfig, rep: RunReport):
    grids, grid = _occupation(cfg, _z_start(cfg))
    fr = np.array([g.u_marginal() / g.total_time for g in grids])
    if len(grids) > 1:
        rep.note("u_marginal_chi2_p", dispersion_chi2(fr, grid.cells.volumes)[2])
    zf = grid.z_marginal() / grid.total_time
    rep.note("z_marginal_max_rel_dev", float(np.abs(zf * grid.n_z - 1).max()))
    try:
        h = estimate_h(grid)
        est = estimate_lambda(_cocycles(cfg, "forward", n_paths=200, horizon=20.0, h_est=h))
        rep.note("lambda_estimated_h", est.lambda_)
        rep.documents["exponent_estimated.json"] = est.to_dict()
    except LeafwiseError as exc:
        rep.note("lambda_estimated_h", f"unavailable: {exc}")
    rep.tables["occupation.csv"] = (["u_bin", "z_bin", "occupation", "volume"], _grid_rows(grid))
    rep.documents["occupation_meta.json"] = _grid_meta(grid, cfg)


RUNNERS = {"E1": run_e1, "E2": run_e2, "E3": run_e3, "E4": run_e4, "E5": run_e5, "E6": run_e6,
           "E7": run_e7, "E8": run_e8, "custom": run_custom}


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Run the named experiment; deterministic given the configuration."""
    rep = RunReport(config=cfg.to_dict())
    t0 = time.perf_counter()
    try:
        RUNNERS[cfg.experiment](cfg, rep)
    except LeafwiseError as exc:
        raise ExperimentError(f"{cfg.experiment}: {exc}") from exc
    rep.wall_time = time.perf_counter() - t0
    return rep
