"""Acceptance gate: one PASS/FAIL line per criterion, each run at full scale."""

import math
import time

import numpy as np
import pytest

from leafwise.config import validate_config
from leafwise.experiments import run_experiment
from leafwise.hypdisk import MobiusIsometry, hyp_distance
from leafwise.tessellation import build_genus2_group

RUNTIME_LIMIT = {1: 1, 2: 120, 3: 30, 4: 300, 5: 600, 6: 300, 7: 300, 8: 60, 9: 900}
EXPERIMENT = {2: "E1", 3: "E2", 4: "E3", 5: "E4", 6: "E5", 7: "E6", 8: "E7", 9: "E8"}


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def reports():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = run_experiment(validate_config({"experiment": name}))
        return cache[name]
    return get


def test_criterion_1_geometry(capsys):
    start = time.perf_counter()
    setup = build_genus2_group()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        g = MobiusIsometry.rotation(rng.uniform(0, 2 * math.pi)) @ MobiusIsometry.translation(
            rng.uniform(0, 3), rng.uniform(0, 2 * math.pi))
        p, q = (rng.uniform(0, 0.9) * np.exp(2j * math.pi * rng.uniform()) for _ in range(2))
        worst = max(worst, abs(hyp_distance(g.apply_complex(p), g.apply_complex(q)) - hyp_distance(p, q)))
    radius_err = abs(setup.circumradius - math.acosh(1 / math.tan(math.pi / 8) ** 2))
    elapsed = time.perf_counter() - start
    ok = setup.relator_residual < 1e-9 and radius_err <= 1e-9 and worst < 1e-10 and elapsed < RUNTIME_LIMIT[1]
    verdict(capsys, 1, ok, f"relator residual {setup.relator_residual:.2e}, circumradius error {radius_err:.2e}, "
                           f"isometry error {worst:.2e}, {elapsed:.2f} s")


@pytest.mark.parametrize("n", range(2, 9))
def test_criteria_2_to_8_pass_checks(n, reports, capsys):
    rep = reports(EXPERIMENT[n])
    failed = [f"{c.name} = {c.value} ({c.tolerance})" for c in rep.checks if c.flag == "pass" and not c.passed]
    in_time = rep.wall_time < RUNTIME_LIMIT[n]
    summary = ", ".join(f"{c.name} = {c.value}" for c in rep.checks if c.flag == "pass")
    detail = f"{EXPERIMENT[n]} in {rep.wall_time:.1f} s: " + (
        summary if not failed else "failed " + "; ".join(failed))
    if not in_time:
        detail += f"; over the {RUNTIME_LIMIT[n]} s budget"
    verdict(capsys, n, not failed and in_time, detail)


def test_criterion_9_exploration_is_reported(reports, capsys):
    rep = reports("E8")
    wanted = ("verdict_plaque_0", "support_fraction_plaque_0", "singularity_stat_plaque_0", "lambda_estimated_h")
    values = {c.name: c.value for c in rep.checks}
    flags = {c.name: c.flag for c in rep.checks}
    ok = (all(name in values for name in wanted) and all(flags[name] == "report" for name in wanted)
          and rep.wall_time < RUNTIME_LIMIT[9])
    detail = f"E8 in {rep.wall_time:.1f} s: " + ", ".join(f"{k} = {values.get(k, 'missing')}" for k in wanted)
    verdict(capsys, 9, ok, detail)
