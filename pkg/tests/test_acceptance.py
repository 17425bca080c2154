"""Acceptance criteria, each at its stated tolerance and runtime budget.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from enkf_lab.experiments import SweepConfig, run_sweep_j
from enkf_lab.verification import (
    combined_bound_violations,
    consistency_triangle,
    epsilon_law_result,
    epsilon_sweep,
    invariant_report,
    random_joint,
    stability_ratio_result,
    transport_zscores,
)
from enkf_lab.rng import STREAM_VERIFY, make_rng

pytestmark = pytest.mark.acceptance


def record(number, title, passed, detail, seconds, budget):
    within = seconds < budget
    ok = passed and within
    ACCEPTANCE_LINES.append(
        f"[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}; {seconds:.1f}s (budget {budget:.0f}s)"
    )
    print(ACCEPTANCE_LINES[-1])
    return ok


def test_criterion_1_consistency_triangle():
    t0 = time.perf_counter()
    r = consistency_triangle(seed=0, J=100_000, n_replicates=20, n_cells=2000)
    dt = time.perf_counter() - t0
    ok_grid = r["grid_max_abs_error"] <= 1e-2
    ok_pf = bool(np.all(r["pf_error"] <= 3 * r["pf_se"]))
    ok_mf = bool(np.all(r["mean_field_error"] <= 3 * r["pf_se"]))
    detail = (f"grid max|err| {r['grid_max_abs_error']:.1e} <= 1e-2; "
              f"PF |err|/SE {np.round(r['pf_error'] / r['pf_se'], 2).tolist()} <= 3; "
              f"mean-field |err|/SE {np.round(r['mean_field_error'] / r['pf_se'], 3).tolist()} <= 3")
    assert record(1, "consistency triangle", ok_grid and ok_pf and ok_mf, detail, dt, 60)


def test_criterion_2_transport_exactness():
    t0 = time.perf_counter()
    rng = make_rng(0, STREAM_VERIFY, 2)
    worst = []
    for i in range(20):
        d = 1 if i < 10 else 2
        joint = random_joint(rng, d, 1)
        y_obs = joint.mean_y + rng.normal(0.0, 1.0, 1) * np.sqrt(np.diag(joint.cyy))
        worst.append(float(transport_zscores(joint, y_obs, 1_000_000, rng).max()))
    dt = time.perf_counter() - t0
    detail = f"20 joints (10 with d=1, 10 with d=2; K=1), 1e6 samples, max |z| {max(worst):.2f} <= 4"
    assert record(2, "transport equals conditioning on Gaussians", max(worst) <= 4.0, detail, dt, 60)


def test_criterion_3_monte_carlo_rate():
    t0 = time.perf_counter()
    cfg = SweepConfig(j_values=(16, 64, 256, 1024, 4096), n_replicates=100, n_steps=10,
                      test_functions=("identity",), base_seed=0)
    rep = run_sweep_j(cfg)
    dt = time.perf_counter() - t0
    fit = rep.fits[0]
    detail = f"slope {fit.slope:.3f} +/- {fit.stderr:.3f} in [-0.65, -0.35]"
    assert record(3, "Monte Carlo rate in J", -0.65 <= fit.slope <= -0.35, detail, dt, 300)


@pytest.fixture(scope="module")
def eps_run():
    t0 = time.perf_counter()
    rep = epsilon_sweep(seed=0, refinement_check=False)
    return rep, time.perf_counter() - t0


def test_criterion_4_near_linear_error_law(eps_run):
    rep, dt = eps_run
    assert rep.config.n_cells == 2000 and rep.config.n_steps == 10
    assert [r.epsilon for r in rep.records] == [0.0, 0.02, 0.05, 0.1, 0.2, 0.4]
    ok, detail = epsilon_law_result(rep)
    assert record(4, "near-linear error law in epsilon", ok, detail, dt, 300)


def test_criterion_5_stability_ratio(eps_run):
    rep, dt = eps_run
    ok, detail = stability_ratio_result(rep, factor=3.0)
    assert record(5, "stability-bound ratio", ok, detail, dt, 300)


def test_criterion_6_invariant_suites():
    t0 = time.perf_counter()
    rep = invariant_report(seed=0)
    dt = time.perf_counter() - t0
    failed = [k for k, (ok, _) in rep.items() if not ok]
    detail = "; ".join(f"{k}: {d}" for k, (_, d) in rep.items())
    assert record(6, "invariant suites", not failed, detail, dt, 60)


def test_criterion_7_combined_bound_shape():
    t0 = time.perf_counter()
    cfg = SweepConfig(j_values=(64, 1024), epsilon_values=(0.02, 0.2), n_replicates=100, n_steps=10, base_seed=0)
    rep = run_sweep_j(cfg)
    dt = time.perf_counter() - t0
    bad = combined_bound_violations(rep, slack=3.0)
    cells = {(a.metric, a.J, a.epsilon): round(a.value, 4) for a in rep.aggregates if a.metric == "identity"}
    detail = f"identity RMS {cells}; " + ("monotone within 3 SE for all test functions" if not bad else "; ".join(bad))
    assert record(7, "combined bound shape in (J, epsilon)", not bad, detail, dt, 300)
