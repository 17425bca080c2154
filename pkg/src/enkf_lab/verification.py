"""Self-checks run by ``enkf-lab verify`` and by the acceptance tests.

Each check returns a :class:`CheckResult`; none of them raise on a numerical
failure, so a caller can print a full pass/fail table.
"""

from __future__ import annotations

import time
from typing import Callable, NamedTuple

import numpy as np

from . import rng as rngmod
from .experiments import SweepConfig, run_sweep_epsilon, run_sweep_j
from .filters import (
    GridFilterState,
    build_joint_grid,
    grid_predict,
    run_bootstrap_pf,
    run_enkf,
    run_grid_filter,
    run_kalman,
    run_mean_field_grid,
    state_grid_for,
    transport_apply,
)
from .linalg import is_psd, jittered_cholesky
from .measures import (
    MASS_TOL,
    GaussianMoments,
    GridDensity,
    GridSpec,
    JointGaussianMoments,
    empirical_moments,
    gaussian_projection,
    gaussian_to_grid,
    weighted_tv,
)
from .models import default_family, realize_perturbed, simulate_trajectory

TRIANGLE_STEPS = 5
SWEEP_EPSILONS = (0.0, 0.02, 0.05, 0.1, 0.2, 0.4)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


def _data(family, n_steps: int, seed: int, init_mean=(0.0,), init_cov=((1.0,),)):
    state, obs = realize_perturbed(family)
    traj = simulate_trajectory(state, obs, init_mean, init_cov, n_steps, rngmod.make_rng(seed, rngmod.STREAM_DATA))
    return state, obs, traj.observations


# --------------------------------------------------------------------------- 1. consistency triangle


def consistency_triangle(seed: int = 0, J: int = 100_000, n_replicates: int = 20, n_cells: int = 2000) -> dict:
    """Grid filter, bootstrap PF and mean-field grid law against Kalman, linear Gaussian, N = 5.

    PF standard errors come from the spread of ``n_replicates`` independent
    PF runs; replicate 0 is the PF under test.
    """
    family = default_family(0.0)
    state, obs, y = _data(family, TRIANGLE_STEPS, seed)
    kal = run_kalman(family, (0.0,), ((1.0,),), y)
    spec = state_grid_for(family, (0.0,), ((1.0,),), y, n_cells=n_cells)
    grid = run_grid_filter(state, obs, (0.0,), ((1.0,),), y, spec)
    mf = run_mean_field_grid(state, obs, (0.0,), ((1.0,),), y, spec)

    def mv(m):
        return float(m.mean[0]), float(m.cov[0, 0])

    grid_err = max(max(abs(a - b) for a, b in zip(mv(gaussian_projection(g)), mv(k))) for g, k in zip(grid, kal))
    pf_final = []
    for rep in range(n_replicates):
        rng = rngmod.make_rng(seed, rngmod.STREAM_VERIFY, 1, rep)
        pf_final.append(mv(run_bootstrap_pf(state, obs, (0.0,), ((1.0,),), y, J, rng)[-1].moments()))
    pf_final = np.array(pf_final)
    se = pf_final.std(axis=0, ddof=1)
    k_n = np.array(mv(kal[-1]))
    mf_n = np.array(mv(gaussian_projection(mf[-1])))
    return {
        "grid_max_abs_error": grid_err,
        "pf_error": np.abs(pf_final[0] - k_n),
        "pf_se": se,
        "mean_field_error": np.abs(mf_n - k_n),
    }


def check_consistency_triangle(seed: int = 0, **kw) -> CheckResult:
    def run():
        r = consistency_triangle(seed, **kw)
        ok_grid = r["grid_max_abs_error"] <= 1e-2
        ok_pf = bool(np.all(r["pf_error"] <= 3 * r["pf_se"]))
        ok_mf = bool(np.all(r["mean_field_error"] <= 3 * r["pf_se"]))
        detail = (
            f"grid-Kalman max|err|={r['grid_max_abs_error']:.2e} (tol 1e-2); "
            f"PF |err|/SE mean={r['pf_error'][0] / r['pf_se'][0]:.2f} var={r['pf_error'][1] / r['pf_se'][1]:.2f}; "
            f"mean-field |err|/SE mean={r['mean_field_error'][0] / r['pf_se'][0]:.3f} "
            f"var={r['mean_field_error'][1] / r['pf_se'][1]:.3f} (tol 3)"
        )
        return ok_grid and ok_pf and ok_mf, detail

    return _timed("consistency triangle", run)


# --------------------------------------------------------------------------- 2. transport exactness


def random_joint(rng: np.random.Generator, d: int, k: int) -> JointGaussianMoments:
    n = d + k
    a = rng.standard_normal((n, n))
    cov = a @ a.T + 0.2 * np.eye(n)
    mean = rng.normal(0.0, 2.0, n)
    return JointGaussianMoments(mean[:d], mean[d:], cov[:d, :d], cov[:d, d:], cov[d:, d:])


def transport_zscores(joint: JointGaussianMoments, y_obs, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Standardized errors of the pushed-forward sample mean and covariance entries."""
    pts = joint.as_gaussian().sample(rng, n_samples)
    d = joint.dim_d
    out = transport_apply(joint, y_obs, pts[:, :d], pts[:, d:])
    target = joint.conditional(y_obs)
    c = target.cov
    emp = empirical_moments(out)
    z = list((emp.mean - target.mean) / np.sqrt(np.diag(c) / n_samples))
    for i in range(d):
        for j in range(i, d):
            se = np.sqrt((c[i, i] * c[j, j] + c[i, j] ** 2) / n_samples)
            z.append((emp.cov[i, j] - c[i, j]) / se)
    return np.abs(np.array(z))


def check_transport_exactness(seed: int = 0, n_joints: int = 20, n_samples: int = 1_000_000) -> CheckResult:
    def run():
        rng = rngmod.make_rng(seed, rngmod.STREAM_VERIFY, 2)
        worst = 0.0
        for i in range(n_joints):
            d = 1 if i < n_joints // 2 else 2
            joint = random_joint(rng, d, 1)
            y_obs = joint.mean_y + rng.normal(0.0, 1.0, 1) * np.sqrt(np.diag(joint.cyy))
            worst = max(worst, float(transport_zscores(joint, y_obs, n_samples, rng).max()))
        return worst <= 4.0, f"{n_joints} joints (d=1,2; K=1), {n_samples} samples: max |z|={worst:.2f} (tol 4)"

    return _timed("transport exactness on Gaussians", run)


# --------------------------------------------------------------------------- 3. Monte Carlo rate


def check_monte_carlo_rate(seed: int = 0, threads: int | None = None) -> CheckResult:
    def run():
        cfg = SweepConfig(base_seed=seed, test_functions=("identity",))
        rep = run_sweep_j(cfg, threads=threads)
        fit = rep.fits[0]
        return fit.in_band, f"slope {fit.slope:.3f} +/- {fit.stderr:.3f}, band {list(fit.band)}"

    return _timed("Monte Carlo rate in J", run)


# --------------------------------------------------------------------------- 4, 5. epsilon sweep


def epsilon_sweep(seed: int = 0, refinement_check: bool = False):
    cfg = SweepConfig(base_seed=seed, epsilon_values=SWEEP_EPSILONS, j_values=(),
                      refinement_check=refinement_check)
    return run_sweep_epsilon(cfg)


def epsilon_law_result(report) -> tuple[bool, str]:
    d = {r.epsilon: float(r.d_g[-1]) for r in report.records}
    pos = sorted(e for e in d if e > 0)
    vals = [d[e] for e in pos]
    monotone = all(b >= a for a, b in zip(vals, vals[1:]))
    fit = next((f for f in report.fits if f.metric == "d_g"), None)
    if fit is None:
        return False, "fewer than 3 positive epsilon values; no slope to check"
    floor = report.metadata["discretization_floor"]["floor"]
    # without an epsilon = 0 run there is nothing to compare with the floor
    zero_ok = 0.0 not in d or d[0.0] < 2.0 * floor
    detail = (f"monotone={monotone}; slope {fit.slope:.3f} +/- {fit.stderr:.3f} band {list(fit.band)}; "
              f"d_g(eps=0)={d.get(0.0, float('nan')):.2e} vs 2*floor={2 * floor:.2e}")
    return monotone and fit.in_band and zero_ok, detail


def stability_ratio_result(report, factor: float = 3.0) -> tuple[bool, str]:
    ratios = [float(r.d_g[-1]) / float(r.gaussianity_gap.max())
              for r in report.records if 0.02 <= r.epsilon <= 0.4]
    if not ratios:
        return False, "no epsilon values in [0.02, 0.4]"
    finite = all(np.isfinite(ratios)) and min(ratios) > 0
    spread = max(ratios) / min(ratios) if finite else float("inf")
    return finite and spread < factor, f"ratios {[round(x, 4) for x in ratios]}, spread {spread:.2f} (tol < {factor:g})"


def check_epsilon_sweep(seed: int = 0) -> list[CheckResult]:
    t0 = time.perf_counter()
    report = epsilon_sweep(seed)
    elapsed = time.perf_counter() - t0
    ok4, det4 = epsilon_law_result(report)
    ok5, det5 = stability_ratio_result(report)
    return [
        CheckResult("near-linear error law in epsilon", ok4, det4, elapsed),
        CheckResult("stability-bound ratio", ok5, det5, 0.0),
    ]


# --------------------------------------------------------------------------- 6. invariants


def _random_grid_density(rng, spec: GridSpec) -> GridDensity:
    return GridDensity.from_values(spec, rng.gamma(0.5, size=spec.shape))


def invariant_report(seed: int = 0) -> dict[str, tuple[bool, str]]:
    rng = rngmod.make_rng(seed, rngmod.STREAM_VERIFY, 6)
    out: dict[str, tuple[bool, str]] = {}

    family = default_family(0.2)
    state, obs, y = _data(family, 5, seed)
    spec = state_grid_for(family, (0.0,), ((1.0,),), y, n_cells=400)
    laws = run_grid_filter(state, obs, (0.0,), ((1.0,),), y, spec)
    laws += run_mean_field_grid(state, obs, (0.0,), ((1.0,),), y, spec)
    laws.append(gaussian_to_grid(GaussianMoments([0.3], [[0.7]]), spec))
    worst = max(abs(g.mass - 1.0) for g in laws)
    out["mass normalization"] = (worst <= MASS_TOL, f"max |mass-1|={worst:.1e} over {len(laws)} densities")

    ok_psd = True
    for _ in range(50):
        n = int(rng.integers(1, 5))
        b = rng.standard_normal((n, max(1, n - 1)))
        a = b @ b.T  # rank deficient
        chol, _shift = jittered_cholesky(a)
        ok_psd &= is_psd(chol @ chol.T)
    ens = run_enkf(state, obs, (0.0,), ((1.0,),), y, 8, rngmod.make_rng(seed, rngmod.STREAM_VERIFY, 7))
    covs = [empirical_moments(e).cov for e in ens] + [m.cov for m in run_kalman(family, (0.0,), ((1.0,),), y)]
    ok_psd &= all(is_psd(c) for c in covs)
    out["PSD after jitter"] = (ok_psd, "50 rank-deficient matrices plus filter covariances")

    mspec = GridSpec((-4.0,), (4.0,), (60,))
    viol = 0
    for _ in range(100):
        mu, nu, rho = (_random_grid_density(rng, mspec) for _ in range(3))
        a, b, c = weighted_tv(mu, nu), weighted_tv(nu, rho), weighted_tv(mu, rho)
        viol += not (weighted_tv(mu, mu) == 0.0 and a >= 0 and a == weighted_tv(nu, mu) and c <= a + b + 1e-12)
    out["metric axioms"] = (viol == 0, f"{viol} violations in 100 random triples")

    def rerun():
        traj = simulate_trajectory(state, obs, (0.0,), ((1.0,),), 5, rngmod.make_rng(seed, 99))
        ens = run_enkf(state, obs, (0.0,), ((1.0,),), traj.observations, 16, rngmod.make_rng(seed, 98))
        return traj.to_csv().encode() + ens[-1].particles.tobytes()

    out["determinism"] = (rerun() == rerun(), "simulate + EnKF rerun byte comparison")

    pred = grid_predict(GridFilterState(laws[0]), state)
    joint = build_joint_grid(pred, obs)
    marg = joint.marginal(0)
    err = float(np.max(np.abs(marg.values - pred.density.values)))
    out["marginal consistency of the lift"] = (err <= 1e-6, f"max |marginal - input|={err:.1e}")
    return out


def check_invariants(seed: int = 0) -> CheckResult:
    def run():
        rep = invariant_report(seed)
        failed = [k for k, (ok, _) in rep.items() if not ok]
        detail = "; ".join(f"{k}: {d}" for k, (_, d) in rep.items())
        return not failed, detail

    return _timed("invariant suites", run)


# --------------------------------------------------------------------------- 7. combined bound shape


def combined_bound_violations(report, slack: float = 3.0) -> list[str]:
    rows = {(a.metric, a.J, a.epsilon): a for a in report.aggregates}
    metrics = sorted({a.metric for a in report.aggregates})
    js = sorted({a.J for a in report.aggregates})
    eps = sorted({a.epsilon for a in report.aggregates})
    bad = []
    for m in metrics:
        for e in eps:
            for j0, j1 in zip(js, js[1:]):
                a, b = rows[(m, j0, e)], rows[(m, j1, e)]
                if b.value > a.value + slack * np.hypot(a.stderr, b.stderr):
                    bad.append(f"{m}: J {j0}->{j1} at eps={e} increases")
        for j in js:
            for e0, e1 in zip(eps, eps[1:]):
                a, b = rows[(m, j, e0)], rows[(m, j, e1)]
                if b.value < a.value - slack * np.hypot(a.stderr, b.stderr):
                    bad.append(f"{m}: eps {e0}->{e1} at J={j} decreases")
    return bad


def check_combined_bound(seed: int = 0, threads: int | None = None) -> CheckResult:
    def run():
        cfg = SweepConfig(base_seed=seed, j_values=(64, 1024), epsilon_values=(0.02, 0.2))
        bad = combined_bound_violations(run_sweep_j(cfg, threads=threads))
        return not bad, "monotone within 3 SE" if not bad else "; ".join(bad)

    return _timed("combined bound shape in (J, epsilon)", run)


def run_checks(full: bool = False, seed: int = 0, threads: int | None = None) -> list[CheckResult]:
    """Quick suite (triangle, transport, invariants); ``full`` adds the sweeps."""
    results = [
        check_consistency_triangle(seed),
        check_transport_exactness(seed),
        check_invariants(seed),
    ]
    if full:
        results.append(check_monte_carlo_rate(seed, threads))
        results += check_epsilon_sweep(seed)
        results.append(check_combined_bound(seed, threads))
    return results
