"""Replicated convergence sweeps and log-log rate fits.

``run_sweep_j`` measures the finite-ensemble error against the true filter as
the ensemble grows; ``run_sweep_epsilon`` measures the distance between the
mean-field ensemble Kalman law and the true filter as the model moves away
from affine, alongside the Gaussianity gap of the true filter's forecasts.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import linregress

from . import rng as rngmod
from .errors import ConfigurationError, InsufficientDataError
from .linalg import psd_factor
from .filters import (
    build_joint_grid,
    run_enkf,
    run_grid_filter,
    run_kalman,
    run_mean_field_grid,
    state_grid_for,
)
from .measures import (
    Ensemble,
    GaussianMoments,
    GridDensity,
    empirical_moments,
    gaussian_projection,
    gaussian_to_grid,
    gaussianity_gap,
    weighted_tv,
)
from .models import PerturbedAffineFamily, Trajectory, default_family, realize_perturbed, simulate_trajectory

TestFunction = Callable[[np.ndarray], np.ndarray]


def _square_clipped(x: np.ndarray) -> np.ndarray:
    return np.minimum(np.sum(x * x, axis=-1, keepdims=True), 100.0)


# each satisfies |phi(v)| <= 1 + |v|^2
TEST_FUNCTIONS: dict[str, TestFunction] = {
    "identity": lambda x: np.asarray(x, dtype=float),
    "tanh": np.tanh,
    "square_clipped": _square_clipped,
}

J_SLOPE_BAND = (-0.65, -0.35)
EPS_SLOPE_BAND = (0.8, 1.2)


@dataclass(frozen=True)
class SweepConfig:
    family: PerturbedAffineFamily = field(default_factory=default_family)
    init_mean: tuple[float, ...] = (0.0,)
    init_cov: tuple[tuple[float, ...], ...] = ((1.0,),)
    n_steps: int = 10
    j_values: tuple[int, ...] = (16, 64, 256, 1024, 4096)
    epsilon_values: tuple[float, ...] = (0.0,)
    n_replicates: int = 100
    test_functions: tuple[str, ...] = ("identity", "tanh", "square_clipped")
    base_seed: int = 0
    n_cells: int = 2000
    n_y_cells: int | None = None
    n_std: float = 6.0
    pad: float = 1.0
    data_epsilon: float = 0.0
    refinement_check: bool = True
    j_slope_band: tuple[float, float] = J_SLOPE_BAND
    eps_slope_band: tuple[float, float] = EPS_SLOPE_BAND

    def __post_init__(self):
        js = tuple(int(j) for j in self.j_values)
        eps = tuple(float(e) for e in self.epsilon_values)
        object.__setattr__(self, "j_values", js)
        object.__setattr__(self, "epsilon_values", eps)
        object.__setattr__(self, "test_functions", tuple(self.test_functions))
        if any(b <= a for a, b in zip(js, js[1:])):
            raise ConfigurationError("j_values must be strictly increasing")
        if js and js[0] < 2:
            raise ConfigurationError("ensemble sizes must be at least 2")
        if any(not 0.0 <= e <= 1.0 for e in eps + (self.data_epsilon,)):
            raise ConfigurationError("epsilon values must lie in [0, 1]")
        if self.n_replicates < 10:
            raise ConfigurationError("n_replicates must be at least 10")
        unknown = set(self.test_functions) - set(TEST_FUNCTIONS)
        if unknown:
            raise ConfigurationError(f"unknown test functions: {sorted(unknown)}")


@dataclass(frozen=True)
class RunRecord:
    """Per-step errors of one filter run against its reference (index 0 is the initial law)."""

    replicate: int
    J: int | None
    epsilon: float
    mean_error: np.ndarray
    cov_error: np.ndarray
    test_function_errors: dict[str, np.ndarray]
    d_g: np.ndarray | None = None
    gaussianity_gap: np.ndarray | None = None

    def __post_init__(self):
        arrays = [self.mean_error, self.cov_error, *self.test_function_errors.values()]
        arrays += [a for a in (self.d_g, self.gaussianity_gap) if a is not None]
        for a in arrays:
            a = np.asarray(a)
            if not (np.all(np.isfinite(a)) and np.all(a >= 0.0)):
                raise ValueError("error fields must be finite and nonnegative")


class AggregateRow(NamedTuple):
    epsilon: float
    J: int | None
    metric: str
    value: float
    stderr: float
    n: int


class RateFit(NamedTuple):
    slope: float
    intercept: float
    stderr: float


@dataclass(frozen=True)
class FitRow:
    epsilon: float | None
    metric: str
    slope: float
    intercept: float
    stderr: float
    residuals: tuple[float, ...]
    band: tuple[float, float]

    @property
    def in_band(self) -> bool:
        return self.band[0] <= self.slope <= self.band[1]


@dataclass
class SweepReport:
    kind: str
    config: SweepConfig
    records: list[RunRecord]
    aggregates: list[AggregateRow]
    fits: list[FitRow]
    metadata: dict


def fit_rate(points: Sequence[tuple[float, float]]) -> RateFit:
    """Least-squares line through ``(log x, log y)``; returns slope, intercept and slope stderr."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise InsufficientDataError("rate fitting needs at least 3 points")
    if np.any(pts <= 0.0):
        raise ValueError("rate fitting needs strictly positive x and y")
    res = linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    return RateFit(float(res.slope), float(res.intercept), float(res.stderr))


def fit_residuals(points, fit: RateFit) -> tuple[float, ...]:
    pts = np.asarray(points, dtype=float)
    pred = fit.intercept + fit.slope * np.log(pts[:, 0])
    return tuple(float(r) for r in np.log(pts[:, 1]) - pred)


def rms_with_stderr(errors) -> tuple[float, float]:
    """Root mean square and its delta-method standard error."""
    sq = np.asarray(errors, dtype=float) ** 2
    rms = float(np.sqrt(sq.mean()))
    if rms == 0.0:
        return 0.0, 0.0
    se_ms = float(sq.std(ddof=1) / np.sqrt(sq.size))
    return rms, se_ms / (2.0 * rms)


def gaussian_expectation(f: TestFunction, m: GaussianMoments, n_nodes: int | None = None) -> np.ndarray:
    """``E[f(v)]`` for ``v ~ N(m)`` by tensor Gauss-Hermite quadrature (``d <= 4``)."""
    d = m.dim
    if d > 4:
        raise ConfigurationError("Gaussian reference expectations are limited to d <= 4")
    n = n_nodes or {1: 80, 2: 40}.get(d, 16)
    x, w = hermegauss(n)
    w = w / w.sum()
    mesh = np.meshgrid(*([x] * d), indexing="ij")
    z = np.stack([a.ravel() for a in mesh], axis=-1)
    wt = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    pts = m.mean + z @ psd_factor(m.cov, "cov").T
    return wt @ np.asarray(f(pts), dtype=float)


def law_expectation(f: TestFunction, law) -> np.ndarray:
    if isinstance(law, GaussianMoments):
        return gaussian_expectation(f, law)
    if isinstance(law, GridDensity):
        return law.expectation(f)
    parts = law.particles if isinstance(law, Ensemble) else np.asarray(law)
    return np.asarray(f(parts), dtype=float).mean(axis=0)


def _moment_errors(est: GaussianMoments, ref: GaussianMoments) -> tuple[float, float]:
    return float(np.linalg.norm(est.mean - ref.mean)), float(np.linalg.norm(est.cov - ref.cov))


def _threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("ENKF_LAB_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def shared_data(config: SweepConfig) -> Trajectory:
    """The single observation record every filter in a sweep conditions on."""
    state, obs = realize_perturbed(config.family.with_epsilon(config.data_epsilon))
    return simulate_trajectory(
        state, obs, config.init_mean, config.init_cov, config.n_steps,
        rngmod.make_rng(config.base_seed, rngmod.STREAM_DATA),
    )


def _reference_laws(config: SweepConfig, epsilon: float, observations) -> list:
    fam = config.family.with_epsilon(epsilon)
    if epsilon == 0.0:
        return run_kalman(fam, config.init_mean, config.init_cov, observations)
    if fam.dim_d != 1 or fam.dim_k != 1:
        raise ConfigurationError("references for epsilon > 0 need the grid filter, which requires d = K = 1")
    spec = state_grid_for(fam.with_epsilon(0.0), config.init_mean, config.init_cov, observations,
                          n_cells=config.n_cells, n_std=config.n_std, pad=config.pad)
    state, obs = realize_perturbed(fam)
    return run_grid_filter(state, obs, config.init_mean, config.init_cov, observations, spec)


def _compare(laws, ref_moments, ref_values, config: SweepConfig):
    n_steps = len(laws)
    mean_err, cov_err = np.zeros(n_steps), np.zeros(n_steps)
    tf_err = {name: np.zeros(n_steps) for name in config.test_functions}
    for n, law in enumerate(laws):
        mean_err[n], cov_err[n] = _moment_errors(gaussian_projection(law), ref_moments[n])
        for name in config.test_functions:
            est = law_expectation(TEST_FUNCTIONS[name], law)
            tf_err[name][n] = float(np.linalg.norm(est - ref_values[name][n]))
    return mean_err, cov_err, tf_err


def run_sweep_j(config: SweepConfig, threads: int | None = None) -> SweepReport:
    """EnKF error against the true filter at step N for every (epsilon, J, replicate).

    The reference is the Kalman filter at ``epsilon = 0`` (any dimension) and
    the grid filter otherwise (``d = K = 1``). Replicate ``i`` of cell
    ``(J, epsilon)`` draws from stream ``(STREAM_REPLICATE, J, epsilon_key, i)``.
    """
    data = shared_data(config)
    y = data.observations
    records: list[RunRecord] = []
    aggregates: list[AggregateRow] = []
    fits: list[FitRow] = []
    n_workers = _threads(threads)

    for eps in config.epsilon_values:
        refs = _reference_laws(config, eps, y)
        ref_moments = [r if isinstance(r, GaussianMoments) else gaussian_projection(r) for r in refs]
        ref_values = {
            name: [law_expectation(TEST_FUNCTIONS[name], r) for r in refs] for name in config.test_functions
        }
        state, obs = realize_perturbed(config.family.with_epsilon(eps))

        def one(job, eps=eps, state=state, obs=obs, ref_moments=ref_moments, ref_values=ref_values):
            J, rep = job
            rng = rngmod.make_rng(config.base_seed, rngmod.STREAM_REPLICATE, J, rngmod.epsilon_key(eps), rep)
            ens = run_enkf(state, obs, config.init_mean, config.init_cov, y, J, rng)
            me, ce, tf = _compare(ens, ref_moments, ref_values, config)
            return RunRecord(rep, J, eps, me, ce, tf)

        jobs = [(J, rep) for J in config.j_values for rep in range(config.n_replicates)]
        if n_workers > 1:
            with ThreadPoolExecutor(n_workers) as pool:
                cell_records = list(pool.map(one, jobs))
        else:
            cell_records = [one(job) for job in jobs]
        records += cell_records

        for name in config.test_functions:
            pts = []
            for J in config.j_values:
                errs = [r.test_function_errors[name][-1] for r in cell_records if r.J == J]
                rms, se = rms_with_stderr(errs)
                aggregates.append(AggregateRow(eps, J, name, rms, se, len(errs)))
                pts.append((J, rms))
            if len(pts) >= 3 and all(p[1] > 0 for p in pts):
                fit = fit_rate(pts)
                fits.append(FitRow(eps, name, fit.slope, fit.intercept, fit.stderr,
                                   fit_residuals(pts, fit), tuple(config.j_slope_band)))

    metadata = {
        "base_seed": config.base_seed,
        "data_stream": [rngmod.STREAM_DATA],
        "replicate_stream": "[STREAM_REPLICATE, J, round(epsilon * 1e9), replicate]",
        "reference": {str(e): ("kalman" if e == 0.0 else "grid") for e in config.epsilon_values},
        "observations": y.tolist(),
    }
    return SweepReport("j", config, records, aggregates, fits, metadata)


def _epsilon_runs(config: SweepConfig, epsilon: float, observations, spec):
    state, obs = realize_perturbed(config.family.with_epsilon(epsilon))
    gaps: list[float] = []

    def record_gap(n, predicted):
        gaps.append(gaussianity_gap(build_joint_grid(predicted, obs)))

    true = run_grid_filter(state, obs, config.init_mean, config.init_cov, observations, spec, on_predict=record_gap)
    mean_field = run_mean_field_grid(state, obs, config.init_mean, config.init_cov, observations, spec,
                                     n_y_cells=config.n_y_cells)
    return true, mean_field, np.array(gaps)


def discretization_floor(config: SweepConfig, observations, spec, runs=None) -> dict:
    """Linear-Gaussian self-check: d_g of each grid recursion from the discretized Kalman posterior."""
    true, mean_field, _ = runs if runs is not None else _epsilon_runs(config, 0.0, observations, spec)
    kal = run_kalman(config.family.with_epsilon(0.0), config.init_mean, config.init_cov, observations)
    ref = gaussian_to_grid(kal[-1], spec)
    tf = weighted_tv(true[-1], ref)
    mf = weighted_tv(mean_field[-1], ref)
    return {"true_filter_vs_kalman": tf, "mean_field_vs_kalman": mf, "floor": max(tf, mf)}


def run_sweep_epsilon(config: SweepConfig) -> SweepReport:
    """Mean-field law against the true filter for each epsilon, both on one shared grid.

    Records the per-step weighted TV distance, the Gaussianity gap of every
    true-filter forecast lifted to the joint space, and test-function errors.
    """
    fam = config.family
    if fam.dim_d != 1 or fam.dim_k != 1:
        raise ConfigurationError("the epsilon sweep needs d = K = 1")
    data = shared_data(config)
    y = data.observations
    spec = state_grid_for(fam.with_epsilon(0.0), config.init_mean, config.init_cov, y,
                          n_cells=config.n_cells, n_std=config.n_std, pad=config.pad)

    records: list[RunRecord] = []
    aggregates: list[AggregateRow] = []
    runs_by_eps = {}
    for eps in config.epsilon_values:
        true, mean_field, gaps = _epsilon_runs(config, eps, y, spec)
        runs_by_eps[eps] = (true, mean_field, gaps)
        ref_moments = [gaussian_projection(t) for t in true]
        ref_values = {name: [t.expectation(TEST_FUNCTIONS[name]) for t in true] for name in config.test_functions}
        me, ce, tf = _compare(mean_field, ref_moments, ref_values, config)
        dg = np.array([weighted_tv(a, b) for a, b in zip(mean_field, true)])
        records.append(RunRecord(0, None, eps, me, ce, tf, d_g=dg, gaussianity_gap=gaps))
        gap_max = float(gaps.max())
        aggregates.append(AggregateRow(eps, None, "d_g", float(dg[-1]), 0.0, 1))
        aggregates.append(AggregateRow(eps, None, "gaussianity_gap_max", gap_max, 0.0, 1))
        aggregates.append(AggregateRow(eps, None, "ratio", float(dg[-1]) / gap_max if gap_max > 0 else float("inf"), 0.0, 1))

    positive = [(e, float(r.d_g[-1])) for e, r in zip(config.epsilon_values, records) if e > 0.0]
    fits: list[FitRow] = []
    if len(positive) >= 3:
        fit = fit_rate(positive)
        fits.append(FitRow(None, "d_g", fit.slope, fit.intercept, fit.stderr,
                           fit_residuals(positive, fit), tuple(config.eps_slope_band)))

    floor = discretization_floor(config, y, spec, runs_by_eps.get(0.0))
    metadata = {
        "base_seed": config.base_seed,
        "data_stream": [rngmod.STREAM_DATA],
        "grid": {"lower": spec.lower, "upper": spec.upper, "n_cells": spec.n_cells},
        "discretization_floor": floor,
        "observations": y.tolist(),
    }
    if config.refinement_check and positive:
        eps_max = max(e for e, _ in positive)
        fine = spec.refined(2)
        true_f, mf_f, _ = _epsilon_runs(config, eps_max, y, fine)
        dg_fine = weighted_tv(mf_f[-1], true_f[-1])
        dg_coarse = dict(positive)[eps_max]
        metadata["grid_refinement"] = {
            "epsilon": eps_max,
            "d_g": dg_coarse,
            "d_g_refined": dg_fine,
            "relative_delta": abs(dg_fine - dg_coarse) / dg_coarse,
        }
    return SweepReport("epsilon", config, records, aggregates, fits, metadata)


def aggregate_value(report: SweepReport, metric: str, epsilon: float, J: int | None = None) -> AggregateRow:
    for row in report.aggregates:
        if row.metric == metric and row.epsilon == epsilon and row.J == J:
            return row
    raise KeyError((metric, epsilon, J))
