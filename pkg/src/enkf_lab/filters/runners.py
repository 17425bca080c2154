"""Multi-step drivers shared by the CLI, the verification suite and the sweeps.

Every driver takes the same ``(init_mean, init_cov)`` and the same observation
record, and returns the filtering laws for steps ``0..N``.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ConfigurationError, UnsupportedDimensionError
from ..measures import Ensemble, GaussianMoments, GridDensity, GridSpec, gaussian_projection, gaussian_to_grid
from ..models import ObservationModel, PerturbedAffineFamily, StateModel, realize_perturbed
from .enkf import EnkfState, enkf_step, init_enkf
from .grid import (
    GridFilterState,
    auto_y_grid,
    build_joint_grid,
    grid_analysis,
    grid_predict,
    transport_joint_grid,
)
from .kalman import KalmanState, kalman_predict, kalman_step_family
from .particle import WeightedEnsemble, bootstrap_pf_step

FILTER_NAMES = ("grid", "kalman", "enkf", "mean-field", "pf")


def _obs_rows(observations) -> np.ndarray:
    y = np.asarray(observations, dtype=float)
    return y[:, None] if y.ndim == 1 else y


def run_kalman(family: PerturbedAffineFamily, init_mean, init_cov, observations) -> list[GaussianMoments]:
    """Kalman posteriors of the affine base of ``family``."""
    state = KalmanState(GaussianMoments(init_mean, init_cov))
    out = [state.moments]
    for y in _obs_rows(observations):
        state = kalman_step_family(state, y, family)
        out.append(state.moments)
    return out


def state_grid_for(
    family: PerturbedAffineFamily,
    init_mean,
    init_cov,
    observations,
    n_cells: int = 2000,
    n_std: float = 6.0,
    pad: float = 1.0,
) -> GridSpec:
    """State grid covering ``mean +/- n_std * std`` of every Kalman prior, forecast and posterior.

    The Kalman run uses the affine base of ``family``; ``pad`` absorbs the
    shift caused by the perturbation.
    """
    if family.dim_d != 1:
        raise UnsupportedDimensionError("grid filters are limited to a scalar state")
    posts = run_kalman(family, init_mean, init_cov, observations)
    refs = list(posts)
    refs += [kalman_predict(m, family.a_matrix, family.b_vector, family.sigma) for m in posts[:-1]]
    return GridSpec.auto(refs, n_cells, n_std=n_std, pad=pad)


def run_grid_filter(
    state_model: StateModel,
    obs_model: ObservationModel,
    init_mean,
    init_cov,
    observations,
    spec: GridSpec,
    on_predict: Callable[[int, GridFilterState], None] | None = None,
) -> list[GridDensity]:
    """True filter on ``spec``. ``on_predict(n, predicted)`` sees each forecast density."""
    state = GridFilterState(gaussian_to_grid(GaussianMoments(init_mean, init_cov), spec))
    out = [state.density]
    for n, y in enumerate(_obs_rows(observations)):
        predicted = grid_predict(state, state_model)
        if on_predict is not None:
            on_predict(n, predicted)
        state = grid_analysis(predicted, obs_model, y)
        out.append(state.density)
    return out


def run_mean_field_grid(
    state_model: StateModel,
    obs_model: ObservationModel,
    init_mean,
    init_cov,
    observations,
    spec: GridSpec,
    n_y_cells: int | None = None,
) -> list[GridDensity]:
    """Mean-field ensemble Kalman law on ``spec`` (``d = K = 1``)."""
    state = GridFilterState(gaussian_to_grid(GaussianMoments(init_mean, init_cov), spec))
    out = [state.density]
    for y in _obs_rows(observations):
        predicted = grid_predict(state, state_model)
        joint = build_joint_grid(predicted, obs_model, auto_y_grid(predicted.density, obs_model, n_y_cells))
        state = GridFilterState(transport_joint_grid(joint, y), predicted.step_index)
        out.append(state.density)
    return out


def run_enkf(
    state_model: StateModel,
    obs_model: ObservationModel,
    init_mean,
    init_cov,
    observations,
    J: int,
    rng: np.random.Generator,
) -> list[Ensemble]:
    state = init_enkf(init_mean, init_cov, J, rng)
    out = [state.ensemble]
    for y in _obs_rows(observations):
        state = enkf_step(state, y, state_model, obs_model)
        out.append(state.ensemble)
    return out


def run_bootstrap_pf(
    state_model: StateModel,
    obs_model: ObservationModel,
    init_mean,
    init_cov,
    observations,
    J: int,
    rng: np.random.Generator,
    resample_threshold: float = 0.5,
) -> list[WeightedEnsemble]:
    particles = GaussianMoments(init_mean, init_cov).sample(rng, J)
    state = WeightedEnsemble.uniform(particles)
    out = [state]
    for y in _obs_rows(observations):
        state = bootstrap_pf_step(state, y, state_model, obs_model, rng, resample_threshold)
        out.append(state)
    return out


def posterior_moments(law) -> GaussianMoments:
    if isinstance(law, GaussianMoments):
        return law
    if isinstance(law, WeightedEnsemble):
        return law.moments()
    return gaussian_projection(law)


def run_named_filter(
    name: str,
    family: PerturbedAffineFamily,
    init_mean,
    init_cov,
    observations,
    *,
    J: int = 1000,
    rng: np.random.Generator | None = None,
    n_cells: int = 2000,
    mean_field_particles: int = 100_000,
) -> list:
    """Run one filter by name; returns per-step laws (moments, grid densities or ensembles).

    ``mean-field`` uses the exact grid recursion when ``d = K = 1`` and a
    large-ensemble EnKF surrogate otherwise.
    """
    if name not in FILTER_NAMES:
        raise ConfigurationError(f"unknown filter {name!r}; choose from {', '.join(FILTER_NAMES)}")
    state_model, obs_model = realize_perturbed(family)
    if name == "kalman":
        return run_kalman(family, init_mean, init_cov, observations)
    rng = np.random.default_rng() if rng is None else rng
    if name == "enkf":
        return run_enkf(state_model, obs_model, init_mean, init_cov, observations, J, rng)
    if name == "pf":
        return run_bootstrap_pf(state_model, obs_model, init_mean, init_cov, observations, J, rng)
    scalar = family.dim_d == 1 and family.dim_k == 1
    if name == "mean-field" and not scalar:
        return run_enkf(state_model, obs_model, init_mean, init_cov, observations, mean_field_particles, rng)
    spec = state_grid_for(family, init_mean, init_cov, observations, n_cells=n_cells)
    if name == "grid":
        return run_grid_filter(state_model, obs_model, init_mean, init_cov, observations, spec)
    return run_mean_field_grid(state_model, obs_model, init_mean, init_cov, observations, spec)
