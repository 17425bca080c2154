"""Perturbed-observation ensemble Kalman filter and the Kalman transport map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..linalg import gain_from
from ..measures import Ensemble, GaussianMoments, JointEnsemble, JointGaussianMoments
from ..models import ObservationModel, StateModel

MEAN_FIELD_MIN_PARTICLES = 10_000


@dataclass(frozen=True)
class EnkfState:
    """Particle cloud after ``step_index`` analysis steps.

    ``rng`` is the stream the next step draws its noise from; ``joint`` holds
    the predicted state/data cloud of the most recent step (``None`` at step 0).
    """

    ensemble: Ensemble
    step_index: int
    rng: np.random.Generator
    joint: JointEnsemble | None = None


def init_enkf(mean, cov, J: int, rng: np.random.Generator) -> EnkfState:
    """Draw ``J`` independent particles from ``N(mean, cov)``."""
    particles = GaussianMoments(mean, cov).sample(rng, J)
    return EnkfState(Ensemble(particles), 0, rng)


def _cross_cov(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    return da.T @ db / (a.shape[0] - 1)


def enkf_gain(v_hat: np.ndarray, hv_hat: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """``C^{vh} (Gamma + C^{hh})^{-1}`` from the predicted cloud (divisor ``J - 1``)."""
    c_vh = _cross_cov(v_hat, hv_hat)
    c_hh = _cross_cov(hv_hat, hv_hat)
    return gain_from(c_vh, gamma + 0.5 * (c_hh + c_hh.T))


def enkf_analysis(v_hat, hv_hat, y_hat, y_obs, gamma) -> np.ndarray:
    """Move each predicted particle by the ensemble gain times its own innovation."""
    v_hat = np.atleast_2d(v_hat)
    gain = enkf_gain(v_hat, np.atleast_2d(hv_hat), np.atleast_2d(gamma))
    innov = np.atleast_1d(np.asarray(y_obs, dtype=float)) - np.atleast_2d(y_hat)
    return v_hat + innov @ gain.T


def enkf_step(
    state: EnkfState,
    y_obs,
    model: StateModel,
    obs: ObservationModel,
    *,
    xi: np.ndarray | None = None,
    eta: np.ndarray | None = None,
) -> EnkfState:
    """One iteration of the perturbed-observation EnKF.

    Each particle is propagated with fresh state noise, observed with fresh
    observation noise, and shifted by the empirical gain
    ``C^{vh} (Gamma + C^{hh})^{-1}`` applied to its innovation. ``xi`` and
    ``eta`` override the sampled noise (arrays of shape ``(J, d)`` and
    ``(J, K)``); they exist for tests.
    """
    v = state.ensemble.particles
    J = v.shape[0]
    if xi is None:
        xi = model.sample_noise(state.rng, J)
    if eta is None:
        eta = obs.sample_noise(state.rng, J)
    v_hat = np.asarray(model.psi(v), dtype=float) + xi
    hv_hat = np.asarray(obs.h(v_hat), dtype=float)
    y_hat = hv_hat + eta
    v_new = enkf_analysis(v_hat, hv_hat, y_hat, y_obs, obs.gamma)
    return EnkfState(Ensemble(v_new), state.step_index + 1, state.rng, JointEnsemble.from_parts(v_hat, y_hat))


def transport_apply(joint: JointGaussianMoments, y_obs, point_v, point_y) -> np.ndarray:
    """Image of ``(point_v, point_y)`` under ``(v, y) -> v + C^{vy} (C^{yy})^{-1} (y_obs - y)``.

    Accepts single points or row-stacked arrays of points.
    """
    gain = joint.gain()
    pv = np.asarray(point_v, dtype=float)
    py = np.asarray(point_y, dtype=float)
    y0 = np.atleast_1d(np.asarray(y_obs, dtype=float))
    return pv + (y0 - py) @ gain.T


def mean_field_step_surrogate(
    state: EnkfState,
    y_obs,
    model: StateModel,
    obs: ObservationModel,
    min_particles: int = MEAN_FIELD_MIN_PARTICLES,
) -> EnkfState:
    """Large-ensemble stand-in for the mean-field law, with sampling error O(1/sqrt(J))."""
    if state.ensemble.J < min_particles:
        raise ConfigurationError(
            f"mean-field surrogate needs at least {min_particles} particles, got {state.ensemble.J}"
        )
    return enkf_step(state, y_obs, model, obs)
