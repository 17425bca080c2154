"""Classical Kalman filter for affine-Gaussian models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linalg import as_matrix, gain_from, symmetrize
from ..measures import GaussianMoments, JointGaussianMoments
from ..models import PerturbedAffineFamily


@dataclass(frozen=True)
class KalmanState:
    moments: GaussianMoments
    step_index: int = 0


def kalman_predict(m: GaussianMoments, a_matrix, b_vector, sigma) -> GaussianMoments:
    a = as_matrix(a_matrix)
    mean = a @ m.mean + np.atleast_1d(np.asarray(b_vector, dtype=float))
    cov = a @ m.cov @ a.T + as_matrix(sigma)
    return GaussianMoments(mean, symmetrize(cov))


def kalman_joint(predicted: GaussianMoments, h_matrix, h_offset, gamma) -> JointGaussianMoments:
    """Joint moments of ``(v, H v + c + eta)`` under the predicted law."""
    hm = as_matrix(h_matrix)
    c = predicted.cov
    mean_y = hm @ predicted.mean + np.atleast_1d(np.asarray(h_offset, dtype=float))
    cvy = c @ hm.T
    cyy = symmetrize(hm @ c @ hm.T + as_matrix(gamma))
    return JointGaussianMoments(predicted.mean, mean_y, c, cvy, cyy)


def kalman_step(state: KalmanState, y_obs, a_matrix, b_vector, h_matrix, h_offset, sigma, gamma) -> KalmanState:
    """Predict with ``(A, b, Sigma)``, then condition on ``y_obs`` with ``(H, c, Gamma)``.

    The gain is obtained from a jittered Cholesky solve of the innovation
    covariance; a failure raises :class:`~enkf_lab.errors.SingularInnovationError`.
    """
    predicted = kalman_predict(state.moments, a_matrix, b_vector, sigma)
    joint = kalman_joint(predicted, h_matrix, h_offset, gamma)
    gain = gain_from(joint.cvy, joint.cyy)
    innov = np.atleast_1d(np.asarray(y_obs, dtype=float)) - joint.mean_y
    mean = predicted.mean + gain @ innov
    cov = symmetrize(predicted.cov - gain @ joint.cvy.T)
    return KalmanState(GaussianMoments(mean, cov), state.step_index + 1)


def kalman_step_family(state: KalmanState, y_obs, family: PerturbedAffineFamily) -> KalmanState:
    """Kalman step using the affine base of ``family`` (its perturbation is ignored)."""
    return kalman_step(
        state, y_obs, family.a_matrix, family.b_vector, family.h_matrix, family.h_offset,
        family.sigma, family.gamma,
    )
