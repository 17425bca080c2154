"""Bootstrap particle filter, used as an independent oracle for the true filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import DegenerateWeightsError
from ..measures import GaussianMoments
from ..models import ObservationModel, StateModel


@dataclass(frozen=True)
class WeightedEnsemble:
    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        p = p[:, None] if p.ndim == 1 else p
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (p.shape[0],) or np.any(w < 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector with one entry per particle")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, particles) -> "WeightedEnsemble":
        p = np.asarray(particles, dtype=float)
        return cls(p, np.full(p.shape[0], 1.0 / p.shape[0]))

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def moments(self) -> GaussianMoments:
        w = self.weights
        mean = w @ self.particles
        dev = self.particles - mean
        # reliability-weight correction; reduces to divisor J-1 for equal weights
        denom = 1.0 - float(np.sum(w * w))
        cov = (dev * w[:, None]).T @ dev / denom
        return GaussianMoments(mean, 0.5 * (cov + cov.T))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn by systematic (low-variance) resampling."""
    n = weights.size
    positions = (rng.uniform() + np.arange(n)) / n
    cumsum = np.cumsum(weights)
    cumsum[-1] = 1.0
    return np.searchsorted(cumsum, positions, side="right").clip(0, n - 1)


def bootstrap_pf_step(
    state: WeightedEnsemble,
    y_obs,
    model: StateModel,
    obs: ObservationModel,
    rng: np.random.Generator,
    resample_threshold: float = 0.5,
) -> WeightedEnsemble:
    """Propagate, reweight by the observation likelihood, and resample if ESS < threshold * J."""
    J = state.J
    v = np.asarray(model.psi(state.particles), dtype=float) + model.sample_noise(rng, J)
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights) + obs.log_likelihood(y_obs, obs.h(v))
    if not np.any(np.isfinite(logw)):
        raise DegenerateWeightsError("all particle weights vanished")
    w = np.exp(logw - logsumexp(logw))
    w /= w.sum()
    out = WeightedEnsemble(v, w)
    if out.ess < resample_threshold * J:
        idx = systematic_resample(w, rng)
        out = WeightedEnsemble.uniform(v[idx])
    return out
