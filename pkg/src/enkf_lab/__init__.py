"""Grid-exact and particle filters for measuring ensemble Kalman filter accuracy.

Submodules: ``models`` (perturbed-affine state/data models), ``measures``
(Gaussian moments, ensembles, grid densities, weighted TV), ``filters``
(grid Bayes filter, Kalman, EnKF, mean-field EnKF, bootstrap PF),
``experiments`` (J and epsilon sweeps) and ``cli``.
"""

from .errors import EnkfLabError
from .measures import Ensemble, GaussianMoments, GridDensity, GridSpec, JointGaussianMoments, weighted_tv
from .models import PerturbedAffineFamily, default_family, realize_perturbed, simulate_trajectory

__version__ = "0.1.0"

__all__ = [
    "EnkfLabError",
    "Ensemble",
    "GaussianMoments",
    "GridDensity",
    "GridSpec",
    "JointGaussianMoments",
    "PerturbedAffineFamily",
    "default_family",
    "realize_perturbed",
    "simulate_trajectory",
    "weighted_tv",
]
