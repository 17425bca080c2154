"""Filter implementations: grid Bayes filter, Kalman, EnKF, mean-field EnKF, bootstrap PF."""

from .enkf import (
    EnkfState,
    enkf_analysis,
    enkf_gain,
    enkf_step,
    init_enkf,
    mean_field_step_surrogate,
    transport_apply,
)
from .grid import (
    GridFilterState,
    auto_y_grid,
    build_joint_grid,
    condition_joint_grid,
    grid_analysis,
    grid_filter_step,
    grid_predict,
    joint_grid_moments,
    mean_field_step_grid,
    transport_joint_grid,
)
from .kalman import KalmanState, kalman_joint, kalman_predict, kalman_step, kalman_step_family
from .particle import WeightedEnsemble, bootstrap_pf_step, systematic_resample
from .runners import (
    FILTER_NAMES,
    posterior_moments,
    run_bootstrap_pf,
    run_enkf,
    run_grid_filter,
    run_kalman,
    run_mean_field_grid,
    run_named_filter,
    state_grid_for,
)

__all__ = [name for name in dir() if not name.startswith("_")]
