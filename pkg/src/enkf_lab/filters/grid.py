"""Exact-quadrature filtering on tensor grids.

The true filter is propagated as a density on a fixed state grid: prediction
is a dense Gaussian-kernel quadrature, analysis a pointwise likelihood
reweighting. For ``d = K = 1`` the joint state/data density is materialized
on a 2-d grid, which is what the mean-field ensemble Kalman step pushes
through the affine Kalman transport.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import GridCoverageError, LikelihoodUnderflowError, UnsupportedDimensionError
from ..measures import (
    COVERAGE_MIN,
    GridDensity,
    GridSpec,
    JointGaussianMoments,
    gaussian_projection,
)
from ..models import ObservationModel, StateModel

_ROW_BLOCK = 1024


@dataclass(frozen=True)
class GridFilterState:
    density: GridDensity
    step_index: int = 0


def _kernel_block(targets: np.ndarray, sources: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Gaussian transition density N(target; source, L L^T) for all pairs."""
    d = chol.shape[0]
    a = solve_triangular(chol, targets.T, lower=True).T
    b = solve_triangular(chol, sources.T, lower=True).T
    sq = np.zeros((a.shape[0], b.shape[0]))
    for i in range(d):
        sq += (a[:, i : i + 1] - b[None, :, i]) ** 2
    norm = np.exp(-0.5 * d * np.log(2.0 * np.pi) - np.sum(np.log(np.diag(chol))))
    return norm * np.exp(-0.5 * sq)


def grid_predict(state: GridFilterState, model: StateModel) -> GridFilterState:
    """Apply the Markov transition operator by midpoint quadrature over the source cells.

    Raises
    ------
    GridCoverageError
        If less than 99.9% of the predicted mass lands on the grid.
    """
    dens = state.density
    spec = dens.spec
    if spec.ndim != model.dim_d:
        raise UnsupportedDimensionError(f"grid has {spec.ndim} axes, model state has {model.dim_d}")
    pts = spec.points
    src_mass = dens.values.ravel() * spec.cell_volume
    keep = src_mass > 0.0
    sources = np.asarray(model.psi(pts[keep]), dtype=float)
    w = src_mass[keep]

    out = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], _ROW_BLOCK):
        block = _kernel_block(pts[start : start + _ROW_BLOCK], sources, model.sigma_chol)
        out[start : start + _ROW_BLOCK] = block @ w

    mass = float(out.sum()) * spec.cell_volume
    if mass < COVERAGE_MIN:
        raise GridCoverageError(
            f"predicted density keeps only {mass:.6f} of its mass on the grid; use a larger grid box"
        )
    return GridFilterState(GridDensity(spec, out / mass), state.step_index + 1)


def grid_analysis(state: GridFilterState, obs: ObservationModel, y_obs) -> GridFilterState:
    """Bayes update: multiply by the Gaussian likelihood of ``y_obs`` and renormalize."""
    dens = state.density
    spec = dens.spec
    hv = np.asarray(obs.h(spec.points), dtype=float)
    lik = np.exp(obs.log_likelihood(y_obs, hv))
    post = dens.values.ravel() * lik
    mass = float(post.sum()) * spec.cell_volume
    if not mass >= 1e-300:
        raise LikelihoodUnderflowError(
            "observation has vanishing likelihood on the grid support"
        )
    return GridFilterState(GridDensity(spec, (post / mass).reshape(spec.shape)), state.step_index)


def auto_y_grid(predicted: GridDensity, obs: ObservationModel, n_cells: int | None = None,
                n_std: float = 6.0) -> GridSpec:
    """Data grid covering ``h(v) +/- n_std * sqrt(Gamma)`` over the occupied state cells."""
    _require_scalar(predicted.spec.ndim, obs.dim_k)
    pts = predicted.spec.points
    occupied = predicted.values.ravel() * predicted.cell_volume > 1e-14
    hv = np.asarray(obs.h(pts[occupied]), dtype=float)[:, 0]
    s = n_std * float(np.sqrt(obs.gamma[0, 0]))
    n = predicted.spec.n_cells[0] if n_cells is None else int(n_cells)
    return GridSpec((hv.min() - s,), (hv.max() + s,), (n,))


def _require_scalar(d: int, k: int):
    if d != 1 or k != 1:
        raise UnsupportedDimensionError(f"joint grids require d = K = 1, got d={d}, K={k}")


def build_joint_grid(state: GridFilterState, obs: ObservationModel, y_grid_spec: GridSpec | None = None) -> GridDensity:
    """Lift a state density to the joint state/data density on a 2-d grid.

    Cell value is ``mu(v) * N(y; h(v), Gamma)``; the result is normalized on
    the product grid ``state grid x y_grid_spec``.
    """
    dens = state.density
    _require_scalar(dens.spec.ndim, obs.dim_k)
    if y_grid_spec is None:
        y_grid_spec = auto_y_grid(dens, obs)
    v = dens.spec.axes[0]
    y = y_grid_spec.axes[0]
    hv = np.asarray(obs.h(v[:, None]), dtype=float)[:, 0]
    var = float(obs.gamma[0, 0])
    lik = np.exp(-0.5 * (y[None, :] - hv[:, None]) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    values = dens.values[:, None] * lik
    return GridDensity.from_values(dens.spec.product(y_grid_spec), values)


def condition_joint_grid(joint: GridDensity, y_obs) -> GridDensity:
    """Slice a 2-d joint density at ``y = y_obs`` (linear interpolation in ``y``) and renormalize."""
    y = joint.spec.axes[1]
    y0 = float(np.atleast_1d(y_obs)[0])
    t = (y0 - y[0]) / (y[1] - y[0])
    k = int(np.floor(t))
    if k < 0 or k + 1 >= y.size:
        raise LikelihoodUnderflowError(f"y_obs={y0} lies outside the data grid [{y[0]}, {y[-1]}]")
    w = t - k
    slice_ = (1.0 - w) * joint.values[:, k] + w * joint.values[:, k + 1]
    v_spec = GridSpec((joint.spec.lower[0],), (joint.spec.upper[0],), (joint.spec.n_cells[0],))
    return GridDensity.from_values(v_spec, slice_)


def joint_grid_moments(joint: GridDensity) -> JointGaussianMoments:
    return JointGaussianMoments.split(gaussian_projection(joint), 1)


def transport_joint_grid(joint: GridDensity, y_obs, moments: JointGaussianMoments | None = None) -> GridDensity:
    """Push a 2-d joint density through ``(v, y) -> v + K (y_obs - y)`` onto the state grid.

    ``K`` is the Kalman gain of the joint's own moments. The mass of each
    joint cell moves to its image point and is split between the two nearest
    state cells by linear interpolation, which conserves mass and mean.
    """
    if moments is None:
        moments = joint_grid_moments(joint)
    gain = float(moments.gain()[0, 0])
    y0 = float(np.atleast_1d(y_obs)[0])
    y = joint.spec.axes[1]
    h = float(joint.spec.spacing[0])
    n = joint.spec.n_cells[0]

    mass = joint.values * joint.cell_volume
    # image of cell (i, k) sits at fractional index i + shift[k]
    shift = gain * (y0 - y) / h
    offset = np.floor(shift).astype(np.int64)
    frac = shift - offset

    out = np.zeros(n)
    for k in np.flatnonzero(mass.sum(axis=0) > 0.0):
        col = mass[:, k]
        for off, wt in ((offset[k], 1.0 - frac[k]), (offset[k] + 1, frac[k])):
            lo, hi = max(0, -off), min(n, n - off)
            if lo < hi:
                out[lo + off : hi + off] += wt * col[lo:hi]
    kept = float(out.sum())
    if kept < COVERAGE_MIN * float(mass.sum()):
        raise GridCoverageError(
            f"transported density keeps only {kept:.6f} of its mass on the grid; use a larger grid box"
        )
    v_spec = GridSpec((joint.spec.lower[0],), (joint.spec.upper[0],), (n,))
    return GridDensity.from_values(v_spec, out / h)


def mean_field_step_grid(
    state: GridFilterState,
    y_obs,
    model: StateModel,
    obs: ObservationModel,
    y_grid_spec: GridSpec | None = None,
) -> GridFilterState:
    """One step of the mean-field ensemble Kalman law on a 1-d state grid.

    Predict, lift to the joint grid, then transport the joint through the
    Kalman map built from the joint's own moments.
    """
    _require_scalar(state.density.spec.ndim, obs.dim_k)
    predicted = grid_predict(state, model)
    joint = build_joint_grid(predicted, obs, y_grid_spec)
    return GridFilterState(transport_joint_grid(joint, y_obs), predicted.step_index)


def grid_filter_step(state: GridFilterState, y_obs, model: StateModel, obs: ObservationModel) -> GridFilterState:
    return grid_analysis(grid_predict(state, model), obs, y_obs)
