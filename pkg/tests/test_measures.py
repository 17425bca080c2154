import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from enkf_lab.errors import IncompatibleGridsError, InsufficientDataError, InvalidCovarianceError
from enkf_lab.measures import (
    CoverageWarning,
    Ensemble,
    GaussianMoments,
    GridDensity,
    GridSpec,
    JointEnsemble,
    JointGaussianMoments,
    empirical_moments,
    gaussian_projection,
    gaussian_to_grid,
    gaussianity_gap,
    grid_discretization_floor,
    joint_empirical_moments,
    weighted_tv,
)
from enkf_lab.rng import make_rng

LINE = GridSpec((-8.0,), (8.0,), (400,))


def normal(mean, var, spec=LINE):
    return gaussian_to_grid(GaussianMoments([mean], [[var]]), spec)


# --------------------------------------------------------------------------- types


def test_gaussian_moments_validation():
    with pytest.raises(InvalidCovarianceError):
        GaussianMoments([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(InvalidCovarianceError):
        GaussianMoments([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])
    GaussianMoments([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]])  # singular PSD is legal


def test_gaussian_moments_json_round_trip():
    m = GaussianMoments([0.1, -2.0], [[1.0, 0.2], [0.2, 3.0]])
    back = GaussianMoments.from_json(m.to_json())
    assert np.array_equal(back.mean, m.mean) and np.array_equal(back.cov, m.cov)
    assert set(json.loads(m.to_json())) == {"mean", "cov"}


def test_joint_moments_block_validation():
    with pytest.raises(InvalidCovarianceError):
        JointGaussianMoments([0.0], [0.0], [[1.0]], [[2.0]], [[1.0]])
    with pytest.raises(ValueError):
        JointGaussianMoments([0.0], [0.0], [[1.0]], [[0.1, 0.1]], [[1.0]])


def test_ensemble_needs_two_particles():
    with pytest.raises(InsufficientDataError):
        Ensemble([[1.0]])
    with pytest.raises(InsufficientDataError):
        JointEnsemble([[1.0, 2.0]], 1)


def test_grid_density_rejects_negative():
    with pytest.raises(ValueError):
        GridDensity(GridSpec((0.0,), (1.0,), (3,)), [1.0, -1.0, 1.0])


# --------------------------------------------------------------------------- empirical_moments


def test_two_point_moments():
    m = empirical_moments(Ensemble([0.0, 2.0]))
    assert m.mean[0] == 1.0 and m.cov[0, 0] == 2.0


def test_identical_particles_zero_cov():
    m = empirical_moments(Ensemble(np.ones((5, 3))))
    assert np.array_equal(m.cov, np.zeros((3, 3)))


def test_sample_covariance_diag():
    x = make_rng(3).standard_normal((100_000, 2)) * np.array([1.0, 2.0])
    cov = empirical_moments(x).cov
    assert np.allclose(np.diag(cov), [1.0, 4.0], rtol=0.03)
    assert abs(cov[0, 1]) < 0.03


def test_unbiased_covariance_two_pass_oracle():
    x = make_rng(4).normal(size=(37, 3)) * 5 + 100
    mean = [sum(x[:, i]) / len(x) for i in range(3)]
    oracle = np.array([[sum((x[:, i] - mean[i]) * (x[:, j] - mean[j])) / (len(x) - 1) for j in range(3)]
                       for i in range(3)])
    got = empirical_moments(x)
    assert np.allclose(got.mean, mean, rtol=0, atol=1e-12 * 100)
    assert np.max(np.abs(got.cov - oracle)) <= 1e-12 * np.max(np.abs(oracle))


# --------------------------------------------------------------------------- joint_empirical_moments


def test_two_point_joint_moments():
    j = joint_empirical_moments(JointEnsemble([[0.0, 0.0], [2.0, 2.0]], 1))
    assert np.array_equal(j.mean_v, [1.0]) and np.array_equal(j.mean_y, [1.0])
    assert j.cvv[0, 0] == 2.0 and j.cvy[0, 0] == 2.0 and j.cyy[0, 0] == 2.0


def test_constant_data_part():
    j = joint_empirical_moments(JointEnsemble.from_parts([0.0, 1.0, 5.0], [3.0, 3.0, 3.0]))
    assert j.cvy[0, 0] == 0.0 and j.cyy[0, 0] == 0.0


def test_joint_moments_of_noisy_identity():
    # oracle: Cov(v, v + eta) = Var v = 1 and Var(v + eta) = 2
    rng = make_rng(8)
    v = rng.standard_normal(100_000)
    j = joint_empirical_moments(JointEnsemble.from_parts(v, v + rng.standard_normal(v.size)))
    assert j.cvy[0, 0] == pytest.approx(1.0, abs=0.03)
    assert j.cyy[0, 0] == pytest.approx(2.0, abs=0.05)


# --------------------------------------------------------------------------- gaussian_projection


def test_projection_of_gaussian_grid():
    m = gaussian_projection(normal(0.0, 1.0))
    assert abs(m.mean[0]) <= 1e-6
    assert m.cov[0, 0] == pytest.approx(1.0, abs=1e-4)


def test_projection_of_mixture():
    # oracle: var = 0.25 + 2^2 for an equal mixture of N(-2, .25) and N(2, .25)
    x = LINE.axes[0]
    vals = 0.5 * stats.norm.pdf(x, -2, 0.5) + 0.5 * stats.norm.pdf(x, 2, 0.5)
    m = gaussian_projection(GridDensity.from_values(LINE, vals))
    assert abs(m.mean[0]) <= 1e-6
    assert m.cov[0, 0] == pytest.approx(4.25, abs=1e-3)


def test_projection_of_ensemble():
    m = gaussian_projection(Ensemble([-1.0, 1.0]))
    assert m.mean[0] == 0.0 and m.cov[0, 0] == 2.0


def test_projection_preserves_2d_moments(rng):
    spec = GridSpec((-4.0, -5.0), (5.0, 4.0), (90, 80))
    dens = GridDensity.from_values(spec, rng.gamma(1.0, size=spec.shape))
    m = gaussian_projection(dens)
    w = dens.values.ravel() * spec.cell_volume
    pts = spec.points
    mean = w @ pts
    cov = (pts - mean).T @ ((pts - mean) * w[:, None])
    assert np.allclose(m.mean, mean, atol=1e-12)
    assert np.allclose(m.cov, cov, atol=1e-12)


# --------------------------------------------------------------------------- weighted_tv


def test_weighted_tv_identical_is_zero():
    mu = normal(0.3, 0.8)
    assert weighted_tv(mu, mu) == 0.0


def test_weighted_tv_against_quadrature_oracle():
    def integrand(v):
        return (1 + v * v) * abs(stats.norm.pdf(v, 0, 1) - stats.norm.pdf(v, 0.5, 1))

    oracle = sum(integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12)[0]
                 for a, b in ((-10, 0.25), (0.25, 10)))
    spec = GridSpec((-10.0,), (10.0,), (2000,))
    got = weighted_tv(normal(0.0, 1.0, spec), normal(0.5, 1.0, spec))
    assert got == pytest.approx(oracle, rel=1e-4)


def test_weighted_tv_renormalized_copy():
    mu = normal(0.0, 1.0)
    copy = GridDensity(mu.spec, mu.values * 3.0).normalized()
    assert weighted_tv(mu, copy) <= 1e-8


def test_weighted_tv_grid_mismatch():
    with pytest.raises(IncompatibleGridsError):
        weighted_tv(normal(0.0, 1.0), normal(0.0, 1.0, LINE.refined(2)))


# --------------------------------------------------------------------------- gaussian_to_grid


def test_gaussian_to_grid_mass():
    assert normal(0.0, 1.0).mass == pytest.approx(1.0, abs=1e-8)


def test_coverage_warning():
    with pytest.warns(CoverageWarning):
        gaussian_to_grid(GaussianMoments([20.0], [[1.0]]), LINE)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gaussian_to_grid(GaussianMoments([0.0], [[1.0]]), LINE)


def test_gaussian_round_trip():
    spec = GridSpec.auto([GaussianMoments([1.0], [[2.0]])], 400)
    m = gaussian_projection(gaussian_to_grid(GaussianMoments([1.0], [[2.0]]), spec))
    fine = gaussian_projection(gaussian_to_grid(GaussianMoments([1.0], [[2.0]]), spec.refined(8)))
    assert m.mean[0] == pytest.approx(1.0, abs=1e-3) and m.cov[0, 0] == pytest.approx(2.0, abs=1e-2)
    assert np.allclose([m.mean[0], m.cov[0, 0]], [fine.mean[0], fine.cov[0, 0]], atol=1e-3)


def test_singular_cov_rejected():
    with pytest.raises(InvalidCovarianceError):
        gaussian_to_grid(GaussianMoments([0.0], [[0.0]]), LINE)


def test_grid_density_csv_round_trip():
    spec = GridSpec((-7.0, -6.0), (7.0, 9.0), (14, 15))
    dens = gaussian_to_grid(GaussianMoments([0.0, 1.5], [[1.0, 0.2], [0.2, 1.0]]), spec)
    back = GridDensity.from_csv(dens.to_csv())
    assert np.allclose(back.spec.lower, spec.lower) and back.spec.n_cells == spec.n_cells
    assert np.array_equal(back.values, dens.values)


# --------------------------------------------------------------------------- gaussianity_gap

JOINT = GridSpec((-9.0, -9.0), (9.0, 9.0), (240, 240))


def bimodal(spec):
    pts = spec.points
    cov = 0.25 * np.eye(2)
    vals = 0.5 * stats.multivariate_normal.pdf(pts, [-2, -2], cov) + 0.5 * stats.multivariate_normal.pdf(pts, [2, 2], cov)
    return GridDensity.from_values(spec, vals)


def test_gap_of_gaussian_joint():
    m = GaussianMoments([0.2, -0.1], [[1.0, 0.6], [0.6, 1.5]])
    spec = GridSpec.auto([m], 200)
    floor = grid_discretization_floor(m, spec)
    assert gaussianity_gap(gaussian_to_grid(m, spec)) <= 2 * floor


def test_gap_of_bimodal():
    gap = gaussianity_gap(bimodal(JOINT))
    assert gap > 0.1
    assert abs(gaussianity_gap(bimodal(JOINT.refined(2))) - gap) < 0.05 * gap


# --------------------------------------------------------------------------- properties

_vals = arrays(np.float64, 30, elements=st.floats(0.0, 10.0))
SMALL = GridSpec((-3.0,), (3.0,), (30,))


def _density(v):
    v = v + 1e-3
    return GridDensity.from_values(SMALL, v)


@given(_vals, _vals, _vals)
def test_metric_axioms(a, b, c):
    mu, nu, rho = _density(a), _density(b), _density(c)
    d_mn = weighted_tv(mu, nu)
    assert d_mn >= 0.0
    assert d_mn == weighted_tv(nu, mu)
    assert weighted_tv(mu, rho) <= d_mn + weighted_tv(nu, rho) + 1e-12
    assert (d_mn == 0.0) == np.array_equal(mu.values, nu.values)


@given(_vals)
def test_normalization_idempotent(a):
    once = _density(a).normalized()
    twice = once.normalized()
    assert np.array_equal(once.values, twice.values)
    assert abs(once.mass - 1.0) <= 1e-8
