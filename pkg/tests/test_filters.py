import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from enkf_lab.errors import (
    ConfigurationError,
    DegenerateWeightsError,
    GridCoverageError,
    LikelihoodUnderflowError,
    SingularInnovationError,
    UnsupportedDimensionError,
)
from enkf_lab.filters import (
    EnkfState,
    GridFilterState,
    KalmanState,
    WeightedEnsemble,
    bootstrap_pf_step,
    build_joint_grid,
    condition_joint_grid,
    enkf_analysis,
    enkf_gain,
    enkf_step,
    grid_analysis,
    grid_predict,
    init_enkf,
    kalman_predict,
    kalman_step,
    mean_field_step_grid,
    mean_field_step_surrogate,
    run_bootstrap_pf,
    run_enkf,
    run_grid_filter,
    run_kalman,
    run_mean_field_grid,
    state_grid_for,
    systematic_resample,
    transport_apply,
)
from enkf_lab.measures import (
    Ensemble,
    GaussianMoments,
    GridDensity,
    GridSpec,
    JointGaussianMoments,
    empirical_moments,
    gaussian_projection,
    gaussian_to_grid,
    weighted_tv,
)
from enkf_lab.models import AffineMap, ObservationModel, StateModel, default_family, realize_perturbed, simulate_trajectory
from enkf_lab.rng import make_rng

LINE = GridSpec((-10.0,), (10.0,), (1000,))


def lin_state(a=1.0, sigma=0.5, b=0.0):
    return StateModel(AffineMap([[a]], [b]), [[sigma]])


def lin_obs(h=1.0, gamma=1.0, c=0.0):
    return ObservationModel(AffineMap([[h]], [c]), [[gamma]])


def grid_state(mean, var, spec=LINE):
    return GridFilterState(gaussian_to_grid(GaussianMoments([mean], [[var]]), spec))


def gauss(mean, var, spec=LINE):
    return gaussian_to_grid(GaussianMoments([mean], [[var]]), spec)


def linear_data(seed=1, n=5, eps=0.0):
    fam = default_family(eps)
    state, obs = realize_perturbed(fam)
    y = simulate_trajectory(state, obs, [0.0], [[1.0]], n, make_rng(seed, 0)).observations
    return fam, state, obs, y


# --------------------------------------------------------------------------- grid_predict


def test_predict_gaussian_blur():
    # oracle: N(0,1) convolved with N(0,0.5) is N(0,1.5)
    out = grid_predict(grid_state(0.0, 1.0), lin_state(1.0, 0.5))
    assert weighted_tv(out.density, gauss(0.0, 1.5)) <= 5e-3
    assert out.step_index == 1


def test_predict_constant_map():
    const = StateModel(AffineMap([[0.0]], [0.0]), [[0.5]])
    out = grid_predict(grid_state(1.0, 2.0), const)
    assert weighted_tv(out.density, gauss(0.0, 0.5)) <= 1e-8


def test_predict_mass():
    state, _ = realize_perturbed(default_family(0.4))
    out = grid_predict(grid_state(0.5, 1.0), state)
    assert out.density.mass == pytest.approx(1.0, abs=1e-8)


def test_predict_coverage_error():
    narrow = GridSpec((-2.0,), (2.0,), (200,))
    with pytest.raises(GridCoverageError):
        grid_predict(grid_state(0.0, 0.1, narrow), lin_state(1.0, 4.0))


# --------------------------------------------------------------------------- grid_analysis


def test_analysis_flat_likelihood():
    prior = grid_state(0.3, 1.0)
    post = grid_analysis(prior, lin_obs(gamma=1e6), [0.5])
    assert weighted_tv(post.density, prior.density) <= 1e-3


def test_analysis_conjugate():
    # oracle: posterior mean 1/(1+1) * 1 = 0.5, variance 1 - 1/2 = 0.5
    post = grid_analysis(grid_state(0.0, 1.0), lin_obs(gamma=1.0), [1.0])
    assert weighted_tv(post.density, gauss(0.5, 0.5)) <= 5e-3
    assert post.density.mass == pytest.approx(1.0, abs=1e-8)


def test_analysis_underflow():
    with pytest.raises(LikelihoodUnderflowError):
        grid_analysis(grid_state(0.0, 1.0), lin_obs(gamma=1e-4), [500.0])


# --------------------------------------------------------------------------- build_joint_grid


def test_joint_marginal_consistency():
    st = grid_state(0.0, 1.0)
    joint = build_joint_grid(st, lin_obs())
    assert weighted_tv(joint.marginal(0), st.density) <= 1e-6


def test_joint_moments():
    # oracle: (v, v + eta) with v ~ N(0,1), eta ~ N(0,1)
    m = gaussian_projection(build_joint_grid(grid_state(0.0, 1.0), lin_obs()))
    assert np.allclose(m.mean, [0.0, 0.0], atol=1e-2)
    assert np.allclose(m.cov, [[1.0, 1.0], [1.0, 2.0]], atol=1e-2)


def test_joint_slice_matches_analysis():
    st = grid_state(0.0, 1.0)
    sliced = condition_joint_grid(build_joint_grid(st, lin_obs()), [1.0])
    direct = grid_analysis(st, lin_obs(), [1.0]).density
    assert weighted_tv(sliced, direct) <= 1e-4


def test_joint_dimension_error():
    spec2 = GridSpec((-6.0, -6.0), (6.0, 6.0), (20, 20))
    st2 = GridFilterState(gaussian_to_grid(GaussianMoments([0.0, 0.0], np.eye(2)), spec2))
    obs2 = ObservationModel(AffineMap([[1.0, 0.0]], [0.0]), [[1.0]])
    with pytest.raises(UnsupportedDimensionError):
        build_joint_grid(st2, obs2)


# --------------------------------------------------------------------------- kalman_step


def test_kalman_scalar_by_hand():
    prior = KalmanState(GaussianMoments([0.0], [[1.0]]))
    pred = kalman_predict(prior.moments, [[1.0]], [0.0], [[1.0]])
    assert pred.mean[0] == 0.0 and pred.cov[0, 0] == 2.0
    post = kalman_step(prior, [3.0], [[1.0]], [0.0], [[1.0]], [0.0], [[1.0]], [[1.0]])
    # the factorization adds a 1e-10 relative jitter, so hand values hold to ~1e-10
    assert post.moments.mean[0] == pytest.approx(2.0, abs=1e-9)
    assert post.moments.cov[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-9)
    assert post.step_index == 1


def test_kalman_uninformative():
    prior = KalmanState(GaussianMoments([1.0, -1.0], [[1.0, 0.2], [0.2, 2.0]]))
    a = [[0.9, 0.1], [0.0, 0.8]]
    pred = kalman_predict(prior.moments, a, [0.1, 0.0], np.eye(2))
    post = kalman_step(prior, [5.0], a, [0.1, 0.0], [[1.0, 1.0]], [0.0], np.eye(2), [[1e12]])
    assert np.allclose(post.moments.mean, pred.mean, atol=1e-6)
    assert np.allclose(post.moments.cov, pred.cov, atol=1e-6)


def test_kalman_unobserved_state():
    prior = KalmanState(GaussianMoments([1.0], [[1.0]]))
    pred = kalman_predict(prior.moments, [[0.9]], [0.0], [[0.5]])
    post = kalman_step(prior, [4.0], [[0.9]], [0.0], [[0.0]], [0.0], [[0.5]], [[1.0]])
    assert np.array_equal(post.moments.mean, pred.mean) and np.array_equal(post.moments.cov, pred.cov)


def test_kalman_singular_innovation():
    prior = KalmanState(GaussianMoments([1.0], [[1.0]]))
    with pytest.raises(SingularInnovationError):
        kalman_step(prior, [4.0], [[0.9]], [0.0], [[0.0]], [0.0], [[0.5]], [[0.0]])


# --------------------------------------------------------------------------- enkf_step


def test_enkf_two_particles_by_hand():
    # C^{vh} = C^{hh} = 2 (divisor J-1 = 1); gain 2/(1+2) = 2/3
    st = EnkfState(Ensemble([0.0, 2.0]), 0, make_rng(0))
    out = enkf_step(st, [1.0], lin_state(1.0, 1e-18), lin_obs(gamma=1.0), xi=np.zeros((2, 1)), eta=np.zeros((2, 1)))
    assert np.allclose(out.ensemble.particles[:, 0], [2 / 3, 4 / 3], rtol=0, atol=1e-9)
    assert out.step_index == 1 and out.ensemble.J == 2


def test_enkf_constant_h_leaves_forecast():
    st = init_enkf([0.0], [[1.0]], 50, make_rng(2))
    rng = make_rng(3)
    xi, eta = rng.normal(size=(50, 1)), rng.normal(size=(50, 1))
    const = lin_obs(h=0.0, c=1.0)
    out = enkf_step(st, [3.0], lin_state(0.9, 0.5), const, xi=xi, eta=eta)
    assert np.array_equal(out.ensemble.particles, 0.9 * st.ensemble.particles + xi)
    assert np.all(enkf_gain(out.joint.v, np.ones((50, 1)), np.eye(1)) == 0.0)


def test_enkf_large_ensemble_matches_kalman():
    fam, state, obs, y = linear_data()
    kal = run_kalman(fam, [0.0], [[1.0]], y)[-1]
    ens = empirical_moments(run_enkf(state, obs, [0.0], [[1.0]], y, 100_000, make_rng(4))[-1])
    scale = abs(kal.mean[0]) + np.sqrt(kal.cov[0, 0])
    assert abs(ens.mean[0] - kal.mean[0]) <= 0.02 * scale
    assert ens.cov[0, 0] == pytest.approx(kal.cov[0, 0], rel=0.02)


# --------------------------------------------------------------------------- transport_apply


def test_transport_independent_blocks():
    j = JointGaussianMoments([0.0], [0.0], [[1.0]], [[0.0]], [[2.0]])
    assert transport_apply(j, [5.0], [1.5], [0.3])[0] == 1.5


def test_transport_zero_innovation():
    j = JointGaussianMoments([0.0], [0.0], [[2.0]], [[2.0]], [[3.0]])
    assert transport_apply(j, [0.7], [1.5], [0.7])[0] == 1.5


def test_transport_scalar_example():
    j = JointGaussianMoments([0.0], [0.0], [[2.0]], [[2.0]], [[3.0]])
    assert transport_apply(j, [3.0], [0.0], [0.0])[0] == pytest.approx(2.0, abs=1e-9)


def test_transport_singular():
    j = JointGaussianMoments([0.0], [0.0], [[1.0]], [[0.0]], [[0.0]])
    with pytest.raises(SingularInnovationError):
        transport_apply(j, [1.0], [0.0], [0.0])


# --------------------------------------------------------------------------- mean_field_step_grid


def test_mean_field_grid_linear_gaussian():
    prior = grid_state(0.0, 1.0)
    out = mean_field_step_grid(prior, [1.3], lin_state(0.9, 0.5), lin_obs(gamma=0.5))
    kal = kalman_step(KalmanState(GaussianMoments([0.0], [[1.0]])), [1.3], [[0.9]], [0.0], [[1.0]], [0.0],
                      [[0.5]], [[0.5]])
    assert weighted_tv(out.density, gauss(kal.moments.mean[0], kal.moments.cov[0, 0])) <= 1e-2
    assert out.density.mass == pytest.approx(1.0, abs=1e-8)


def test_mean_field_grid_constant_h():
    prior = grid_state(0.5, 1.0)
    model = lin_state(0.9, 0.5)
    out = mean_field_step_grid(prior, [2.0], model, lin_obs(h=0.0, c=1.0))
    pred = grid_predict(prior, model)
    assert weighted_tv(out.density, pred.density) <= 1e-8


def test_mean_field_grid_dimension_error():
    obs2 = ObservationModel(AffineMap([[1.0], [1.0]], [0.0, 0.0]), np.eye(2))
    with pytest.raises(UnsupportedDimensionError):
        mean_field_step_grid(grid_state(0.0, 1.0), [0.0, 0.0], lin_state(), obs2)


# --------------------------------------------------------------------------- mean_field_step_surrogate


def surrogate_run(state, obs, y, J, seed):
    st = init_enkf([0.0], [[1.0]], J, make_rng(seed))
    for yn in y:
        st = mean_field_step_surrogate(st, yn, state, obs)
    return empirical_moments(st.ensemble)


def _mv(m):
    return np.array([m.mean[0], m.cov[0, 0]])


def test_surrogate_matches_grid_mean_field():
    fam, state, obs, y = linear_data(seed=2, n=3, eps=0.3)
    spec = state_grid_for(fam, [0.0], [[1.0]], y, n_cells=1000)
    ref = _mv(gaussian_projection(run_mean_field_grid(state, obs, [0.0], [[1.0]], y, spec)[-1]))
    runs = np.array([_mv(surrogate_run(state, obs, y, 100_000, 10 + r)) for r in range(10)])
    se = runs.std(axis=0, ddof=1)
    assert np.all(np.abs(runs[0] - ref) <= 3 * se)


def test_surrogate_seed_spread():
    _, state, obs, y = linear_data(seed=2, n=3, eps=0.3)
    a, b = surrogate_run(state, obs, y, 100_000, 1), surrogate_run(state, obs, y, 100_000, 2)
    diff = abs(a.mean[0] - b.mean[0])
    assert 0.0 < diff <= 10.0 / np.sqrt(100_000)


def test_surrogate_linear_matches_kalman():
    fam, state, obs, y = linear_data(seed=3, n=3)
    kal = _mv(run_kalman(fam, [0.0], [[1.0]], y)[-1])
    runs = np.array([_mv(surrogate_run(state, obs, y, 20_000, 30 + r)) for r in range(20)])
    se = runs.std(axis=0, ddof=1)
    assert np.all(np.abs(runs[0] - kal) <= 3 * se)


def test_surrogate_minimum_size():
    st = init_enkf([0.0], [[1.0]], 100, make_rng(0))
    with pytest.raises(ConfigurationError):
        mean_field_step_surrogate(st, [0.0], lin_state(), lin_obs())


# --------------------------------------------------------------------------- bootstrap_pf_step


def test_pf_flat_likelihood_keeps_uniform_weights():
    st = WeightedEnsemble.uniform(make_rng(1).normal(size=(1000, 1)))
    out = bootstrap_pf_step(st, [2.0], lin_state(), lin_obs(gamma=1e12), make_rng(2))
    assert np.max(np.abs(out.weights - 1e-3)) <= 1e-6


def _pf_replicates(state, obs, y, J, n_rep, seed):
    return np.array([[_mv(w.moments()) for w in run_bootstrap_pf(state, obs, [0.0], [[1.0]], y, J, make_rng(seed, r))]
                     for r in range(n_rep)])


def test_pf_linear_gaussian_all_steps():
    fam, state, obs, y = linear_data(seed=4)
    kal = np.array([_mv(m) for m in run_kalman(fam, [0.0], [[1.0]], y)])
    runs = _pf_replicates(state, obs, y, 100_000, 20, 40)
    se = runs.std(axis=0, ddof=1)[1:, 0]
    assert np.all(np.abs(runs[0, 1:, 0] - kal[1:, 0]) <= 3 * se)


def test_pf_nonlinear_matches_grid():
    fam, state, obs, y = linear_data(seed=5, n=5, eps=0.3)
    spec = state_grid_for(fam, [0.0], [[1.0]], y, n_cells=1000)
    grid = gaussian_projection(run_grid_filter(state, obs, [0.0], [[1.0]], y, spec)[-1]).mean[0]
    runs = _pf_replicates(state, obs, y, 100_000, 20, 50)[:, -1, 0]
    assert abs(runs[0] - grid) <= 3 * runs.std(ddof=1)


def test_pf_degenerate_weights():
    st = WeightedEnsemble.uniform(np.zeros((10, 1)))
    with pytest.raises(DegenerateWeightsError), np.errstate(over="ignore"):
        bootstrap_pf_step(st, [1e200], lin_state(), lin_obs(), make_rng(0))


def test_weighted_ensemble_validation():
    with pytest.raises(ValueError):
        WeightedEnsemble(np.zeros((3, 1)), [0.5, 0.5, 0.5])
    w = WeightedEnsemble(np.arange(4.0)[:, None], [0.1, 0.2, 0.3, 0.4])
    assert 1.0 <= w.ess <= 4.0


def test_systematic_resample_counts():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    idx = systematic_resample(w, make_rng(0))
    counts = np.bincount(idx, minlength=4)
    # systematic resampling gives floor(J w) or ceil(J w) copies
    assert np.all(np.abs(counts - 4 * w) < 1.0)


# --------------------------------------------------------------------------- properties


@given(seed=st.integers(0, 10_000), eps=st.floats(0.0, 1.0))
def test_grid_steps_conserve_mass(seed, eps):
    fam, state, obs, y = linear_data(seed=seed, n=2, eps=eps)
    spec = state_grid_for(fam, [0.0], [[1.0]], y, n_cells=200)
    for law in run_grid_filter(state, obs, [0.0], [[1.0]], y, spec) + run_mean_field_grid(state, obs, [0.0], [[1.0]], y, spec):
        assert abs(law.mass - 1.0) <= 1e-8


@given(seed=st.integers(0, 10_000), J=st.integers(2, 40))
def test_enkf_preserves_particle_count(seed, J):
    _, state, obs, y = linear_data(seed=seed, n=3, eps=0.5)
    assert all(e.J == J for e in run_enkf(state, obs, [0.0], [[1.0]], y, J, make_rng(seed)))


@given(seed=st.integers(0, 10_000), J=st.integers(10, 200))
def test_pf_weights_stay_probability_vector(seed, J):
    _, state, obs, y = linear_data(seed=seed, n=3, eps=0.5)
    for w in run_bootstrap_pf(state, obs, [0.0], [[1.0]], y, J, make_rng(seed)):
        assert abs(w.weights.sum() - 1.0) <= 1e-12 and np.all(w.weights >= 0)
        assert 1.0 - 1e-9 <= w.ess <= J + 1e-9


@given(seed=st.integers(0, 2**31), d=st.integers(1, 3), k=st.integers(1, 2))
def test_enkf_analysis_affine_equivariance(seed, d, k):
    rng = np.random.default_rng(seed)
    J = 30
    v_hat = rng.normal(size=(J, d))
    h_mat = rng.normal(size=(k, d))
    hv = np.tanh(v_hat @ h_mat.T)
    y_hat = hv + rng.normal(size=(J, k))
    y_obs = rng.normal(size=k)
    gamma = np.eye(k) * 0.7
    m = rng.normal(size=(d, d)) + 3 * np.eye(d)
    c = rng.normal(size=d)
    base = enkf_analysis(v_hat, hv, y_hat, y_obs, gamma)
    # transformed coordinates u = M v + c with h~(u) = h(v): same hv, same data
    moved = enkf_analysis(v_hat @ m.T + c, hv, y_hat, y_obs, gamma)
    assert np.allclose(moved, base @ m.T + c, rtol=1e-10, atol=1e-10)


@given(seed=st.integers(0, 2**31), d=st.integers(1, 2))
def test_transport_pushforward_property(seed, d):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(d + 1, d + 1))
    cov = a @ a.T + 0.3 * np.eye(d + 1)
    mean = rng.normal(size=d + 1)
    joint = JointGaussianMoments(mean[:d], mean[d:], cov[:d, :d], cov[:d, d:], cov[d:, d:])
    y_obs = rng.normal(size=1)
    n = 40_000
    pts = joint.as_gaussian().sample(rng, n)
    out = empirical_moments(transport_apply(joint, y_obs, pts[:, :d], pts[:, d:]))
    target = joint.conditional(y_obs)
    se = np.sqrt(np.diag(target.cov) / n)
    assert np.all(np.abs(out.mean - target.mean) <= 5 * se)
