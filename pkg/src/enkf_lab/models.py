"""State-evolution and observation models, the perturbed-affine family and
synthetic data generation.

Maps act on arrays of shape ``(..., r)`` and return ``(..., s)`` so a whole
ensemble can be pushed through in one call.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError
from .linalg import as_matrix, psd_factor, validated_cholesky
from .rng import as_rng

Map = Callable[[np.ndarray], np.ndarray]

DEFAULT_PROBE_BOX = (-10.0, 10.0)
DEFAULT_N_PROBE = 201


@dataclass(frozen=True)
class AffineMap:
    """``x -> matrix @ x + offset``."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "matrix")
        b = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if b.shape != (m.shape[0],):
            raise ValueError(f"offset shape {b.shape} does not match matrix rows {m.shape[0]}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "offset", b)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T + self.offset


_PERTURBATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "tanh": np.tanh,
    "zero": np.zeros_like,
}


@dataclass(frozen=True)
class ComponentwisePerturbation:
    """Bounded perturbation ``v -> f(frequency * v_{k mod r}) / sqrt(out_dim)``.

    ``f`` is one of the registered shapes (``sin``, ``tanh``, ``zero``). The
    ``1/sqrt(out_dim)`` factor keeps the Euclidean sup-norm at most 1 in any
    dimension; the Lipschitz constant is at most ``frequency``.
    """

    kind: str
    out_dim: int
    frequency: float = 1.0

    def __post_init__(self):
        if self.kind not in _PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.kind!r}; choose from {sorted(_PERTURBATIONS)}")
        if self.out_dim < 1:
            raise ValueError("out_dim must be positive")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        cols = np.arange(self.out_dim) % x.shape[-1]
        f = _PERTURBATIONS[self.kind]
        return f(self.frequency * x[..., cols]) / np.sqrt(self.out_dim)


@dataclass(frozen=True)
class PerturbedMap:
    """``base(x) + epsilon * perturbation(x)``."""

    base: AffineMap
    perturbation: Map
    epsilon: float

    def __call__(self, x):
        out = self.base(x)
        if self.epsilon != 0.0:
            out = out + self.epsilon * self.perturbation(x)
        return out


@dataclass(frozen=True)
class StateModel:
    """Dynamics ``v_{n+1} = psi(v_n) + xi_n`` with ``xi_n ~ N(0, sigma)``."""

    psi: Map
    sigma: np.ndarray
    sigma_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s, chol = validated_cholesky(self.sigma, "sigma")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "sigma_chol", chol)

    @property
    def dim_d(self) -> int:
        return self.sigma.shape[0]

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim_d)) @ self.sigma_chol.T


@dataclass(frozen=True)
class ObservationModel:
    """Observation ``y = h(v) + eta`` with ``eta ~ N(0, gamma)``."""

    h: Map
    gamma: np.ndarray
    gamma_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g, chol = validated_cholesky(self.gamma, "gamma")
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "gamma_chol", chol)

    @property
    def dim_k(self) -> int:
        return self.gamma.shape[0]

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim_k)) @ self.gamma_chol.T

    def log_likelihood(self, y_obs, hv: np.ndarray) -> np.ndarray:
        """Gaussian log-density of ``y_obs`` given predicted observations ``hv`` (rows)."""
        resid = np.atleast_1d(np.asarray(y_obs, dtype=float)) - np.atleast_2d(hv)
        z = solve_triangular(self.gamma_chol, resid.T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(self.gamma_chol)))
        return -0.5 * np.sum(z * z, axis=0) - 0.5 * (self.dim_k * np.log(2 * np.pi) + logdet)


def _as_perturbation(p, out_dim: int) -> Map:
    if p is None:
        return ComponentwisePerturbation("zero", out_dim)
    if isinstance(p, str):
        return ComponentwisePerturbation(p, out_dim)
    return p


@dataclass(frozen=True)
class PerturbedAffineFamily:
    """Affine base models ``(A v + b, H v + c)`` perturbed by bounded maps of size ``epsilon``.

    Perturbations may be given as registered names (``"sin"``, ``"tanh"``,
    ``"zero"``) or as callables; callables must have sup-norm at most 1.
    """

    a_matrix: np.ndarray
    b_vector: np.ndarray
    h_matrix: np.ndarray
    h_offset: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    psi_perturbation: Map | str | None = "sin"
    h_perturbation: Map | str | None = "tanh"
    epsilon: float = 0.0

    def __post_init__(self):
        a = as_matrix(self.a_matrix, "a_matrix")
        h = as_matrix(self.h_matrix, "h_matrix")
        if a.shape[0] != a.shape[1]:
            raise ValueError("a_matrix must be square")
        if h.shape[1] != a.shape[0]:
            raise ValueError("h_matrix columns must match the state dimension")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "h_matrix", h)
        object.__setattr__(self, "b_vector", np.atleast_1d(np.asarray(self.b_vector, dtype=float)))
        object.__setattr__(self, "h_offset", np.atleast_1d(np.asarray(self.h_offset, dtype=float)))
        object.__setattr__(self, "sigma", as_matrix(self.sigma, "sigma"))
        object.__setattr__(self, "gamma", as_matrix(self.gamma, "gamma"))
        object.__setattr__(self, "psi_perturbation", _as_perturbation(self.psi_perturbation, a.shape[0]))
        object.__setattr__(self, "h_perturbation", _as_perturbation(self.h_perturbation, h.shape[0]))

    @property
    def dim_d(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def dim_k(self) -> int:
        return self.h_matrix.shape[0]

    @property
    def psi_base(self) -> AffineMap:
        return AffineMap(self.a_matrix, self.b_vector)

    @property
    def h_base(self) -> AffineMap:
        return AffineMap(self.h_matrix, self.h_offset)

    def with_epsilon(self, epsilon: float) -> "PerturbedAffineFamily":
        return replace(self, epsilon=float(epsilon))


def realize_perturbed(family: PerturbedAffineFamily) -> tuple[StateModel, ObservationModel]:
    """Build ``(Psi0 + eps*psi_pert, h0 + eps*h_pert)`` with the family's noise covariances."""
    eps = float(family.epsilon)
    if not 0.0 <= eps <= 1.0:
        raise DomainError(f"epsilon must lie in [0, 1], got {eps}")
    psi = PerturbedMap(family.psi_base, family.psi_perturbation, eps)
    h = PerturbedMap(family.h_base, family.h_perturbation, eps)
    return StateModel(psi, family.sigma), ObservationModel(h, family.gamma)


def probe_points(lower, upper, n_probe: int = DEFAULT_N_PROBE) -> list[np.ndarray]:
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape or np.any(upper <= lower):
        raise ValueError("probe box must be nondegenerate with lower < upper on every axis")
    if n_probe < 2:
        raise ValueError("n_probe must be at least 2 per axis")
    return [np.linspace(lo, hi, n_probe) for lo, hi in zip(lower, upper)]


def _probe_box_for(dim: int, probe_box):
    if probe_box is None:
        lo, hi = DEFAULT_PROBE_BOX
        return np.full(dim, lo), np.full(dim, hi)
    lower, upper = probe_box
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    return lower, upper


def perturbation_envelope(family: PerturbedAffineFamily, probe_box=None, n_probe: int = DEFAULT_N_PROBE):
    """Probe ``sup|Psi - Psi0|`` and ``sup|h - h0|`` on a tensor grid (Euclidean norm)."""
    lower, upper = _probe_box_for(family.dim_d, probe_box)
    axes = probe_points(lower, upper, n_probe)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, family.dim_d)
    state, obs = realize_perturbed(family)
    dpsi = np.linalg.norm(state.psi(pts) - family.psi_base(pts), axis=-1)
    dh = np.linalg.norm(obs.h(pts) - family.h_base(pts), axis=-1)
    return float(dpsi.max()), float(dh.max())


def estimate_model_bounds(model_map: Map, probe_box, n_probe: int = DEFAULT_N_PROBE) -> tuple[float, float]:
    """Probe-grid estimates of the weighted sup-norm and the Lipschitz constant of a map.

    ``kappa_hat = max |f(x)| / (1 + |x|)`` over the probe points and
    ``lipschitz_hat = max |f(x) - f(x')| / |x - x'|`` over neighbouring probe
    points along each axis. Both are lower bounds of the true quantities and
    are meant as diagnostics, not certificates.

    Parameters
    ----------
    model_map : callable
        Map acting on arrays of shape ``(n, r)``.
    probe_box : tuple
        ``(lower, upper)``, scalars or length-``r`` sequences.
    n_probe : int
        Points per axis (at least 2).
    """
    lower, upper = probe_box
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    axes = probe_points(lower, upper, n_probe)
    r = len(axes)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.asarray(model_map(mesh.reshape(-1, r)), dtype=float)
    vals = vals.reshape(mesh.shape[:-1] + (-1,))

    size = np.linalg.norm(vals, axis=-1)
    kappa_hat = float(np.max(size / (1.0 + np.linalg.norm(mesh, axis=-1))))

    lipschitz_hat = 0.0
    for axis in range(r):
        df = np.linalg.norm(np.diff(vals, axis=axis), axis=-1)
        dx = np.linalg.norm(np.diff(mesh, axis=axis), axis=-1)
        lipschitz_hat = max(lipschitz_hat, float(np.max(df / dx)))
    return kappa_hat, lipschitz_hat


@dataclass(frozen=True)
class Trajectory:
    """True states ``v_0..v_N`` and observations ``y_1..y_N``."""

    states: np.ndarray
    observations: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if len(obs) != len(states) - 1:
            raise ValueError("need exactly one observation per step after the initial state")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "observations", obs)

    @property
    def n_steps(self) -> int:
        return len(self.observations)

    def to_csv(self) -> str:
        d, k = self.states.shape[1], self.observations.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n"] + [f"v{i}" for i in range(d)] + [f"y{i}" for i in range(k)])
        for n, v in enumerate(self.states):
            y = [""] * k if n == 0 else [repr(float(x)) for x in self.observations[n - 1]]
            writer.writerow([n] + [repr(float(x)) for x in v] + y)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        vcols = [i for i, name in enumerate(header) if name.startswith("v")]
        ycols = [i for i, name in enumerate(header) if name.startswith("y")]
        states = np.array([[float(r[i]) for i in vcols] for r in body])
        obs = np.array([[float(r[i]) for i in ycols] for r in body[1:]])
        return cls(states, obs.reshape(len(body) - 1, len(ycols)))


def simulate_trajectory(
    state: StateModel,
    obs: ObservationModel,
    init_mean,
    init_cov,
    n_steps: int,
    seed,
) -> Trajectory:
    """Draw ``v_0 ~ N(init_mean, init_cov)`` and iterate the state/data system ``n_steps`` times.

    The draw order is fixed (initial normal, then all state noise, then all
    observation noise), so the output is a deterministic function of ``seed``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    rng = as_rng(seed)
    m0 = np.atleast_1d(np.asarray(init_mean, dtype=float))
    factor = psd_factor(init_cov)
    d, k = state.dim_d, obs.dim_k

    v0 = m0 + factor @ rng.standard_normal(d)
    xi = state.sample_noise(rng, n_steps)
    eta = obs.sample_noise(rng, n_steps)

    states = np.empty((n_steps + 1, d))
    ys = np.empty((n_steps, k))
    states[0] = v0
    for n in range(n_steps):
        states[n + 1] = state.psi(states[n][None, :])[0] + xi[n]
        ys[n] = obs.h(states[n + 1][None, :])[0] + eta[n]
    return Trajectory(states, ys, seed if isinstance(seed, int) else None)


def default_family(epsilon: float = 0.0, **overrides) -> PerturbedAffineFamily:
    """Scalar benchmark family: ``Psi0(v) = 0.9 v``, ``h0(v) = v``, ``Sigma = Gamma = 0.5``."""
    kwargs = dict(
        a_matrix=[[0.9]],
        b_vector=[0.0],
        h_matrix=[[1.0]],
        h_offset=[0.0],
        sigma=[[0.5]],
        gamma=[[0.5]],
        psi_perturbation="sin",
        h_perturbation="tanh",
        epsilon=epsilon,
    )
    kwargs.update(overrides)
    return PerturbedAffineFamily(**kwargs)
