"""Probability measure representations and the metrics acting on them.

Three representations are used throughout: equal-weight particle clouds
(:class:`Ensemble`, :class:`JointEnsemble`), normalized densities on uniform
tensor grids (:class:`GridDensity`), and first/second moments
(:class:`GaussianMoments`, :class:`JointGaussianMoments`).
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import IncompatibleGridsError, InsufficientDataError, InvalidCovarianceError
from .linalg import as_matrix, gain_from, is_psd, psd_factor, symmetrize, validated_cholesky

MASS_TOL = 1e-8
COVERAGE_MIN = 0.999


class CoverageWarning(RuntimeWarning):
    """A density placed on a grid lost more than 0.1% of its mass to truncation."""


# --------------------------------------------------------------------------- moments


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = as_matrix(self.cov, "cov")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean of length {mean.size}")
        if not is_psd(cov):
            raise InvalidCovarianceError("covariance is not symmetric positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "cov": self.cov.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GaussianMoments":
        doc = json.loads(text)
        return cls(np.array(doc["mean"], dtype=float), np.array(doc["cov"], dtype=float))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + rng.standard_normal((n, self.dim)) @ psd_factor(self.cov, "cov").T


@dataclass(frozen=True)
class JointGaussianMoments:
    """Block moments of a joint state/data law."""

    mean_v: np.ndarray
    mean_y: np.ndarray
    cvv: np.ndarray
    cvy: np.ndarray
    cyy: np.ndarray

    def __post_init__(self):
        mv = np.atleast_1d(np.asarray(self.mean_v, dtype=float))
        my = np.atleast_1d(np.asarray(self.mean_y, dtype=float))
        d, k = mv.size, my.size
        cvv, cvy, cyy = as_matrix(self.cvv), as_matrix(self.cvy), as_matrix(self.cyy)
        if cvv.shape != (d, d) or cvy.shape != (d, k) or cyy.shape != (k, k):
            raise ValueError("block shapes are inconsistent with the means")
        for name, value in (("mean_v", mv), ("mean_y", my), ("cvv", cvv), ("cvy", cvy), ("cyy", cyy)):
            object.__setattr__(self, name, value)
        if not is_psd(self.cov):
            raise InvalidCovarianceError("joint covariance is not symmetric positive semi-definite")

    @property
    def dim_d(self) -> int:
        return self.mean_v.size

    @property
    def dim_k(self) -> int:
        return self.mean_y.size

    @property
    def mean(self) -> np.ndarray:
        return np.concatenate([self.mean_v, self.mean_y])

    @property
    def cov(self) -> np.ndarray:
        return np.block([[self.cvv, self.cvy], [self.cvy.T, self.cyy]])

    def as_gaussian(self) -> GaussianMoments:
        return GaussianMoments(self.mean, self.cov)

    @classmethod
    def split(cls, moments: GaussianMoments, dim_d: int) -> "JointGaussianMoments":
        m, c = moments.mean, moments.cov
        return cls(m[:dim_d], m[dim_d:], c[:dim_d, :dim_d], c[:dim_d, dim_d:], c[dim_d:, dim_d:])

    def gain(self) -> np.ndarray:
        """Kalman gain ``cvy @ inv(cyy)``."""
        return gain_from(self.cvy, self.cyy)

    def conditional(self, y_obs) -> GaussianMoments:
        """Analytic law of ``v`` given ``y = y_obs`` for a Gaussian joint."""
        k = self.gain()
        resid = np.atleast_1d(np.asarray(y_obs, dtype=float)) - self.mean_y
        cov = self.cvv - k @ self.cvy.T
        return GaussianMoments(self.mean_v + k @ resid, symmetrize(cov))


# --------------------------------------------------------------------------- ensembles


@dataclass(frozen=True)
class Ensemble:
    """Equal-weight particle cloud; ``particles`` has shape ``(J, d)``."""

    particles: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 2:
            raise InsufficientDataError("an ensemble needs at least 2 particles")
        object.__setattr__(self, "particles", p)

    @property
    def J(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]


@dataclass(frozen=True)
class JointEnsemble:
    """Cloud of ``(v_hat, y_hat)`` pairs stored as rows of length ``d + K``."""

    pairs: np.ndarray
    dim_d: int

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.pairs, dtype=float))
        if p.shape[0] < 2:
            raise InsufficientDataError("a joint ensemble needs at least 2 pairs")
        if not 1 <= self.dim_d < p.shape[1]:
            raise ValueError(f"dim_d={self.dim_d} incompatible with pair length {p.shape[1]}")
        object.__setattr__(self, "pairs", p)

    @classmethod
    def from_parts(cls, v, y) -> "JointEnsemble":
        v = np.asarray(v, dtype=float)
        y = np.asarray(y, dtype=float)
        v = v[:, None] if v.ndim == 1 else v
        y = y[:, None] if y.ndim == 1 else y
        if len(v) != len(y):
            raise ValueError("state and data parts must have the same number of rows")
        return cls(np.hstack([v, y]), v.shape[1])

    @property
    def J(self) -> int:
        return self.pairs.shape[0]

    @property
    def v(self) -> np.ndarray:
        return self.pairs[:, : self.dim_d]

    @property
    def y(self) -> np.ndarray:
        return self.pairs[:, self.dim_d :]


def _sample_moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    dev = x - mean
    cov = dev.T @ dev / (x.shape[0] - 1)
    return mean, symmetrize(cov)


def empirical_moments(e: Ensemble | np.ndarray) -> GaussianMoments:
    """Particle mean and unbiased (divisor ``J - 1``) sample covariance."""
    if not isinstance(e, Ensemble):
        e = Ensemble(e)
    return GaussianMoments(*_sample_moments(e.particles))


def joint_empirical_moments(e: JointEnsemble) -> JointGaussianMoments:
    mean, cov = _sample_moments(e.pairs)
    return JointGaussianMoments.split(GaussianMoments(mean, cov), e.dim_d)


# --------------------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid of cell centers on the box ``[lower, upper]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_cells: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(x) for x in np.atleast_1d(self.lower))
        upper = tuple(float(x) for x in np.atleast_1d(self.upper))
        n = tuple(int(x) for x in np.atleast_1d(self.n_cells))
        if not (len(lower) == len(upper) == len(n)):
            raise ValueError("lower, upper and n_cells must have the same length")
        if any(u <= l for l, u in zip(lower, upper)) or any(k < 2 for k in n):
            raise ValueError("grid box must be nondegenerate with at least 2 cells per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "n_cells", n)

    @property
    def ndim(self) -> int:
        return len(self.n_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n_cells

    @property
    def spacing(self) -> np.ndarray:
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.n_cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        return tuple(lo + (np.arange(n) + 0.5) * h for lo, n, h in zip(self.lower, self.n_cells, self.spacing))

    @property
    def points(self) -> np.ndarray:
        """Cell centers as an ``(n_total, ndim)`` array in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.lower, self.upper, tuple(n * factor for n in self.n_cells))

    def product(self, other: "GridSpec") -> "GridSpec":
        return GridSpec(self.lower + other.lower, self.upper + other.upper, self.n_cells + other.n_cells)

    @classmethod
    def auto(
        cls,
        references: Sequence[GaussianMoments],
        n_cells: int | Sequence[int],
        n_std: float = 6.0,
        pad: float = 0.0,
    ) -> "GridSpec":
        """Smallest box containing ``mean +/- n_std * std`` of every reference, plus ``pad``."""
        refs = list(references)
        if not refs:
            raise ValueError("need at least one reference measure")
        lo = np.min([m.mean - n_std * np.sqrt(np.diag(m.cov)) for m in refs], axis=0) - pad
        hi = np.max([m.mean + n_std * np.sqrt(np.diag(m.cov)) for m in refs], axis=0) + pad
        n = np.broadcast_to(np.asarray(n_cells), lo.shape)
        return cls(tuple(lo), tuple(hi), tuple(int(k) for k in n))


def _normalize(values: np.ndarray, cell_volume: float) -> np.ndarray:
    mass = float(values.sum()) * cell_volume
    if abs(mass - 1.0) <= 1e-14:
        return values
    return values / mass


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density values at the cell centers of ``spec``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(self.spec.shape)
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise ValueError("density values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_values(cls, spec: GridSpec, values) -> "GridDensity":
        """Construct and normalize to unit mass."""
        v = np.asarray(values, dtype=float).reshape(spec.shape)
        return cls(spec, v).normalized()

    @property
    def grid(self) -> tuple[np.ndarray, ...]:
        return self.spec.axes

    @property
    def cell_volume(self) -> float:
        return self.spec.cell_volume

    @property
    def mass(self) -> float:
        return float(self.values.sum()) * self.cell_volume

    def normalized(self) -> "GridDensity":
        if self.mass <= 0.0:
            raise ValueError("cannot normalize a density with zero mass")
        v = _normalize(self.values, self.cell_volume)
        return self if v is self.values else GridDensity(self.spec, v)

    def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Midpoint-rule integral of ``f`` (acting on ``(n, ndim)`` points)."""
        w = self.values.ravel() * self.cell_volume
        fx = np.asarray(f(self.spec.points), dtype=float)
        return np.tensordot(w, fx, axes=(0, 0))

    def marginal(self, keep: int) -> "GridDensity":
        """Marginal density of axis ``keep``."""
        other = tuple(i for i in range(self.spec.ndim) if i != keep)
        h = self.spec.spacing
        vals = self.values.sum(axis=other) * float(np.prod(h[list(other)]))
        sub = GridSpec((self.spec.lower[keep],), (self.spec.upper[keep],), (self.spec.n_cells[keep],))
        return GridDensity(sub, vals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(self.spec.ndim)] + ["value"])
        for point, value in zip(self.spec.points, self.values.ravel()):
            writer.writerow([repr(float(x)) for x in point] + [repr(float(value))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridDensity":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        data = np.array([[float(x) for x in r] for r in rows])
        pts, vals = data[:, :-1], data[:, -1]
        axes = [np.unique(pts[:, i]) for i in range(pts.shape[1])]
        h = [a[1] - a[0] for a in axes]
        spec = GridSpec(
            tuple(a[0] - hi / 2 for a, hi in zip(axes, h)),
            tuple(a[-1] + hi / 2 for a, hi in zip(axes, h)),
            tuple(len(a) for a in axes),
        )
        return cls(spec, vals)


def _broadcast_axes(spec: GridSpec) -> list[np.ndarray]:
    """Axis coordinates reshaped to broadcast against ``values``."""
    out = []
    for i, a in enumerate(spec.axes):
        shape = [1] * spec.ndim
        shape[i] = a.size
        out.append(a.reshape(shape))
    return out


def grid_moments(density: GridDensity) -> GaussianMoments:
    """Midpoint-quadrature mean and covariance, accumulated axis by axis."""
    spec = density.spec
    p = density.values / density.values.sum()
    r = spec.ndim
    axes = spec.axes
    marg = [p.sum(axis=tuple(j for j in range(r) if j != i)) for i in range(r)]
    mean = np.array([m @ a for m, a in zip(marg, axes)])
    dev = [a - mu for a, mu in zip(axes, mean)]
    cov = np.empty((r, r))
    for i in range(r):
        cov[i, i] = marg[i] @ dev[i] ** 2
        for j in range(i + 1, r):
            pair = p.sum(axis=tuple(k for k in range(r) if k not in (i, j)))
            cov[i, j] = cov[j, i] = dev[i] @ pair @ dev[j]
    return GaussianMoments(mean, cov)


def gaussian_projection(input: GridDensity | Ensemble | JointEnsemble) -> GaussianMoments:
    """Mean and covariance of a grid density (midpoint quadrature) or a particle cloud."""
    if isinstance(input, GridDensity):
        return grid_moments(input)
    if isinstance(input, JointEnsemble):
        return joint_empirical_moments(input).as_gaussian()
    return empirical_moments(input)


def weight_g(points: np.ndarray) -> np.ndarray:
    """``g(x) = 1 + |x|^2``."""
    return 1.0 + np.sum(points * points, axis=-1)


def _check_same_grid(mu: GridDensity, nu: GridDensity):
    if mu.spec != nu.spec:
        raise IncompatibleGridsError(f"grids differ: {mu.spec} vs {nu.spec}")


def weighted_tv(mu: GridDensity, nu: GridDensity) -> float:
    """Weighted total variation ``sum_cells g(x) |mu(x) - nu(x)| * cell_volume``.

    This is the quadrature of ``int g d|mu - nu|``, which attains the supremum
    of ``|mu[f] - nu[f]|`` over ``|f| <= g`` at ``f = g * sign(mu - nu)``.
    """
    _check_same_grid(mu, nu)
    g = 1.0 + sum(a * a for a in _broadcast_axes(mu.spec))
    return float(np.sum(g * np.abs(mu.values - nu.values)) * mu.cell_volume)


def gaussian_log_density(points: np.ndarray, m: GaussianMoments) -> np.ndarray:
    """Log-density at row-stacked ``points``."""
    _, chol = validated_cholesky(m.cov, "cov")
    z = solve_triangular(chol, (points - m.mean).T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * np.sum(z * z, axis=0) - 0.5 * (m.dim * np.log(2.0 * np.pi) + logdet)


def _gaussian_log_density_on_grid(spec: GridSpec, m: GaussianMoments) -> np.ndarray:
    _, chol = validated_cholesky(m.cov, "cov")
    linv = solve_triangular(chol, np.eye(m.dim), lower=True)
    dev = [a - mu for a, mu in zip(_broadcast_axes(spec), m.mean)]
    sq = 0.0
    for i in range(m.dim):
        z = sum(linv[i, j] * dev[j] for j in range(i + 1))
        sq = sq + z * z
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return np.broadcast_to(-0.5 * sq - 0.5 * (m.dim * np.log(2.0 * np.pi) + logdet), spec.shape)


def gaussian_to_grid(m: GaussianMoments, grid_spec: GridSpec | GridDensity) -> GridDensity:
    """Sample the Gaussian density at the cell centers and normalize.

    Emits :class:`CoverageWarning` when the mass captured by the grid before
    normalization is below 0.999.
    """
    spec = grid_spec.spec if isinstance(grid_spec, GridDensity) else grid_spec
    if spec.ndim != m.dim:
        raise ValueError(f"grid has {spec.ndim} axes but the Gaussian has dimension {m.dim}")
    vals = np.exp(_gaussian_log_density_on_grid(spec, m))
    mass = float(vals.sum()) * spec.cell_volume
    if mass < COVERAGE_MIN:
        warnings.warn(
            f"grid captures only {mass:.6f} of the Gaussian mass; enlarge the grid box",
            CoverageWarning,
            stacklevel=2,
        )
    if mass <= 0.0:
        raise ValueError("Gaussian has no mass on the grid")
    return GridDensity(spec, vals / mass)


def gaussianity_gap(pi: GridDensity) -> float:
    """``d_g(pi, G pi)``: distance of a grid density from its Gaussian projection."""
    return weighted_tv(pi, gaussian_to_grid(gaussian_projection(pi), pi.spec))


def cell_average_gaussian(m: GaussianMoments, spec: GridSpec, factor: int = 4) -> GridDensity:
    """Gaussian discretized by averaging over ``factor**ndim`` sub-cells per cell."""
    fine = gaussian_to_grid(m, spec.refined(factor)).values
    shape = []
    for n in spec.n_cells:
        shape += [n, factor]
    coarse = fine.reshape(shape).mean(axis=tuple(range(1, 2 * spec.ndim, 2)))
    return GridDensity.from_values(spec, coarse)


def grid_discretization_floor(m: GaussianMoments, spec: GridSpec) -> float:
    """d_g between point-sampled and cell-averaged discretizations of a Gaussian.

    A yardstick for how much two reasonable discretizations of the same
    smooth law disagree on ``spec``.
    """
    return weighted_tv(gaussian_to_grid(m, spec), cell_average_gaussian(m, spec))
