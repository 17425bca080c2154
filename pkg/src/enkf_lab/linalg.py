"""Small dense linear algebra helpers: covariance validation and jittered Cholesky."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky

from .errors import InvalidCovarianceError, SingularInnovationError

SYMMETRY_RTOL = 1e-12
BASE_JITTER = 1e-10
MAX_JITTER = 1e-6


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    return m


def is_symmetric(a: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    scale = max(float(np.max(np.abs(a))), 1e-300)
    return bool(np.max(np.abs(a - a.T)) <= rtol * scale)


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def validated_cholesky(a, name: str = "covariance") -> tuple[np.ndarray, np.ndarray]:
    """Check that ``a`` is symmetric positive definite and return ``(a, L)``.

    ``L`` is the lower-triangular factor with ``L @ L.T == a``. No jitter is
    added: model covariances must be strictly PD as given.
    """
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise InvalidCovarianceError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidCovarianceError(f"{name} contains non-finite entries")
    if not is_symmetric(m):
        raise InvalidCovarianceError(f"{name} is not symmetric")
    m = symmetrize(m)
    try:
        chol = cholesky(m, lower=True)
    except LinAlgError as exc:
        raise InvalidCovarianceError(f"{name} is not positive definite: {exc}") from None
    if np.any(np.diag(chol) <= 0.0):
        raise InvalidCovarianceError(f"{name} has a non-positive Cholesky pivot")
    return m, chol


def jittered_cholesky(a: np.ndarray, base: float = BASE_JITTER, max_jitter: float = MAX_JITTER):
    """Cholesky factor of ``a + s * trace(a)/dim * I`` with escalating ``s``.

    ``s`` starts at ``base`` and is multiplied by 10 until the factorization
    succeeds or ``s`` exceeds ``max_jitter``. Returns ``(L, jitter)`` where
    ``jitter`` is the absolute diagonal shift that was added.

    Raises
    ------
    SingularInnovationError
        If no admissible jitter level yields a factorization.
    """
    m = symmetrize(as_matrix(a))
    dim = m.shape[0]
    level = abs(float(np.trace(m))) / dim
    eye = np.eye(dim)
    s = base
    while s <= max_jitter * (1 + 1e-9):
        shift = s * level
        try:
            chol = cholesky(m + shift * eye, lower=True)
        except LinAlgError:
            s *= 10.0
            continue
        if np.all(np.diag(chol) > 0.0) and np.all(np.isfinite(chol)):
            return chol, shift
        s *= 10.0
    raise SingularInnovationError(
        f"matrix could not be factorized with relative jitter up to {max_jitter:g}"
    )


def gain_from(cross_cov: np.ndarray, innovation_cov: np.ndarray) -> np.ndarray:
    """Return ``cross_cov @ inv(innovation_cov)`` via a jittered Cholesky solve."""
    chol, _ = jittered_cholesky(innovation_cov)
    # K S = C  <=>  S K^T = C^T  (S symmetric)
    return cho_solve((chol, True), np.asarray(cross_cov, dtype=float).T).T


def is_psd(a: np.ndarray, tol: float = 1e-10) -> bool:
    m = as_matrix(a)
    if m.shape[0] != m.shape[1] or not is_symmetric(m):
        return False
    scale = max(1.0, float(np.max(np.abs(m))))
    return bool(np.min(np.linalg.eigvalsh(symmetrize(m))) >= -tol * scale)


def psd_factor(cov, name: str = "init_cov") -> np.ndarray:
    """Square-root factor ``F`` with ``F @ F.T == cov`` for a symmetric PSD ``cov``."""
    c = as_matrix(cov, name)
    if c.shape[0] != c.shape[1] or not np.allclose(c, c.T, rtol=1e-12, atol=1e-14):
        raise InvalidCovarianceError(f"{name} must be a symmetric square matrix")
    c = symmetrize(c)
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(c)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise InvalidCovarianceError(f"{name} is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return v * np.sqrt(np.clip(w, 0.0, None))
