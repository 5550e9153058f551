"""Dense linear-algebra kernel for the nuclear-norm machinery.

Matrices are 2-D float64 ``numpy`` arrays. The SVD is LAPACK's
divide-and-conquer driver (``gesdd``) with the QR-iteration driver
(``gesvd``) as fallback when the former fails to converge.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

RECONSTRUCTION_RTOL = 1e-8


class ShapeMismatchError(ValueError):
    """Raised when operands do not have compatible dimensions."""


class SvdConvergenceError(ArithmeticError):
    """Raised when no SVD driver converges; ``residual`` is the last reconstruction error."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Validate and return ``values`` as a finite 2-D float array."""

    matrix = np.asarray(values, dtype=float)
    if matrix.ndim != 2 or 0 in matrix.shape:
        raise ShapeMismatchError(f"{name} must be a non-empty 2-D array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f"{name} has non-finite entries")
    return matrix


def frozen(values) -> np.ndarray:
    """Read-only float copy, used for values stored on frozen dataclasses."""

    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SvdFactors:
    """Compact SVD ``M = U @ diag(singular_values) @ V.T``."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    @property
    def rank_bound(self) -> int:
        return int(self.singular_values.size)

    def reconstruct(self, singular_values=None) -> np.ndarray:
        s = self.singular_values if singular_values is None else singular_values
        return (self.U * s) @ self.V.T


def svd(matrix) -> SvdFactors:
    m = as_matrix(matrix)
    residual = float("nan")
    for driver in ("gesdd", "gesvd"):
        try:
            u, s, vt = linalg.svd(m, full_matrices=False, lapack_driver=driver, check_finite=False)
        except linalg.LinAlgError as exc:
            logger.warning("SVD driver %s failed on %s matrix: %s", driver, m.shape, exc)
            continue
        residual = float(np.linalg.norm((u * s) @ vt - m))
        if residual <= RECONSTRUCTION_RTOL * max(np.linalg.norm(m), 1.0):
            return SvdFactors(U=frozen(u), singular_values=frozen(s), V=frozen(vt.T))
        logger.warning("SVD driver %s reconstruction residual %.3e too large", driver, residual)
    raise SvdConvergenceError(f"SVD did not converge for a {m.shape} matrix", residual=residual)


def singular_values(matrix) -> np.ndarray:
    return linalg.svdvals(as_matrix(matrix), check_finite=False)


def nuclear_norm(matrix) -> float:
    return float(np.sum(singular_values(matrix)))


def operator_norm(matrix) -> float:
    s = singular_values(matrix)
    return float(s[0]) if s.size else 0.0


def frobenius_norm(matrix) -> float:
    return float(np.linalg.norm(as_matrix(matrix), "fro"))


def svt(matrix, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal map of ``tau * ||.||_nu``."""

    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau!r}")
    m = as_matrix(matrix)
    if tau == 0:
        return m.copy()
    factors = svd(m)
    return factors.reconstruct(np.maximum(factors.singular_values - tau, 0.0))


def project_l1_simplex(values: np.ndarray, radius: float) -> np.ndarray:
    """Project a nonnegative vector onto ``{s >= 0, sum(s) <= radius}``.

    Sort-and-threshold: find the largest ``k`` with
    ``s_(k) - (sum_{i<=k} s_(i) - radius) / k > 0`` and shift by that amount.
    """

    values = np.asarray(values, dtype=float)
    if radius <= 0:
        return np.zeros_like(values)
    if values.sum() <= radius:
        return values.copy()
    ordered = np.sort(values)[::-1]
    shifted = ordered - (np.cumsum(ordered) - radius) / np.arange(1, ordered.size + 1)
    rho = int(np.nonzero(shifted > 0)[0].max()) + 1
    theta = (ordered[:rho].sum() - radius) / rho
    return np.maximum(values - theta, 0.0)


def project_nuclear_ball(matrix, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{X : ||X||_nu <= radius}``."""

    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius!r}")
    m = as_matrix(matrix)
    if radius == 0:
        return np.zeros_like(m)
    factors = svd(m)
    if factors.singular_values.sum() <= radius:
        return m.copy()
    return factors.reconstruct(project_l1_simplex(factors.singular_values, radius))


def lambda_extremes(symmetric) -> tuple:
    """Smallest and largest eigenvalue after symmetrising."""

    m = as_matrix(symmetric)
    if m.shape[0] != m.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got {m.shape}")
    eigenvalues = linalg.eigvalsh((m + m.T) / 2.0, check_finite=False)
    return float(eigenvalues[0]), float(eigenvalues[-1])
