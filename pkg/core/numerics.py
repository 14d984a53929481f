"""
Dense linear algebra shared by the estimation modules.

All matrices here are small (dimension at most a few dozen), so everything is
dense and eigen-based; accuracy is preferred over speed.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from .exceptions import IllConditionedError, NumericError, SingularMatrixError

logger = logging.getLogger(__name__)

SymMatrix = NDArray[np.float64]

SYMMETRY_RTOL = 1e-8
RIDGE_SCALE = 1e-10
INV_SQRT_RTOL = 1e-12


@dataclass(frozen=True)
class RegularizedSolution:
    x: NDArray[np.float64]
    ridge: float
    fallback: bool


def _check_finite(m: NDArray[np.float64], name: str) -> None:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")


def as_symmetric(m, name: str = "matrix") -> SymMatrix:
    """
    Validate a square matrix and return its symmetrized copy

    Args:
        m: Square array-like
        name: Label used in error messages

    Returns:
        (m + mᵀ)/2 as a float array

    Raises:
        NumericError: If m is not square, is empty, has non-finite entries,
            or is asymmetric beyond the relative tolerance
    """
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise NumericError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    _check_finite(m, name)
    scale = max(np.max(np.abs(m)), 1.0)
    if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * scale:
        raise NumericError(f"{name} is not symmetric")
    return 0.5 * (m + m.T)


def sym_eig(m) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix"""
    m = as_symmetric(m)
    return linalg.eigh(m)


def spectral_norm(m) -> float:
    """Largest eigenvalue magnitude of a symmetric matrix"""
    vals, _ = sym_eig(m)
    return float(np.max(np.abs(vals)))


def min_eigenvalue(m) -> float:
    vals, _ = sym_eig(m)
    return float(vals[0])


def _solve_once(m, rhs, symmetric: bool):
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        return linalg.solve(m, rhs, assume_a="sym" if symmetric else "gen")


def reg_solve(m, rhs, ridge: float = 0.0, *, symmetric: bool = True) -> RegularizedSolution:
    """
    Solve (m + ridge·I) x = rhs, retrying once with a scale-aware ridge

    A symmetric (LDLᵀ) factorization is used when ``symmetric`` is set; the
    Newton solver passes ``symmetric=False`` for mean Jacobians that are not
    symmetric (treatment-effect families).

    Args:
        m: Square matrix
        rhs: Right-hand side vector or matrix
        ridge: Nonnegative diagonal shift

    Returns:
        RegularizedSolution with the solution, the ridge actually used, and
        whether the fallback fired

    Raises:
        NumericError: If inputs are non-finite or ridge is negative
        SingularMatrixError: If the system is singular after the fallback
    """
    if ridge < 0:
        raise NumericError(f"ridge must be nonnegative, got {ridge}")
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if symmetric:
        m = as_symmetric(m)
    else:
        _check_finite(m, "matrix")
    rhs = np.asarray(rhs, dtype=np.float64)
    _check_finite(rhs, "right-hand side")
    dim = m.shape[0]
    eye = np.eye(dim)

    try:
        return RegularizedSolution(_solve_once(m + ridge * eye, rhs, symmetric), ridge, False)
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as e:
        if ridge > 0:
            raise SingularMatrixError(f"Singular system at ridge {ridge:g}: {e}")
        first_error = e

    fallback = RIDGE_SCALE * abs(np.trace(m)) / dim or RIDGE_SCALE
    logger.warning(f"Factorization failed ({first_error}); retrying with ridge {fallback:.3e}")
    try:
        x = _solve_once(m + fallback * eye, rhs, symmetric)
    except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as e:
        raise SingularMatrixError(f"Matrix is singular even with ridge {fallback:.3e}: {e}")
    return RegularizedSolution(x, fallback, True)


def inv_sqrt(m) -> SymMatrix:
    """
    Inverse symmetric square root via eigendecomposition

    Raises:
        IllConditionedError: If an eigenvalue is at or below
            1e-12 times the spectral norm
    """
    vals, vecs = sym_eig(m)
    norm = float(np.max(np.abs(vals)))
    threshold = INV_SQRT_RTOL * norm
    if vals[0] <= threshold:
        raise IllConditionedError(
            f"Eigenvalue {vals[0]:.3e} is below the threshold {threshold:.3e}",
            eigenvalue=float(vals[0]),
        )
    out = (vecs / np.sqrt(vals)) @ vecs.T
    return 0.5 * (out + out.T)


def sym_inverse(m) -> tuple[SymMatrix, bool]:
    """Inverse of a symmetric matrix; second value reports the ridge fallback"""
    m = as_symmetric(m)
    sol = reg_solve(m, np.eye(m.shape[0]))
    inv = sol.x
    return 0.5 * (inv + inv.T), sol.fallback


def sandwich_product(bread, meat, bread_right=None) -> tuple[NDArray[np.float64], bool]:
    """
    bread⁻¹ · meat · bread_right⁻ᵀ for square, possibly non-symmetric breads

    With ``bread_right`` omitted the result is the symmetrized Q⁻¹WQ⁻ᵀ.

    Returns:
        The product and whether either solve needed the ridge fallback
    """
    right = bread if bread_right is None else bread_right
    first = reg_solve(bread, meat, symmetric=False)
    second = reg_solve(right, first.x.T, symmetric=False)
    out = second.x.T
    if bread_right is None:
        out = 0.5 * (out + out.T)
    return out, first.fallback or second.fallback
