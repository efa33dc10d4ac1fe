"""
Proper orthogonal decomposition of snapshot data.

The basis comes from the N x N covariance of mean-centred snapshots, diagonalized
with cyclic Jacobi rotations. For N=64 this is far cheaper than an SVD of the
snapshot matrix and spans the same subspace.
"""
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from .errors import ConvergenceError
from .log import get_logger
from .utils import *

logger = get_logger(__name__)

#: Eigenvalues above this (negative) bound are clamped to zero.
NEGATIVE_EIGENVALUE_CLAMP = -1e-12


@dataclass(frozen=True)
class PODBasis:
    """
    Mean field, orthonormal spatial modes (columns) and nonincreasing
    eigenvalue spectrum.
    """
    mean_field: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def size(self) -> int:
        return int(self.modes.shape[0])

    def energy_fraction(self, R: int) -> float:
        """Share of the total variance captured by the first `R` modes."""
        total = float(np.sum(self.eigenvalues))
        return float(np.sum(self.eigenvalues[:R])) / total if total > 0 else 1.0


def jacobi_eigh(A: np.ndarray, tol: float = 1e-13, max_sweeps: int = 100) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    A : np.ndarray
        Symmetric N x N matrix.
    tol : float, optional
        Stop when the off-diagonal Frobenius norm falls below `tol` times the
        Frobenius norm of `A`.
    max_sweeps : int, optional
        Sweep cap, by default 100.

    Returns
    -------
    tuple of np.ndarray
        (eigenvalues sorted nonincreasing, eigenvectors as matching columns).

    Raises
    ------
    ValueError
        If `A` is not square or not symmetric within 1e-10.
    ConvergenceError
        If the off-diagonal norm is still above tolerance after `max_sweeps`.

    Examples
    --------
    >>> w, V = jacobi_eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
    >>> np.round(w, 12)
    array([3., 1.])
    """
    a = np.array(A, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"`A` should be a square matrix, got shape {a.shape}.")
    norm = float(np.linalg.norm(a))
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, norm):
        raise ValueError("`A` should be symmetric within 1e-10.")
    a = 0.5 * (a + a.T)

    n = a.shape[0]
    v = np.eye(n)
    threshold = tol * norm

    def off_norm(m):
        return float(np.linalg.norm(m - np.diag(np.diag(m))))

    off = off_norm(a)
    sweeps = 0
    while off > threshold:
        if sweeps >= max_sweeps:
            raise ConvergenceError(sweeps, off)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
        sweeps += 1
        off = off_norm(a)

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    logger.debug("jacobi_eigh converged in %d sweeps (off-diagonal %.3e)", sweeps, off)
    return eigenvalues[order], v[:, order]


def compute_pod(snapshots: np.ndarray, center: bool = True) -> PODBasis:
    """
    POD basis of the rows of `snapshots`.

    Builds C = X^T X / M from the (optionally) mean-centred snapshots X and
    diagonalizes it. Tiny negative eigenvalues from round-off are clamped to 0.

    Parameters
    ----------
    snapshots : np.ndarray
        M x N snapshot matrix, M >= 2.
    center : bool, optional
        Remove the snapshot mean first (default). With ``center=False`` the mean
        field is zero and the modes describe second moments about the origin.

    Returns
    -------
    PODBasis

    Raises
    ------
    ValueError
        If fewer than two snapshots are given.
    """
    X = as_matrix(snapshots, "snapshots", allow_empty=True)
    M = X.shape[0]
    if M < 2:
        raise ValueError(f"`snapshots` should contain at least 2 rows, got {M}.")
    mean_field = X.mean(axis=0) if center else np.zeros(X.shape[1])
    Xc = X - mean_field
    C = Xc.T @ Xc / M
    eigenvalues, modes = jacobi_eigh(C)
    if eigenvalues.min() < NEGATIVE_EIGENVALUE_CLAMP * max(1.0, eigenvalues.max()):
        logger.warning("covariance has a negative eigenvalue %.3e", eigenvalues.min())
    eigenvalues = np.maximum(eigenvalues, 0.0)
    return PODBasis(mean_field=mean_field, modes=modes, eigenvalues=eigenvalues)


def _check_rank(basis: PODBasis, R: int) -> int:
    if not isinstance(R, (int, np.integer)) or isinstance(R, bool) or not 1 <= R <= basis.size:
        raise ValueError(f"`R` should be an integer in [1, {basis.size}], got {R}.")
    return int(R)


def project(basis: PODBasis, X: np.ndarray, R: int) -> np.ndarray:
    """Coefficients (M x R) of `X` on the first `R` modes."""
    R = _check_rank(basis, R)
    X = as_matrix(X, "X")
    return (X - basis.mean_field) @ basis.modes[:, :R]


def reconstruct(basis: PODBasis, coefficients: np.ndarray, R: int) -> np.ndarray:
    """mean + coefficients @ modes[:, :R]^T."""
    R = _check_rank(basis, R)
    coefficients = as_matrix(coefficients, "coefficients")
    if coefficients.shape[1] != R:
        raise ValueError(f"`coefficients` should have {R} columns, got {coefficients.shape[1]}.")
    return basis.mean_field + coefficients @ basis.modes[:, :R].T


def reconstruction_mse(basis: PODBasis, X: np.ndarray, R: int) -> float:
    """Per-entry mean squared reconstruction error with `R` modes."""
    X = as_matrix(X, "X")
    X_hat = reconstruct(basis, project(basis, X, R), R)
    return float(np.mean((X - X_hat) ** 2))


def truncation_mse(basis: PODBasis, R: int) -> float:
    """
    Training-set MSE predicted from the spectrum: sum of discarded eigenvalues / N.
    """
    R = _check_rank(basis, R)
    return float(np.sum(basis.eigenvalues[R:])) / basis.size


def mse_sweep(basis: PODBasis, train: np.ndarray, test: np.ndarray, R_list: Iterable[int]) -> List[Tuple[int, float, float]]:
    """
    (R, train MSE, test MSE) for each `R` in `R_list`.
    """
    rows = []
    for R in R_list:
        rows.append((int(R), reconstruction_mse(basis, train, R), reconstruction_mse(basis, test, R)))
        logger.info("POD R=%d: train MSE %.6e, test MSE %.6e", *rows[-1])
    return rows
