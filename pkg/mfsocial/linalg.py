import numpy as np
import scipy.linalg

from mfsocial.exceptions import DimensionMismatch
from mfsocial.exceptions import NumericalError

EPS_PSD = 1e-10
RANK_RTOL = 1e-12


class SingularMatrixError(NumericalError):
    pass


def as_matrix(value, shape=None, name='matrix'):
    """Return `value` as a finite 2-d float array, optionally checking its
    shape. Scalars become 1x1 matrices and flat sequences become rows.

    """
    array = np.atleast_2d(np.asarray(value, dtype=float))
    if array.ndim != 2:
        raise DimensionMismatch("%s must be two-dimensional" % name)
    if shape is not None and array.shape != tuple(shape):
        raise DimensionMismatch("%s has shape %s, expected %s"
                                % (name, array.shape, tuple(shape)))
    if not np.all(np.isfinite(array)):
        raise DimensionMismatch("%s has non-finite entries" % name)
    return array


def symmetrize(M):
    M = np.asarray(M, dtype=float)
    return (M + M.T) / 2.0


def min_eigenvalue(M):
    return float(np.linalg.eigvalsh(symmetrize(M))[0])


def is_psd(M, tol=EPS_PSD):
    M = np.asarray(M, dtype=float)
    return bool(np.allclose(M, M.T, atol=1e-12) and min_eigenvalue(M) >= -tol)


def is_pd(M, tol=0.0):
    M = np.asarray(M, dtype=float)
    return bool(np.allclose(M, M.T, atol=1e-12) and min_eigenvalue(M) > tol)


def numerical_rank(M, rtol=RANK_RTOL):
    """Rank with the threshold ``sigma_max * max(rows, cols) * rtol``."""
    M = np.atleast_2d(np.asarray(M))
    if not np.iscomplexobj(M):
        M = M.astype(float)
    if M.size == 0:
        return 0
    sigma = scipy.linalg.svdvals(M)
    if sigma[0] == 0.0:
        return 0
    threshold = sigma[0] * max(M.shape) * rtol
    return int(np.sum(sigma > threshold))


def solve_least_squares(M, rhs):
    """Least-squares solution of ``M x = rhs`` through an economic QR
    factorisation. `M` must have full column rank; callers check that first.

    """
    Qf, Rf = scipy.linalg.qr(M, mode='economic')
    x = scipy.linalg.solve_triangular(Rf, Qf.T @ rhs)
    residual = M @ x - rhs
    return x, float(np.linalg.norm(residual))


def checked_inverse(M, name='matrix', max_cond=1e12):
    M = np.asarray(M, dtype=float)
    if not np.linalg.cond(M) <= max_cond:
        raise SingularMatrixError("%s is singular to working precision" % name)
    return np.linalg.inv(M)


def psd_sqrt(M):
    """Symmetric square root of a positive semidefinite matrix."""
    w, V = np.linalg.eigh(symmetrize(M))
    return symmetrize((V * np.sqrt(np.clip(w, 0.0, None))) @ V.T)
