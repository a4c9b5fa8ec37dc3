"""Symmetric positive-definite helpers shared by the posterior and the optimizer."""
import numpy as np
from scipy import linalg as sla

from app.bandit.exceptions import IllConditionedError


def symmetrize(matrix):
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2))


def _condition(matrix):
    try:
        return float(np.linalg.cond(matrix))
    except np.linalg.LinAlgError:
        return float('inf')


def cholesky(matrix, what='matrix'):
    """Lower Cholesky factor; IllConditionedError with a condition estimate on failure."""
    try:
        return sla.cho_factor(matrix, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(f"Cholesky factorisation of {what} failed: {exc}",
                                  condition_number=_condition(matrix)) from exc


def spd_solve(matrix, rhs, what='matrix'):
    return sla.cho_solve(cholesky(matrix, what), rhs)


def spd_inverse(matrix, what='matrix'):
    factor = cholesky(matrix, what)
    return symmetrize(sla.cho_solve(factor, np.eye(matrix.shape[0])))


def spd_logdet(matrix, what='matrix'):
    c, _ = cholesky(matrix, what)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def batched_spd_inverse(stack, what='matrix'):
    """Inverse of every (p, p) matrix in an (m, p, p) stack, plus the log-determinants."""
    try:
        chol = np.linalg.cholesky(stack)
    except np.linalg.LinAlgError as exc:
        worst = max((_condition(block) for block in stack), default=float('inf'))
        raise IllConditionedError(f"Cholesky factorisation of {what} failed: {exc}",
                                  condition_number=worst) from exc
    eye = np.broadcast_to(np.eye(stack.shape[-1]), stack.shape)
    chol_inv = np.linalg.solve(chol, eye)
    inverse = np.swapaxes(chol_inv, -1, -2) @ chol_inv
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    return symmetrize(inverse), logdet


def project_eigenvalues(matrix, floor):
    """Nearest symmetric matrix (Frobenius) with every eigenvalue >= floor."""
    values, vectors = np.linalg.eigh(symmetrize(matrix))
    clipped = np.maximum(values, floor)
    return symmetrize((vectors * clipped) @ vectors.T)
