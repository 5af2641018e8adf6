"""Triple least squares for unconstrained bases with diagonal Sigmas.

The diagonal scalings are held as an n x r matrix S whose row i is diag(Sigma_i), rows in
collection order. Every sub-solve is a ridge-regularized r x r symmetric system.
"""
import logging
import numpy as np
import scipy.linalg
from typing import Dict, Tuple

from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.AdapterStore.Sigma import Sigma
from LoraJD.Errors import ShapeMismatchError, SolverError
from LoraJD.JointDiagonalization.Objective import objective


logger = logging.getLogger(__name__)

RIDGE = 1e-10


def _regularized_solve(gram: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    """
    Solves (gram + RIDGE I) X = rhs for a symmetric gram

    :param gram: Symmetric matrix of shape (r, r)
    :param rhs: Matrix of shape (r, m)
    :param what: Name of the unknown for error messages
    :exception SolverError: the regularized system is still singular or yields non-finite values
    :return: Matrix of shape (r, m)
    """
    system = gram + RIDGE * np.eye(gram.shape[0])
    try:
        solution = scipy.linalg.solve(system, rhs, assume_a='sym')
    except (scipy.linalg.LinAlgError, ValueError) as error:
        raise SolverError(f'singular normal equations for {what}: {error}') from None
    if not np.all(np.isfinite(solution)):
        raise SolverError(f'non-finite solution for {what}')
    return solution


def _check_scalings(adapters: AdapterCollection, s: np.ndarray, rank: int) -> None:
    if s.shape != (len(adapters), rank):
        raise ShapeMismatchError(f'S must be {len(adapters)}x{rank}, got {s.shape}')


def _u_system(adapters: AdapterCollection, v: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gram = (v.T @ v) * (s.T @ s)
    rhs = sum(adapter.b @ ((adapter.a @ v) * row) for adapter, row in zip(adapters, s))
    return gram, rhs


def _v_system(adapters: AdapterCollection, u: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gram = (u.T @ u) * (s.T @ s)
    rhs = sum(adapter.a.T @ ((adapter.b.T @ u) * row) for adapter, row in zip(adapters, s))
    return gram, rhs


def _sigma_system(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gram = (u.T @ u) * (v.T @ v)
    # column i holds diag(U^T B_i A_i V)
    rhs = np.column_stack([np.sum((u.T @ adapter.b) * (adapter.a @ v).T, axis=1) for adapter in adapters])
    return gram, rhs


def solve_u(adapters: AdapterCollection, v: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Best U for fixed V and S: (sum_i B_i A_i V Sigma_i)((V^T V) o (S^T S))^-1

    :param adapters: Collection being compressed
    :param v: Right basis of shape (d_A, r)
    :param s: Scalings of shape (n, r)
    :exception SolverError: the normal matrix stays singular after regularization
    :return: Left basis of shape (d_B, r)
    """
    _check_scalings(adapters, s, v.shape[1])
    gram, rhs = _u_system(adapters, v, s)
    return _regularized_solve(gram, rhs.T, 'U').T


def solve_v(adapters: AdapterCollection, u: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Best V for fixed U and S: (sum_i A_i^T B_i^T U Sigma_i)((U^T U) o (S^T S))^-1

    :param adapters: Collection being compressed
    :param u: Left basis of shape (d_B, r)
    :param s: Scalings of shape (n, r)
    :exception SolverError: the normal matrix stays singular after regularization
    :return: Right basis of shape (d_A, r)
    """
    _check_scalings(adapters, s, u.shape[1])
    gram, rhs = _v_system(adapters, u, s)
    return _regularized_solve(gram, rhs.T, 'V').T


def solve_sigmas(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    Best diagonal scalings for fixed U and V: ((U^T U) o (V^T V))^-1 diag(U^T B_i A_i V) per adapter

    :param adapters: Collection being compressed
    :param u: Left basis of shape (d_B, r)
    :param v: Right basis of shape (d_A, r)
    :exception SolverError: the normal matrix stays singular after regularization
    :return: Scalings of shape (n, r)
    """
    gram, rhs = _sigma_system(adapters, u, v)
    return _regularized_solve(gram, rhs, 'Sigma').T


def rescale(u: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Scales S so sum_i ||Sigma_i||_F^2 = 1 and moves the factor into U; every U Sigma_i is unchanged

    :param u: Left basis of shape (d_B, r)
    :param s: Scalings of shape (n, r)
    :return: Tuple (U, S) after rescaling; unchanged when S is zero
    """
    scale = float(np.linalg.norm(s))
    if scale == 0.0:
        return u, s
    return u * scale, s / scale


def jd_diag_step(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray, s: np.ndarray,
                 rescale_sigmas: bool = True) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One cycle of the three closed-form solves in the order U, V, Sigma, then the optional rescaling

    :param adapters: Collection being compressed
    :param u: Current left basis of shape (d_B, r)
    :param v: Current right basis of shape (d_A, r)
    :param s: Current scalings of shape (n, r)
    :param rescale_sigmas: Normalize the scalings to unit total energy afterwards
    :exception SolverError: a normal matrix stays singular after regularization
    :return: Tuple (U, V, S)
    """
    u = solve_u(adapters, v, s)
    v = solve_v(adapters, u, s)
    s = solve_sigmas(adapters, u, v)
    if rescale_sigmas:
        u, s = rescale(u, s)
    return u, v, s


def diag_objective(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray, s: np.ndarray) -> float:
    _check_scalings(adapters, s, u.shape[1])
    return objective(adapters, u, v, list(s))


def diag_gradients(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray,
                   s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Analytic gradients of the objective with diagonal Sigmas

    :param adapters: Collection being compressed
    :param u: Left basis of shape (d_B, r)
    :param v: Right basis of shape (d_A, r)
    :param s: Scalings of shape (n, r)
    :return: Tuple (dU, dV, dS) shaped like (u, v, s)
    """
    _check_scalings(adapters, s, u.shape[1])
    gram_u, rhs_u = _u_system(adapters, v, s)
    gram_v, rhs_v = _v_system(adapters, u, s)
    gram_s, rhs_s = _sigma_system(adapters, u, v)
    return 2.0 * (u @ gram_u - rhs_u), 2.0 * (v @ gram_v - rhs_v), 2.0 * (s @ gram_s - rhs_s.T)


def diag_sigmas(adapters: AdapterCollection, s: np.ndarray) -> Dict[str, Sigma]:
    return {adapter.id: Sigma.diagonal(row) for adapter, row in zip(adapters, s)}
