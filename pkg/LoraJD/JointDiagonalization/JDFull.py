"""Alternating solver for shared orthonormal bases with unconstrained square Sigmas.

With U and V fixed the best Sigma_i is U^T B_i A_i V, so the problem reduces to maximizing
sum_i ||U^T B_i A_i V||_F^2 over U and V. Each half-step is a top-r eigenproblem whose
eigenvectors are read off the SVD of a thin stacked factor.
"""
import numpy as np
from typing import Dict, Tuple

from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Sigma import Sigma
from LoraJD.Errors import NotOrthonormalError
from LoraJD.JointDiagonalization.LinearAlgebra import (is_orthonormal, leading_left_singular_vectors,
                                                       orthonormality_error)
from LoraJD.JointDiagonalization.Objective import objective


def _require_orthonormal(u: np.ndarray, v: np.ndarray) -> None:
    for name, basis in (('U', u), ('V', v)):
        if not is_orthonormal(basis):
            raise NotOrthonormalError(f'{name} is not orthonormal: ||{name}^T {name} - I||_F = '
                                      f'{orthonormality_error(basis):.3e}')


def optimal_sigma_full(u: np.ndarray, v: np.ndarray, adapter: LoraAdapter) -> Sigma:
    """
    Least-squares Sigma for one adapter and fixed orthonormal bases

    :param u: Orthonormal left basis of shape (d_B, r)
    :param v: Orthonormal right basis of shape (d_A, r)
    :param adapter: Adapter to project
    :exception NotOrthonormalError: U^T U or V^T V is more than 1e-8 away from the identity
    :return: Full Sigma (U^T B)(A V)
    """
    _require_orthonormal(u, v)
    return Sigma.full((u.T @ adapter.b) @ (adapter.a @ v))


def full_sigmas(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray) -> Dict[str, Sigma]:
    _require_orthonormal(u, v)
    return {adapter.id: Sigma.full((u.T @ adapter.b) @ (adapter.a @ v)) for adapter in adapters}


def full_objective(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray) -> float:
    """Objective at the optimal Sigmas for the given orthonormal bases"""
    return objective(adapters, u, v, full_sigmas(adapters, u, v))


def update_u(adapters: AdapterCollection, v: np.ndarray) -> np.ndarray:
    """
    Top-r eigenvectors of sum_i B_i A_i V V^T A_i^T B_i^T, taken from the stack [B_i (A_i V)]

    :param adapters: Collection being compressed
    :param v: Current right basis of shape (d_A, r)
    :return: Orthonormal left basis of shape (d_B, r)
    """
    stack = np.hstack([adapter.b @ (adapter.a @ v) for adapter in adapters])
    return leading_left_singular_vectors(stack, v.shape[1])


def update_v(adapters: AdapterCollection, u: np.ndarray) -> np.ndarray:
    stack = np.hstack([adapter.a.T @ (adapter.b.T @ u) for adapter in adapters])
    return leading_left_singular_vectors(stack, u.shape[1])


def jd_full_step(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    One alternating step: U from the current V, then V from the new U

    :param adapters: Collection being compressed
    :param u: Current orthonormal left basis of shape (d_B, r)
    :param v: Current orthonormal right basis of shape (d_A, r)
    :exception NotOrthonormalError: the current bases are not orthonormal
    :return: Tuple (U, V) of updated orthonormal bases
    """
    _require_orthonormal(u, v)
    new_u = update_u(adapters, v)
    new_v = update_v(adapters, new_u)
    return new_u, new_v
