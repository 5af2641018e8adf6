import numpy as np
from typing import Dict, Mapping, Sequence, Union

from LoraJD.AdapterStore.CompressedCollection import CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.AdapterStore.Sigma import Sigma
from LoraJD.Errors import ShapeMismatchError
from LoraJD.JointDiagonalization.LinearAlgebra import low_rank_residual_sq


SigmaLike = Union[Sigma, np.ndarray]
Sigmas = Union[Mapping[str, SigmaLike], Sequence[SigmaLike]]


def _dense(sigma: SigmaLike) -> np.ndarray:
    if isinstance(sigma, Sigma):
        return sigma.dense()
    sigma = np.asarray(sigma, dtype=np.float64)
    return np.diag(sigma) if sigma.ndim == 1 else sigma


def _ordered(adapters: AdapterCollection, sigmas: Sigmas) -> list:
    if isinstance(sigmas, Mapping):
        return [sigmas[adapter_id] for adapter_id in adapters.ids]
    sigmas = list(sigmas)
    if len(sigmas) != len(adapters):
        raise ShapeMismatchError(f'{len(sigmas)} Sigmas given for {len(adapters)} adapters')
    return sigmas


def objective(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray, sigmas: Sigmas) -> float:
    """
    Total squared reconstruction error sum_i ||B_i A_i - U Sigma_i V^T||_F^2.

    No d_B x d_A product is formed; every residual is evaluated as a product of thin factors.
    Rank-0 bases give the total energy of the collection.

    :param adapters: Collection being approximated
    :param u: Left basis of shape (d_B, r)
    :param v: Right basis of shape (d_A, r)
    :param sigmas: Map from id to Sigma, or a sequence in collection order; arrays are accepted
    :exception ShapeMismatchError: bases or Sigmas do not fit the collection
    :return: Nonnegative float
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
        raise ShapeMismatchError(f'bases must share a column count, got {u.shape} and {v.shape}')
    if u.shape[0] != adapters.d_b or v.shape[0] != adapters.d_a:
        raise ShapeMismatchError(f'bases {u.shape}, {v.shape} do not fit a {adapters.d_b}x{adapters.d_a} layer')
    rank = u.shape[1]
    total = 0.0
    for adapter, sigma in zip(adapters, _ordered(adapters, sigmas)):
        dense = _dense(sigma)
        if dense.shape != (rank, rank):
            raise ShapeMismatchError(f'adapter {adapter.id!r}: Sigma of shape {dense.shape} for rank {rank}')
        total += low_rank_residual_sq(adapter.b, adapter.a, u, dense, v)
    return total


def residual_norms(adapters: AdapterCollection, group: CompressedGroup) -> Dict[str, float]:
    """
    Per-adapter squared reconstruction errors against a compressed group

    :param adapters: Members of the group, or any subset of them
    :param group: Group holding a Sigma for every adapter
    :return: Map from id to ||B_i A_i - U Sigma_i V^T||_F^2
    """
    return {adapter.id: group.residual_sq_norm(adapter) for adapter in adapters}


def group_objective(adapters: AdapterCollection, group: CompressedGroup) -> float:
    return float(sum(residual_norms(adapters, group).values()))
