import logging
import numpy as np
import scipy.linalg
from typing import Tuple

from LoraJD.AdapterStore.CompressedCollection import SVD, CompressedCollection, CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Sigma import DIAGONAL, Sigma
from LoraJD.JointDiagonalization.LinearAlgebra import product_core


logger = logging.getLogger(__name__)


def truncated_svd(adapter: LoraAdapter, rank: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Best rank-r approximation of B A from its thin factors.

    B = Q_B R_B and A^T = Q_A R_A, so B A = Q_B (R_B R_A^T) Q_A^T and only the small core is decomposed.
    Each left vector's largest-magnitude entry is positive; the matching right vector is flipped with it.

    :param adapter: Adapter to approximate
    :param rank: Target rank r >= 1
    :exception ValueError: rank below 1
    :return: Tuple (U, s, V) with U of shape (d_B, k), s of length k, V of shape (d_A, k), k = min(r, r_i)
    """
    if rank < 1:
        raise ValueError('rank must be at least 1')
    q_b, core, q_a = product_core(adapter.b, adapter.a)
    left, values, right_t = scipy.linalg.svd(core, full_matrices=False)
    kept = min(rank, values.size)
    u = q_b @ left[:, :kept]
    v = q_a @ right_t[:kept].T
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(kept)])
    signs[signs == 0] = 1.0
    return u * signs, values[:kept].copy(), v * signs


def svd_compress(adapters: AdapterCollection, rank: int) -> CompressedCollection:
    """
    Per-adapter truncated SVD baseline as a compressed collection: one diagonal group per adapter

    :param adapters: Collection to compress
    :param rank: Rank kept for every adapter
    :return: CompressedCollection tagged 'svd' on the original scale
    """
    groups = []
    for adapter in adapters:
        u, values, v = truncated_svd(adapter, rank)
        groups.append(CompressedGroup(u, v, {adapter.id: Sigma(DIAGONAL, values)}, DIAGONAL))
    logger.info('truncated %d adapters to rank %d', len(adapters), rank)
    assignment = {adapter_id: index for index, adapter_id in enumerate(adapters.ids)}
    return CompressedCollection(groups, assignment, DIAGONAL, norms=adapters.norms, method=SVD)
