import numpy as np
from typing import Tuple

from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.JointDiagonalization.LinearAlgebra import orthonormalize


def eig_iteration_step(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    One simultaneous subspace-iteration step on both bases.

    U0 = sum_i B_i (A_i V)(V^T A_i^T)(B_i^T U) and V0 = sum_i A_i^T (B_i^T U)(U^T B_i)(A_i V), both from the
    current U and V, followed by a thin QR of each. Only r_i x r intermediates are formed.

    :param adapters: Collection being compressed
    :param u: Current orthonormal left basis of shape (d_B, r)
    :param v: Current orthonormal right basis of shape (d_A, r)
    :return: Tuple (U, V) of orthonormal bases; collapsed columns are completed deterministically
    """
    u_next = np.zeros_like(u, dtype=np.float64)
    v_next = np.zeros_like(v, dtype=np.float64)
    for adapter in adapters:
        av = adapter.a @ v
        btu = adapter.b.T @ u
        coupling = av.T @ btu
        u_next += adapter.b @ (av @ coupling)
        v_next += adapter.a.T @ (btu @ coupling.T)
    return orthonormalize(u_next), orthonormalize(v_next)
