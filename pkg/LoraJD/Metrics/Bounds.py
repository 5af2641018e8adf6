import numpy as np
import scipy.linalg
from dataclasses import dataclass

from LoraJD.AdapterStore.CompressedCollection import CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.AdapterStore.Sigma import FULL
from LoraJD.JointDiagonalization.LinearAlgebra import product_core


BOUNDS_TOLERANCE = 1e-8


@dataclass(frozen=True)
class BoundsReport:
    """Energy captured by a full-mode solution and the bounds it must sit between"""

    lower: float
    achieved: float
    upper: float
    total_energy: float
    rank: int
    adapter_count: int

    def holds(self, rtol: float = BOUNDS_TOLERANCE) -> bool:
        """
        Checks lower <= achieved <= upper <= total_energy with slack rtol * total_energy

        :param rtol: Relative slack
        :return: True when every inequality holds
        """
        slack = rtol * max(self.total_energy, np.finfo(float).tiny)
        return (self.lower <= self.achieved + slack and self.achieved <= self.upper + slack
                and self.upper <= self.total_energy + slack)


def product_gram(adapters: AdapterCollection) -> np.ndarray:
    """
    n x n Gram matrix of the flattened products, entry (i, j) = tr((B_i A_i)^T (B_j A_j))

    Each entry is sum((B_i^T B_j) o (A_i A_j^T)), built from r_i x r_j blocks only.
    """
    n = len(adapters)
    gram = np.empty((n, n))
    items = list(adapters)
    for i, left in enumerate(items):
        for j in range(i, n):
            right = items[j]
            gram[i, j] = gram[j, i] = np.sum((left.b.T @ right.b) * (left.a @ right.a.T))
    return gram


def theorem_bounds(adapters: AdapterCollection, group: CompressedGroup) -> BoundsReport:
    """
    Sandwich bounds on the energy sum_i ||Sigma_i||_F^2 captured by a full-mode group.

    With sigma_j the singular values of the matrix whose columns are vec(B_i A_i) and sigma_bar_j those of
    sum_i B_i A_i: lower = (1/n) sum_{j<=r} sigma_bar_j^2, upper = sum_{j<=min(r^2, n)} sigma_j^2 and
    total = sum_j sigma_j^2. The sigma_j come from the eigenvalues of the n x n Gram matrix.

    :param adapters: Adapters on the scale the group was solved on; only group members are used
    :param group: Full-mode group
    :exception ValueError: the group holds diagonal Sigmas
    :return: BoundsReport
    """
    if group.mode != FULL:
        raise ValueError('bounds defined for JD-Full only')
    members = adapters.subset(group.members)
    n, rank = len(members), group.rank

    gram = product_gram(members)
    energies = np.clip(scipy.linalg.eigvalsh(gram), 0.0, None)[::-1]
    upper = float(np.sum(energies[:min(rank * rank, n)]))
    total = float(np.trace(gram))

    _, core, _ = product_core(members.stacked_b(), members.stacked_a())
    merged = scipy.linalg.svdvals(core)
    lower = float(np.sum(merged[:rank] ** 2) / n)

    achieved = float(sum(group.sigma(adapter_id).squared_norm() for adapter_id in group.members))
    return BoundsReport(lower=lower, achieved=achieved, upper=upper, total_energy=total, rank=rank, adapter_count=n)
