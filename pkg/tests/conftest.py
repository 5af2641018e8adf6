import numpy as np
import pytest
from typing import List, Optional, Tuple

from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter


def random_adapters(n: int, d: int, rank: int, seed: int = 0, d_b: Optional[int] = None,
                    ranks: Optional[List[int]] = None) -> AdapterCollection:
    """n adapters with i.i.d. Gaussian factors scaled so every entry of B A is O(1 / sqrt(d))"""
    rng = np.random.default_rng(seed)
    d_b = d if d_b is None else d_b
    adapters = []
    for i in range(n):
        r_i = rank if ranks is None else ranks[i]
        b = rng.standard_normal((d_b, r_i)) / np.sqrt(d_b)
        a = rng.standard_normal((r_i, d)) / np.sqrt(d)
        adapters.append(LoraAdapter(f'adapter-{i:03d}', b, a))
    return AdapterCollection(adapters)


def orthonormal(d: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, rank)))
    return q


def planted_families(families: int, per_family: int, d: int, rank: int,
                     seed: int = 0) -> Tuple[AdapterCollection, List[int]]:
    """
    Adapters B = P_f C_i, A = Q_f^T whose families use disjoint orthonormal column blocks P_f, Q_f

    :return: Tuple (collection, family label of every adapter in collection order)
    """
    rng = np.random.default_rng(seed)
    left = orthonormal(d, families * rank, rng)
    right = orthonormal(d, families * rank, rng)
    adapters, labels = [], []
    for index in range(families * per_family):
        family = index % families
        block = slice(family * rank, (family + 1) * rank)
        core = rng.standard_normal((rank, rank)) + 2.0 * np.eye(rank)
        adapters.append(LoraAdapter(f'adapter-{index:03d}', left[:, block] @ core, right[:, block].T))
        labels.append(family)
    return AdapterCollection(adapters), labels


def orthogonal_unit_adapters(n: int, d: int) -> AdapterCollection:
    """Rank-1 adapters e_p e_q^T on distinct (p, q) pairs: unit norm, mutually orthogonal products"""
    adapters = []
    for index in range(n):
        p, q = divmod(index, d)
        b = np.zeros((d, 1))
        a = np.zeros((1, d))
        b[p, 0] = 1.0
        a[0, q] = 1.0
        adapters.append(LoraAdapter(f'unit-{index:03d}', b, a))
    return AdapterCollection(adapters)


def correlated_adapters(n: int, d: int, rank: int, seed: int = 0, noise: float = 0.2) -> AdapterCollection:
    """Adapters that share one common component B_0 A_0 plus small independent perturbations"""
    rng = np.random.default_rng(seed)
    b_0 = rng.standard_normal((d, rank)) / np.sqrt(d)
    a_0 = rng.standard_normal((rank, d)) / np.sqrt(d)
    adapters = []
    for i in range(n):
        b = b_0 + noise * rng.standard_normal((d, rank)) / np.sqrt(d)
        a = a_0 + noise * rng.standard_normal((rank, d)) / np.sqrt(d)
        adapters.append(LoraAdapter(f'adapter-{i:03d}', b, a))
    return AdapterCollection(adapters)


def dense_objective(adapters: AdapterCollection, u: np.ndarray, v: np.ndarray, sigmas) -> float:
    """Reference objective with every product materialized"""
    total = 0.0
    for adapter, sigma in zip(adapters, sigmas):
        sigma = np.diag(sigma) if np.ndim(sigma) == 1 else sigma
        total += np.linalg.norm(adapter.product() - u @ sigma @ v.T) ** 2
    return total


def dense_truncated_error(adapter: LoraAdapter, rank: int) -> float:
    values = np.linalg.svd(adapter.product(), compute_uv=False)
    return float(np.sum(values[rank:] ** 2))


@pytest.fixture
def make_random_adapters():
    return random_adapters


@pytest.fixture
def make_planted_families():
    return planted_families


@pytest.fixture
def make_orthogonal_unit_adapters():
    return orthogonal_unit_adapters


@pytest.fixture
def make_correlated_adapters():
    return correlated_adapters


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
