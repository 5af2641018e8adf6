import numpy as np
import scipy.linalg
from multimethod import multimethod
from typing import Dict, Tuple

from LoraJD.AdapterStore.CompressedCollection import CompressedCollection, CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.AdapterStore.Normalization import denormalize_sigmas
from LoraJD.Errors import UnknownAdapterError


RANK_THRESHOLD = 1e-9


def _relative(squared_error: float, norm: float, adapter_id: str) -> float:
    if norm == 0.0:
        raise ValueError(f'adapter {adapter_id!r} has a zero product; its relative error is undefined')
    return float(np.sqrt(max(squared_error, 0.0)) / norm)


def _summarize(errors: Dict[str, float]) -> Tuple[Dict[str, float], float]:
    return errors, float(np.mean(list(errors.values()))) if errors else float('nan')


@multimethod
def relative_recon_error(adapters: AdapterCollection,
                         compressed: CompressedCollection) -> Tuple[Dict[str, float], float]:
    """
    Relative reconstruction error ||U Sigma_i V^T - B_i A_i||_F / ||B_i A_i||_F of every adapter

    :param adapters: Original adapters on their original scale
    :param compressed: Collection covering every id; normalized Sigmas are scaled back first
    :exception UnknownAdapterError: an adapter is missing from the compressed collection
    :exception ValueError: an adapter has a zero product
    :return: Tuple (map from id to error, unweighted mean)
    """
    compressed = denormalize_sigmas(compressed)
    errors = {}
    for adapter in adapters:
        if not compressed.contains(adapter.id):
            raise UnknownAdapterError(f'adapter {adapter.id!r} is missing from the compressed collection')
        squared = compressed.group_of(adapter.id).residual_sq_norm(adapter)
        errors[adapter.id] = _relative(squared, adapter.product_norm(), adapter.id)
    return _summarize(errors)


@multimethod
def relative_recon_error(adapters: AdapterCollection, compressed: CompressedGroup) -> Tuple[Dict[str, float], float]:
    """
    Same measure against a single group whose Sigmas are already on the adapters' scale

    :param adapters: Members of the group
    :param compressed: Group holding a Sigma for every adapter
    :return: Tuple (map from id to error, unweighted mean)
    """
    errors = {adapter.id: _relative(compressed.residual_sq_norm(adapter), adapter.product_norm(), adapter.id)
              for adapter in adapters}
    return _summarize(errors)


def numerical_rank(matrix: np.ndarray, threshold: float = RANK_THRESHOLD) -> int:
    if matrix.size == 0:
        return 0
    values = scipy.linalg.svdvals(matrix)
    if values[0] == 0.0:
        return 0
    return int(np.count_nonzero(values > threshold * values[0]))


def minimal_lossless_rank(adapters: AdapterCollection) -> int:
    """
    Smallest shared rank with zero reconstruction error: the larger numerical rank of [A_1; ...; A_n]
    and [B_1, ..., B_n], counting singular values above 1e-9 times the largest

    :param adapters: Nonempty collection
    :exception ValueError: empty collection
    :return: Integer rank
    """
    if len(adapters) == 0:
        raise ValueError('minimal lossless rank of an empty collection is undefined')
    return max(numerical_rank(adapters.stacked_a()), numerical_rank(adapters.stacked_b()))
