"""Applying compressed adapters to activations without batched per-row weight products.

Rows are grouped by compressed group. Within a group the bases are shared by every row, so the
only per-row work is the Sigma step: t1 = x V (shared), t2 = Sigma_id t1 (per row), y = t2 U^T (shared).
"""
import logging
import numpy as np
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from LoraJD.AdapterStore.CompressedCollection import CompressedCollection
from LoraJD.AdapterStore.Normalization import denormalize_sigmas
from LoraJD.AdapterStore.Sigma import FULL
from LoraJD.Errors import ShapeMismatchError
from LoraJD.Serving.Batch import Batch


logger = logging.getLogger(__name__)

SHARED = 'shared_matmul'
PER_ROW_SCALE = 'per_row_scale'
PER_ROW_MATMUL = 'per_row_matmul'

TraceEntry = Tuple[str, Tuple[int, ...]]


def _check(batch: Batch, compressed: CompressedCollection, base_output: Optional[np.ndarray]) -> Dict[int, List[int]]:
    """Validates shapes and maps every group index to its batch rows in batch order"""
    if batch.d_a != compressed.d_a:
        raise ShapeMismatchError(f'activations have {batch.d_a} features, the layer expects d_A = {compressed.d_a}')
    if base_output is not None:
        expected = (len(batch), batch.sequence_length, compressed.d_b)
        if np.shape(base_output) != expected:
            raise ShapeMismatchError(f'base_output must have shape {expected}, got {np.shape(base_output)}')
    rows: Dict[int, List[int]] = {}
    for row, adapter_id in enumerate(batch.adapter_ids):
        rows.setdefault(compressed.group_index(adapter_id), []).append(row)
    return rows


def forward_compressed(batch: Batch, compressed: CompressedCollection, base_output: Optional[np.ndarray] = None,
                       dtype: type = np.float32, trace: Optional[List[TraceEntry]] = None) -> np.ndarray:
    """
    Adds U Sigma_id V^T x to every row, one shared-basis pass per group

    :param batch: Activations and per-row adapter ids
    :param compressed: Collection holding every id of the batch; groups may differ between rows
    :param base_output: Output of the frozen layer, shape (b, l, d_B), added to the result
    :param dtype: Arithmetic precision of the path
    :param trace: List that receives (operation, operand shape) for every product performed
    :exception UnknownAdapterError: an id is not in the collection
    :exception ShapeMismatchError: x or base_output does not fit the layer
    :return: Tensor of shape (b, l, d_B)
    """
    rows_by_group = _check(batch, compressed, base_output)
    compressed = denormalize_sigmas(compressed)
    ids = batch.adapter_ids
    output = np.zeros((len(batch), batch.sequence_length, compressed.d_b), dtype=dtype)
    for index, rows in rows_by_group.items():
        group = compressed.groups[index]
        u, v = group.u.astype(dtype), group.v.astype(dtype)
        x = batch.x[rows].astype(dtype)

        sigmas = np.stack([group.sigma(ids[row]).values for row in rows]).astype(dtype)
        projected = x @ v
        if group.mode == FULL:
            scaled = np.einsum('mij,mlj->mli', sigmas, projected)
            step = (PER_ROW_MATMUL, (group.rank, group.rank))
        else:
            scaled = projected * sigmas[:, None, :]
            step = (PER_ROW_SCALE, (group.rank,))
        output[rows] = scaled @ u.T

        if trace is not None:
            trace.extend([(SHARED, v.shape), step, (SHARED, u.shape)])
    if base_output is not None:
        output += np.asarray(base_output, dtype=dtype)
    logger.debug('applied %d groups to a batch of %d rows', len(rows_by_group), len(batch))
    return output


def forward_dense_reference(batch: Batch, compressed: CompressedCollection,
                            base_output: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Float64 reference that materializes every row's d_B x d_A update; small inputs only

    :param batch: Activations and per-row adapter ids
    :param compressed: Collection holding every id of the batch
    :param base_output: Output of the frozen layer, added to the result
    :return: Tensor of shape (b, l, d_B)
    """
    _check(batch, compressed, base_output)
    compressed = denormalize_sigmas(compressed)
    output = np.zeros((len(batch), batch.sequence_length, compressed.d_b))
    for row, adapter_id in enumerate(batch.adapter_ids):
        output[row] = batch.x[row].astype(np.float64) @ compressed.reconstruct(adapter_id).T
    if base_output is not None:
        output += np.asarray(base_output, dtype=np.float64)
    return output


@dataclass(frozen=True)
class FlopEstimate:
    """Multiply counts of the compressed path and of the conventional per-row BMM path"""

    shared_v: int
    sigma: int
    shared_u: int
    bmm: int

    @property
    def compressed_total(self) -> int:
        return self.shared_v + self.sigma + self.shared_u

    @property
    def per_row_reduction(self) -> float:
        """
        Fraction of per-row work removed: only the Sigma step depends on the row's adapter

        :return: 1 - sigma / bmm
        """
        return 1.0 - self.sigma / self.bmm if self.bmm else 0.0


def flop_estimate(batch: Batch, compressed: CompressedCollection, lora_rank: int = 16) -> FlopEstimate:
    """
    Analytic multiply counts for serving a batch.

    Compressed path per group j with m_j rows: m_j l d_A r_j for x V, m_j l r_j (diagonal) or m_j l r_j^2 (full)
    for Sigma, m_j l d_B r_j for U. The BMM path costs b l r_i (d_A + d_B) with adapters of rank lora_rank.

    :param batch: Activations and per-row adapter ids
    :param compressed: Collection holding every id of the batch
    :param lora_rank: Rank r_i of the uncompressed adapters
    :return: FlopEstimate
    """
    rows_by_group = _check(batch, compressed, None)
    tokens = batch.sequence_length
    shared_v = sigma = shared_u = 0
    for index, rows in rows_by_group.items():
        group = compressed.groups[index]
        count = len(rows) * tokens
        shared_v += count * group.d_a * group.rank
        sigma += count * (group.rank ** 2 if group.mode == FULL else group.rank)
        shared_u += count * group.d_b * group.rank
    bmm = len(batch) * tokens * lora_rank * (compressed.d_a + compressed.d_b)
    return FlopEstimate(shared_v=shared_v, sigma=sigma, shared_u=shared_u, bmm=bmm)
