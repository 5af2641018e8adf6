import param
from typing import Optional

from LoraJD.AdapterStore.CompressedCollection import CLUSTERED, SVD, CompressedCollection
from LoraJD.AdapterStore.Sigma import FULL


BASELINE16 = 'baseline16'
JD_FULL = 'jdfull'
JD_DIAG = 'jddiag'
SVD_MODE = 'svd'
CLUSTERED_MODE = 'clustered'
SETTING_MODES = (BASELINE16, JD_FULL, JD_DIAG, SVD_MODE, CLUSTERED_MODE)

BASELINE_RANK = 16


class CompressionSetting(param.Parameterized):
    """Shape of a compressed deployment for parameter accounting on one module"""

    mode = param.Selector(default=JD_FULL, objects=list(SETTING_MODES), doc='Compression scheme')
    rank = param.Integer(default=BASELINE_RANK, bounds=(0, None), doc='Shared rank r; per-adapter rank for svd')
    clusters = param.Integer(default=1, bounds=(1, None), doc='Number of clusters c')
    adapter_count = param.Integer(default=1, bounds=(1, None), doc='Number of adapters N')
    hidden_dim = param.Integer(default=4096, bounds=(1, None), doc='Square layer width D')
    d_a = param.Integer(default=None, allow_None=True, bounds=(1, None), doc='Input width of a rectangular layer')
    d_b = param.Integer(default=None, allow_None=True, bounds=(1, None), doc='Output width of a rectangular layer')
    diagonal_sigmas = param.Boolean(default=False, doc='Clustered with diagonal Sigmas: r per adapter instead of r^2')

    @property
    def dims(self) -> int:
        """
        Gets d_A + d_B

        :return: d_a + d_b when both are set, otherwise 2 * hidden_dim
        """
        if self.d_a is not None and self.d_b is not None:
            return self.d_a + self.d_b
        return 2 * self.hidden_dim

    def check(self) -> None:
        if self.mode == BASELINE16 and self.rank != BASELINE_RANK:
            raise ValueError(f'{BASELINE16} is fixed at rank {BASELINE_RANK}')


def param_count(setting: CompressionSetting) -> int:
    """
    Parameters stored for a setting.

    baseline16: N (d_A + d_B) 16; jdfull: (d_A + d_B) r + N r^2; jddiag: (d_A + d_B) r + N r;
    svd: r N (d_A + d_B); clustered: (d_A + d_B) r c + N (r^2 + 1).

    :param setting: Compression setting
    :exception ValueError: baseline16 at a rank other than 16
    :return: Integer count
    """
    setting.check()
    dims, rank, count = setting.dims, setting.rank, setting.adapter_count
    if setting.mode == BASELINE16:
        return count * dims * BASELINE_RANK
    if setting.mode == JD_FULL:
        return dims * rank + count * rank * rank
    if setting.mode == JD_DIAG:
        return dims * rank + count * rank
    if setting.mode == SVD_MODE:
        return rank * count * dims
    sigma_size = rank if setting.diagonal_sigmas else rank * rank
    return dims * rank * setting.clusters + count * (sigma_size + 1)


def baseline_count(setting: CompressionSetting) -> int:
    """Parameters of N uncompressed rank-16 adapters of the same layer shape"""
    return setting.adapter_count * setting.dims * BASELINE_RANK


def saved_ratio(setting: CompressionSetting, original: Optional[int] = None) -> float:
    """
    Fraction of parameters saved against the rank-16 baseline; negative when compression costs more

    :param setting: Compression setting
    :param original: Original parameter count; the rank-16 baseline of the same N and layer when None
    :return: 1 - param_count / original
    """
    original = baseline_count(setting) if original is None else original
    return 1.0 - param_count(setting) / original


def gpu_usage_ratio(setting: CompressionSetting) -> float:
    """
    Memory of a setting in units of one rank-16 adapter; the matched baseline adapter count, unrounded

    :param setting: Compression setting
    :return: param_count / ((d_A + d_B) 16)
    """
    return param_count(setting) / (setting.dims * BASELINE_RANK)


def setting_for(compressed: CompressedCollection) -> CompressionSetting:
    """
    Derives the accounting setting that describes a compressed collection

    :param compressed: Collection produced by a solve, a clustered solve or the SVD baseline
    :return: CompressionSetting with d_A and d_B taken from the collection
    """
    common = dict(rank=compressed.max_rank, adapter_count=len(compressed), d_a=compressed.d_a, d_b=compressed.d_b,
                  hidden_dim=max(compressed.d_a, compressed.d_b))
    if compressed.method == SVD:
        return CompressionSetting(mode=SVD_MODE, **common)
    if compressed.method == CLUSTERED:
        return CompressionSetting(mode=CLUSTERED_MODE, clusters=len(compressed.groups),
                                  diagonal_sigmas=compressed.mode != FULL, **common)
    return CompressionSetting(mode=JD_FULL if compressed.mode == FULL else JD_DIAG, **common)
