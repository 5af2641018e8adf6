import numpy as np
from typing import List, Sequence

from LoraJD.Errors import ShapeMismatchError


class Batch:
    """Activations x of shape (b, l, d_A) with the adapter id serving each batch row"""

    # METHODS
    def __init__(self, x: np.ndarray, adapter_ids: Sequence[str]) -> None:
        """
        Initializes Batch attributes

        :param x: Activations of shape (b, l, d_A), b >= 1
        :param adapter_ids: One adapter id per batch row
        :exception ShapeMismatchError: x is not three-dimensional or the id count differs from b
        :return: None
        """
        x = np.asarray(x)
        adapter_ids = [str(adapter_id) for adapter_id in adapter_ids]
        if x.ndim != 3:
            raise ShapeMismatchError(f'activations must be b x l x d_A, got shape {x.shape}')
        if x.shape[0] < 1:
            raise ShapeMismatchError('a batch needs at least one row')
        if len(adapter_ids) != x.shape[0]:
            raise ShapeMismatchError(f'{len(adapter_ids)} adapter ids for {x.shape[0]} batch rows')

        self.__x = x
        self.__adapter_ids = adapter_ids

    def __len__(self) -> int:
        return self.__x.shape[0]

    # PROPERTIES
    @property
    def x(self) -> np.ndarray:
        return self.__x

    @property
    def adapter_ids(self) -> List[str]:
        return list(self.__adapter_ids)

    @property
    def sequence_length(self) -> int:
        return self.__x.shape[1]

    @property
    def d_a(self) -> int:
        return self.__x.shape[2]
