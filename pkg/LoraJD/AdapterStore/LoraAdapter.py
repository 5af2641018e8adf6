import numpy as np
from multimethod import multimethod
from typing import Dict, Iterable, Iterator, List, Optional

from LoraJD.Errors import ShapeMismatchError, UnknownAdapterError
from LoraJD.JointDiagonalization.LinearAlgebra import factored_sq_norm


def _frozen(matrix: np.ndarray) -> np.ndarray:
    """Copies matrix into a read-only float64 array"""
    array = np.array(matrix, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


class LoraAdapter:
    """One low-rank adapter pair whose product B @ A updates a frozen d_B x d_A weight"""

    # METHODS
    def __init__(self, adapter_id: str, b: np.ndarray, a: np.ndarray, original_norm: Optional[float] = None) -> None:
        """
        Initializes LoraAdapter attributes

        :param adapter_id: Unique identifier of the adapter
        :param b: Left factor of shape (d_B, r_i)
        :param a: Right factor of shape (r_i, d_A)
        :param original_norm: Frobenius norm of B @ A before any normalization; computed when None
        :exception TypeError: adapter_id must be of type str
        :exception ShapeMismatchError: b and a must be matrices sharing an inner dimension of at least 1
        :exception ValueError: original_norm must be finite and nonnegative
        :return: None
        """
        # Checking for valid arguments
        if not isinstance(adapter_id, str):
            raise TypeError('adapter_id must be of type str')
        b = np.asarray(b)
        a = np.asarray(a)
        if b.ndim != 2 or a.ndim != 2:
            raise ShapeMismatchError(f'adapter {adapter_id!r}: b and a must be matrices')
        if b.shape[1] != a.shape[0]:
            raise ShapeMismatchError(f'adapter {adapter_id!r}: b is {b.shape} but a is {a.shape}')
        if b.shape[1] < 1:
            raise ShapeMismatchError(f'adapter {adapter_id!r}: rank must be at least 1')

        # Setting attributes
        self.__id = adapter_id
        self.__b = _frozen(b)
        self.__a = _frozen(a)
        if original_norm is None:
            original_norm = self.product_norm()
        if not np.isfinite(original_norm) or original_norm < 0:
            raise ValueError(f'adapter {adapter_id!r}: original_norm must be finite and nonnegative')
        self.__original_norm = float(original_norm)

    def __repr__(self) -> str:
        return f'LoraAdapter(id={self.__id!r}, d_B={self.d_b}, d_A={self.d_a}, rank={self.rank})'

    # PROPERTIES
    @property
    def id(self) -> str:
        return self.__id

    @property
    def b(self) -> np.ndarray:
        """
        Gets the left factor

        :return: Read-only matrix of shape (d_B, r_i)
        """
        return self.__b

    @property
    def a(self) -> np.ndarray:
        """
        Gets the right factor

        :return: Read-only matrix of shape (r_i, d_A)
        """
        return self.__a

    @property
    def original_norm(self) -> float:
        """
        Gets the Frobenius norm of B @ A as it was before normalization

        :return: Nonnegative float
        """
        return self.__original_norm

    @property
    def rank(self) -> int:
        return self.__b.shape[1]

    @property
    def d_a(self) -> int:
        return self.__a.shape[1]

    @property
    def d_b(self) -> int:
        return self.__b.shape[0]

    # ACCESSORS
    def product(self) -> np.ndarray:
        """
        Materializes B @ A. Only meant for small matrices and reference computations.

        :return: Matrix of shape (d_B, d_A)
        """
        return self.__b @ self.__a

    def product_norm(self) -> float:
        """
        Frobenius norm of the current product, computed from the thin factors

        :return: ||B @ A||_F
        """
        return float(np.sqrt(factored_sq_norm(self.__b, self.__a)))

    def scaled(self, factor: float, original_norm: Optional[float] = None) -> 'LoraAdapter':
        """
        New adapter whose B is multiplied by factor; A is shared untouched.

        :param factor: Scale applied to B
        :param original_norm: Norm recorded on the new adapter; kept from self when None
        :return: Scaled LoraAdapter
        """
        norm = self.__original_norm if original_norm is None else original_norm
        return LoraAdapter(self.__id, self.__b * factor, self.__a, original_norm=norm)


class AdapterCollection:
    """Ordered collection of adapters for one layer; the order is the canonical index i"""

    # METHODS
    def __init__(self, adapters: Iterable[LoraAdapter], d_a: Optional[int] = None, d_b: Optional[int] = None) -> None:
        """
        Initializes AdapterCollection attributes

        :param adapters: Adapters in canonical order
        :param d_a: Layer input dimension; inferred from the first adapter when None
        :param d_b: Layer output dimension; inferred from the first adapter when None
        :exception TypeError: adapters must hold LoraAdapter instances
        :exception ValueError: ids must be unique and the collection nonempty unless dims are given
        :exception ShapeMismatchError: every adapter must share d_A and d_B
        :return: None
        """
        adapters = list(adapters)

        # Checking for valid arguments
        if any(not isinstance(adapter, LoraAdapter) for adapter in adapters):
            raise TypeError('adapters must be of type LoraAdapter')
        if not adapters and (d_a is None or d_b is None):
            raise ValueError('an empty collection needs explicit d_a and d_b')
        d_a = adapters[0].d_a if d_a is None else int(d_a)
        d_b = adapters[0].d_b if d_b is None else int(d_b)
        if d_a <= 0 or d_b <= 0:
            raise ValueError('d_a and d_b must be positive')
        for adapter in adapters:
            if adapter.d_a != d_a or adapter.d_b != d_b:
                raise ShapeMismatchError(f'adapter {adapter.id!r} is {adapter.d_b}x{adapter.d_a}, '
                                         f'collection is {d_b}x{d_a}')
        ids = [adapter.id for adapter in adapters]
        if len(set(ids)) != len(ids):
            raise ValueError('adapter ids must be unique')

        # Setting attributes
        self.__adapters = tuple(adapters)
        self.__index = {adapter_id: index for index, adapter_id in enumerate(ids)}
        self.__d_a = d_a
        self.__d_b = d_b

    def __len__(self) -> int:
        return len(self.__adapters)

    def __iter__(self) -> Iterator[LoraAdapter]:
        return iter(self.__adapters)

    @multimethod
    def __getitem__(self, index: int) -> LoraAdapter:
        """
        Gets adapter by canonical index

        :param index: 0-based position in manifest order
        :return: LoraAdapter at that position
        """
        return self.__adapters[index]

    @multimethod
    def __getitem__(self, index: np.integer) -> LoraAdapter:
        return self.__adapters[int(index)]

    @multimethod
    def __getitem__(self, adapter_id: str) -> LoraAdapter:
        """
        Gets adapter by id

        :param adapter_id: Adapter identifier
        :exception UnknownAdapterError: no adapter has that id
        :return: LoraAdapter with that id
        """
        return self.__adapters[self.index_of(adapter_id)]

    def __repr__(self) -> str:
        return f'AdapterCollection(n={len(self)}, d_B={self.__d_b}, d_A={self.__d_a})'

    # PROPERTIES
    @property
    def adapters(self) -> List[LoraAdapter]:
        return list(self.__adapters)

    @property
    def ids(self) -> List[str]:
        return [adapter.id for adapter in self.__adapters]

    @property
    def d_a(self) -> int:
        return self.__d_a

    @property
    def d_b(self) -> int:
        return self.__d_b

    @property
    def ranks(self) -> List[int]:
        return [adapter.rank for adapter in self.__adapters]

    @property
    def norms(self) -> Dict[str, float]:
        """
        Gets the recorded original norms

        :return: Map from id to original_norm in canonical order
        """
        return {adapter.id: adapter.original_norm for adapter in self.__adapters}

    # ACCESSORS
    def contains(self, adapter_id: str) -> bool:
        return adapter_id in self.__index

    def index_of(self, adapter_id: str) -> int:
        """
        Finds the canonical index of an id

        :param adapter_id: Adapter identifier
        :exception UnknownAdapterError: no adapter has that id
        :return: 0-based index
        """
        try:
            return self.__index[adapter_id]
        except KeyError:
            raise UnknownAdapterError(f'unknown adapter id {adapter_id!r}') from None

    def subset(self, adapter_ids: Iterable[str]) -> 'AdapterCollection':
        """
        Collection restricted to the given ids, in the order given

        :param adapter_ids: Ids to keep
        :return: New AdapterCollection sharing d_A and d_B
        """
        return AdapterCollection([self[adapter_id] for adapter_id in adapter_ids], d_a=self.__d_a, d_b=self.__d_b)

    def total_energy(self) -> float:
        """
        Sum of squared Frobenius norms of the current products

        :return: sum_i ||B_i A_i||_F^2
        """
        return float(sum(factored_sq_norm(adapter.b, adapter.a) for adapter in self.__adapters))

    def stacked_b(self) -> np.ndarray:
        """Column-stacks [B_1, ..., B_n] into a d_B x sum(r_i) matrix"""
        return np.hstack([adapter.b for adapter in self.__adapters])

    def stacked_a(self) -> np.ndarray:
        """Row-stacks [A_1; ...; A_n] into a sum(r_i) x d_A matrix"""
        return np.vstack([adapter.a for adapter in self.__adapters])
