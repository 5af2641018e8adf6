import numpy as np


FULL = 'full'
DIAGONAL = 'diag'
KINDS = (FULL, DIAGONAL)


class Sigma:
    """Per-adapter scaling between the shared bases: an r x r matrix or a length-r diagonal"""

    # METHODS
    def __init__(self, kind: str, values: np.ndarray) -> None:
        """
        Initializes Sigma attributes

        :param kind: 'full' for an r x r matrix, 'diag' for a length-r vector
        :param values: Matrix or vector holding the scaling
        :exception ValueError: kind is unknown or values do not have the shape kind implies
        :return: None
        """
        # Checking for valid arguments
        if kind not in KINDS:
            raise ValueError(f'kind must be one of {KINDS}')
        values = np.array(values, dtype=np.float64, copy=True)
        if kind == FULL and (values.ndim != 2 or values.shape[0] != values.shape[1]):
            raise ValueError('full Sigma values must be a square matrix')
        if kind == DIAGONAL and values.ndim != 1:
            raise ValueError('diagonal Sigma values must be a vector')

        values.setflags(write=False)
        self.__kind = kind
        self.__values = values

    @classmethod
    def full(cls, matrix: np.ndarray) -> 'Sigma':
        return cls(FULL, matrix)

    @classmethod
    def diagonal(cls, vector: np.ndarray) -> 'Sigma':
        return cls(DIAGONAL, vector)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sigma):
            return NotImplemented
        return self.__kind == other.__kind and np.array_equal(self.__values, other.__values)

    def __repr__(self) -> str:
        return f'Sigma(kind={self.__kind!r}, rank={self.rank})'

    # PROPERTIES
    @property
    def kind(self) -> str:
        return self.__kind

    @property
    def values(self) -> np.ndarray:
        return self.__values

    @property
    def rank(self) -> int:
        return self.__values.shape[0]

    @property
    def size(self) -> int:
        """
        Gets the number of stored parameters

        :return: r for a diagonal Sigma, r^2 for a full one
        """
        return self.__values.size

    # ACCESSORS
    def dense(self) -> np.ndarray:
        """
        Gets the scaling as an r x r matrix

        :return: values itself for a full Sigma, diag(values) for a diagonal one
        """
        if self.__kind == FULL:
            return self.__values.copy()
        return np.diag(self.__values)

    def squared_norm(self) -> float:
        return float(np.sum(self.__values * self.__values))

    def scaled(self, factor: float) -> 'Sigma':
        return Sigma(self.__kind, self.__values * factor)

    def rounded(self) -> 'Sigma':
        """Sigma with values rounded to float32 storage precision"""
        return Sigma(self.__kind, self.__values.astype('<f4').astype(np.float64))
