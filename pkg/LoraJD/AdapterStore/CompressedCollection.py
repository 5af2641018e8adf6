import numpy as np
from typing import Dict, Iterable, List, Mapping, Optional

from LoraJD.AdapterStore.LoraAdapter import LoraAdapter
from LoraJD.AdapterStore.Sigma import KINDS, Sigma
from LoraJD.Errors import ShapeMismatchError, UnknownAdapterError
from LoraJD.JointDiagonalization.LinearAlgebra import low_rank_residual_sq, orthonormality_error


JD = 'jd'
CLUSTERED = 'clustered'
SVD = 'svd'
METHODS = (JD, CLUSTERED, SVD)


def _rounded(matrix: np.ndarray) -> np.ndarray:
    return matrix.astype('<f4').astype(np.float64)


class CompressedGroup:
    """Shared bases U (d_B x r), V (d_A x r) and the scaling of every member adapter"""

    # METHODS
    def __init__(self, u: np.ndarray, v: np.ndarray, sigmas: Mapping[str, Sigma], mode: str) -> None:
        """
        Initializes CompressedGroup attributes

        :param u: Left basis of shape (d_B, r)
        :param v: Right basis of shape (d_A, r)
        :param sigmas: Map from member id to its Sigma, in member order
        :param mode: 'full' or 'diag'; every Sigma must be of that kind
        :exception ValueError: mode is unknown or a Sigma has the wrong kind
        :exception ShapeMismatchError: bases disagree on r or a Sigma has another rank
        :return: None
        """
        # Checking for valid arguments
        if mode not in KINDS:
            raise ValueError(f'mode must be one of {KINDS}')
        u = np.array(u, dtype=np.float64, copy=True)
        v = np.array(v, dtype=np.float64, copy=True)
        if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
            raise ShapeMismatchError(f'bases must be matrices with the same column count, got {u.shape} and {v.shape}')
        rank = u.shape[1]
        for adapter_id, sigma in sigmas.items():
            if not isinstance(sigma, Sigma):
                raise TypeError('sigmas must map ids to Sigma')
            if sigma.kind != mode:
                raise ValueError(f'adapter {adapter_id!r}: Sigma kind {sigma.kind!r} in a {mode!r} group')
            if sigma.rank != rank:
                raise ShapeMismatchError(f'adapter {adapter_id!r}: Sigma rank {sigma.rank} in a rank-{rank} group')

        u.setflags(write=False)
        v.setflags(write=False)
        self.__u = u
        self.__v = v
        self.__sigmas = dict(sigmas)
        self.__mode = mode

    def __repr__(self) -> str:
        return f'CompressedGroup(mode={self.__mode!r}, rank={self.rank}, members={len(self.__sigmas)})'

    # PROPERTIES
    @property
    def u(self) -> np.ndarray:
        return self.__u

    @property
    def v(self) -> np.ndarray:
        return self.__v

    @property
    def sigmas(self) -> Dict[str, Sigma]:
        return dict(self.__sigmas)

    @property
    def mode(self) -> str:
        return self.__mode

    @property
    def rank(self) -> int:
        return self.__u.shape[1]

    @property
    def d_a(self) -> int:
        return self.__v.shape[0]

    @property
    def d_b(self) -> int:
        return self.__u.shape[0]

    @property
    def members(self) -> List[str]:
        return list(self.__sigmas)

    # ACCESSORS
    def sigma(self, adapter_id: str) -> Sigma:
        try:
            return self.__sigmas[adapter_id]
        except KeyError:
            raise UnknownAdapterError(f'adapter {adapter_id!r} is not a member of this group') from None

    def reconstruct(self, adapter_id: str) -> np.ndarray:
        """
        Materializes U Sigma V^T for one member. Only meant for small matrices.

        :param adapter_id: Member id
        :return: Matrix of shape (d_B, d_A)
        """
        return self.__u @ self.sigma(adapter_id).dense() @ self.__v.T

    def residual_sq_norm(self, adapter: LoraAdapter, sigma: Optional[Sigma] = None) -> float:
        """
        Squared reconstruction error ||B A - U Sigma V^T||_F^2 from thin factors.

        The residual is the product [B, -U Sigma] [A; V^T], whose norm comes from QR cores.

        :param adapter: Adapter to compare against
        :param sigma: Scaling to use; the member's own Sigma when None
        :return: Nonnegative float
        """
        if adapter.d_a != self.d_a or adapter.d_b != self.d_b:
            raise ShapeMismatchError(f'adapter {adapter.id!r} does not match the group dimensions')
        sigma = self.sigma(adapter.id) if sigma is None else sigma
        return low_rank_residual_sq(adapter.b, adapter.a, self.__u, sigma.dense(), self.__v)

    def orthonormality_error(self) -> float:
        """
        Largest deviation of U^T U and V^T V from the identity

        :return: max(||U^T U - I||_F, ||V^T V - I||_F)
        """
        return max(orthonormality_error(self.__u), orthonormality_error(self.__v))

    def parameter_count(self) -> int:
        return self.__u.size + self.__v.size + sum(sigma.size for sigma in self.__sigmas.values())

    # MUTATORS
    def with_sigmas(self, sigmas: Mapping[str, Sigma]) -> 'CompressedGroup':
        return CompressedGroup(self.__u, self.__v, sigmas, self.__mode)

    def rounded(self) -> 'CompressedGroup':
        """Group with every matrix rounded to float32 storage precision"""
        return CompressedGroup(_rounded(self.__u), _rounded(self.__v),
                               {adapter_id: sigma.rounded() for adapter_id, sigma in self.__sigmas.items()},
                               self.__mode)


class CompressedCollection:
    """Groups of shared bases plus the adapter-to-group assignment; the on-disk artifact"""

    # METHODS
    def __init__(self, groups: Iterable[CompressedGroup], assignment: Mapping[str, int], mode: str,
                 norms: Optional[Mapping[str, float]] = None, method: str = JD, normalized: bool = False) -> None:
        """
        Initializes CompressedCollection attributes

        :param groups: Compressed groups, indexed from 0
        :param assignment: Map from adapter id to group index
        :param mode: 'full' or 'diag'; shared by every group
        :param norms: Map from adapter id to the original Frobenius norm of its product
        :param method: How the collection was produced: 'jd', 'clustered' or 'svd'
        :param normalized: True when the Sigmas are on the unit-norm scale and norms still need applying
        :exception ValueError: unknown mode or method, or an assignment that does not cover the groups exactly
        :return: None
        """
        groups = list(groups)

        # Checking for valid arguments
        if mode not in KINDS:
            raise ValueError(f'mode must be one of {KINDS}')
        if method not in METHODS:
            raise ValueError(f'method must be one of {METHODS}')
        if any(not isinstance(group, CompressedGroup) for group in groups):
            raise TypeError('groups must be of type CompressedGroup')
        if any(group.mode != mode for group in groups):
            raise ValueError(f'every group must be in {mode!r} mode')
        for adapter_id, index in assignment.items():
            if not 0 <= index < len(groups):
                raise ValueError(f'adapter {adapter_id!r} assigned to group {index}, only {len(groups)} groups exist')
            if adapter_id not in groups[index].sigmas:
                raise ValueError(f'adapter {adapter_id!r} has no Sigma in group {index}')
        member_count = sum(len(group.members) for group in groups)
        if member_count != len(assignment):
            raise ValueError('every group member must be assigned to exactly that group')

        self.__groups = tuple(groups)
        self.__assignment = {adapter_id: int(index) for adapter_id, index in assignment.items()}
        self.__mode = mode
        self.__norms = {} if norms is None else {adapter_id: float(norm) for adapter_id, norm in norms.items()}
        self.__method = method
        self.__normalized = bool(normalized)

    def __len__(self) -> int:
        return len(self.__assignment)

    def __repr__(self) -> str:
        return (f'CompressedCollection(method={self.__method!r}, mode={self.__mode!r}, groups={len(self.__groups)}, '
                f'adapters={len(self)}, normalized={self.__normalized})')

    # PROPERTIES
    @property
    def groups(self) -> List[CompressedGroup]:
        return list(self.__groups)

    @property
    def assignment(self) -> Dict[str, int]:
        return dict(self.__assignment)

    @property
    def mode(self) -> str:
        return self.__mode

    @property
    def norms(self) -> Dict[str, float]:
        return dict(self.__norms)

    @property
    def method(self) -> str:
        return self.__method

    @property
    def normalized(self) -> bool:
        return self.__normalized

    @property
    def ids(self) -> List[str]:
        return list(self.__assignment)

    @property
    def d_a(self) -> int:
        return self.__groups[0].d_a

    @property
    def d_b(self) -> int:
        return self.__groups[0].d_b

    @property
    def max_rank(self) -> int:
        return max((group.rank for group in self.__groups), default=0)

    # ACCESSORS
    def contains(self, adapter_id: str) -> bool:
        return adapter_id in self.__assignment

    def group_index(self, adapter_id: str) -> int:
        try:
            return self.__assignment[adapter_id]
        except KeyError:
            raise UnknownAdapterError(f'unknown adapter id {adapter_id!r}') from None

    def group_of(self, adapter_id: str) -> CompressedGroup:
        return self.__groups[self.group_index(adapter_id)]

    def sigma_of(self, adapter_id: str) -> Sigma:
        return self.group_of(adapter_id).sigma(adapter_id)

    def reconstruct(self, adapter_id: str) -> np.ndarray:
        return self.group_of(adapter_id).reconstruct(adapter_id)

    def parameter_count(self) -> int:
        """
        Stored floats plus one assignment entry per adapter when there are several groups

        :return: Integer parameter count of the materialized collection
        """
        extra = len(self.__assignment) if self.__method == CLUSTERED else 0
        return sum(group.parameter_count() for group in self.__groups) + extra

    # MUTATORS
    def replace(self, groups: Optional[Iterable[CompressedGroup]] = None, norms: Optional[Mapping[str, float]] = None,
                normalized: Optional[bool] = None) -> 'CompressedCollection':
        """
        Copy with some attributes swapped out

        :param groups: New groups with the same members; kept when None
        :param norms: New norms map; kept when None
        :param normalized: New normalized flag; kept when None
        :return: New CompressedCollection
        """
        return CompressedCollection(self.__groups if groups is None else groups, self.__assignment, self.__mode,
                                    norms=self.__norms if norms is None else norms, method=self.__method,
                                    normalized=self.__normalized if normalized is None else normalized)

    def rounded(self) -> 'CompressedCollection':
        """
        Collection quantized to the float32 storage precision of the .jdc container.

        Saving the result and loading it back yields bit-identical matrices.

        :return: New CompressedCollection
        """
        return self.replace(groups=[group.rounded() for group in self.__groups])


def single_group_collection(group: CompressedGroup, norms: Optional[Mapping[str, float]] = None,
                            normalized: bool = False) -> CompressedCollection:
    """Wraps one group into a collection that assigns every member to it"""
    return CompressedCollection([group], {adapter_id: 0 for adapter_id in group.members}, group.mode,
                                norms=norms, method=JD, normalized=normalized)
