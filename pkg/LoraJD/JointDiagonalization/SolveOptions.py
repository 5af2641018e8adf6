import param
from dataclasses import dataclass, field
from typing import Dict, Tuple

from LoraJD.AdapterStore.Sigma import DIAGONAL, FULL


ALTERNATING = 'alternating'
EIG_ITERATION = 'eig'

DEFAULT_ITERATIONS = {ALTERNATING: 10, EIG_ITERATION: 100}


class SolveOptions(param.Parameterized):
    """Configuration of one joint-diagonalization solve"""

    rank = param.Integer(default=16, bounds=(1, None), doc='Rank r of the shared bases')
    mode = param.Selector(default=FULL, objects=[FULL, DIAGONAL], doc='Full r x r Sigmas or diagonal Sigmas')
    max_iters = param.Integer(default=None, allow_None=True, bounds=(1, None),
                              doc='Iteration budget; 10 for alternating, 100 for eigenvalue iteration when unset')
    tolerance = param.Number(default=1e-3, bounds=(0, None), doc='Stop once the subspace delta drops below this')
    algorithm = param.Selector(default=ALTERNATING, objects=[ALTERNATING, EIG_ITERATION],
                               doc='Update rule for the shared bases')
    seed = param.Integer(default=0, doc='Seed for the random completion of rank-deficient initial bases')
    normalize = param.Boolean(default=True, doc='Scale every adapter product to unit Frobenius norm first')
    rescale_sigmas = param.Boolean(default=True,
                                   doc='Diagonal mode: rescale so sum_i ||Sigma_i||_F^2 = 1, folding the scale into U')

    # PROPERTIES
    @property
    def iteration_budget(self) -> int:
        """
        Gets the effective iteration cap

        :return: max_iters when set, otherwise the default of the chosen algorithm
        """
        if self.max_iters is not None:
            return self.max_iters
        return DEFAULT_ITERATIONS[self.algorithm]

    # ACCESSORS
    def check(self, d_a: int, d_b: int) -> None:
        """
        Checks the options against a layer shape

        :param d_a: Layer input dimension
        :param d_b: Layer output dimension
        :exception ValueError: rank exceeds min(d_A, d_B) or eigenvalue iteration is asked for diagonal Sigmas
        :return: None
        """
        if self.rank > min(d_a, d_b):
            raise ValueError(f'rank {self.rank} exceeds min(d_A, d_B) = {min(d_a, d_b)}')
        if self.algorithm == EIG_ITERATION and self.mode != FULL:
            raise ValueError('eigenvalue iteration is defined for full Sigmas only')

    def copy(self, **overrides) -> 'SolveOptions':
        """
        Copy with some fields replaced

        :param overrides: Field values to change
        :return: New SolveOptions
        """
        values = self.describe()
        values.update(overrides)
        return SolveOptions(**values)

    def describe(self) -> Dict[str, object]:
        """Field values without param's generated name, for reports"""
        return {name: value for name, value in self.param.values().items() if name != 'name'}


@dataclass(frozen=True)
class SolveReport:
    """Trace of one solve: objective after every iteration and the stopping state"""

    objective_trace: Tuple[float, ...]
    iterations_run: int
    converged: bool
    final_subspace_delta: float
    norms: Dict[str, float] = field(default_factory=dict)
    normalized: bool = False

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float('nan')
