import param
from dataclasses import dataclass
from typing import Tuple

from LoraJD.JointDiagonalization.SolveOptions import SolveOptions


class ClusterOptions(param.Parameterized):
    """Configuration of a clustered compression: k groups, each solved with per_cluster"""

    k = param.Integer(default=2, bounds=(1, None), doc='Number of clusters; at most the number of adapters')
    per_cluster = param.ClassSelector(class_=SolveOptions, default=SolveOptions(), instantiate=True,
                                      doc='Options of every per-cluster solve')
    max_outer_iters = param.Integer(default=20, bounds=(1, None), doc='Cap on assignment rounds')
    kmeans_iters = param.Integer(default=50, bounds=(1, None), doc='Lloyd iterations of the initial k-means')
    seed = param.Integer(default=0, doc='Seed of the k-means++ seeding')
    threads = param.Integer(default=1, bounds=(1, None), doc='Per-cluster solves run concurrently on this many threads')

    def check(self, adapter_count: int) -> None:
        if self.k > adapter_count:
            raise ValueError(f'k = {self.k} exceeds the number of adapters ({adapter_count})')

    def copy(self, **overrides) -> 'ClusterOptions':
        values = {name: value for name, value in self.param.values().items() if name != 'name'}
        values.update(overrides)
        return ClusterOptions(**values)


@dataclass(frozen=True)
class ClusterReport:
    """Outer-loop trace of a clustered compression"""

    outer_iterations: int
    total_objective_trace: Tuple[float, ...]
    assignment_history_hash: str
    converged: bool
    empty_cluster_repairs: int = 0

    @property
    def final_objective(self) -> float:
        return self.total_objective_trace[-1] if self.total_objective_trace else float('nan')
