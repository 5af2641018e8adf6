import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.Clustering.ClusterOptions import ClusterOptions
from LoraJD.Clustering.Clustering import cluster_solve
from LoraJD.JointDiagonalization.SolveOptions import SolveOptions
from LoraJD.JointDiagonalization.Solver import solve_collection
from LoraJD.Metrics.Reconstruction import relative_recon_error


logger = logging.getLogger(__name__)

ERROR_THRESHOLD = 0.6
SWEEP_RANK = 16
NO_CLUSTER_LIMIT = 100


@dataclass(frozen=True)
class SweepPoint:
    clusters: int
    rank: int
    mean_error: float


def recommend_rank(adapter_count: int) -> int:
    """
    Shared rank for an unclustered full-mode compression of n adapters: round(n / 2) + 7, halves rounded up

    :param adapter_count: Number of adapters n
    :return: Integer rank
    """
    return int(adapter_count / 2 + 0.5) + 7


def cluster_grid(adapter_count: int) -> List[int]:
    """Cluster counts 1, 2, 4, 8, ... below n, then n itself"""
    grid = []
    clusters = 1
    while clusters < adapter_count:
        grid.append(clusters)
        clusters *= 2
    grid.append(adapter_count)
    return grid


def sweep_clusters(adapters: AdapterCollection, options: SolveOptions, seed: int = 0, threads: int = 1,
                   grid: Optional[Sequence[int]] = None) -> List[SweepPoint]:
    """
    Mean relative reconstruction error of a clustered compression for every cluster count of the grid

    :param adapters: Probe module
    :param options: Per-cluster solve options; its rank is used for every point
    :param seed: k-means seed
    :param threads: Concurrent per-cluster solves
    :param grid: Cluster counts; cluster_grid(n) when None
    :return: One SweepPoint per cluster count
    """
    points = []
    for clusters in (cluster_grid(len(adapters)) if grid is None else grid):
        if clusters == 1:
            compressed, _ = solve_collection(adapters, options)
        else:
            compressed, _ = cluster_solve(adapters, ClusterOptions(k=clusters, per_cluster=options, seed=seed,
                                                                   threads=threads))
        _, mean_error = relative_recon_error(adapters, compressed)
        logger.info('sweep: %d clusters at rank %d, mean relative error %.4f', clusters, options.rank, mean_error)
        points.append(SweepPoint(clusters=clusters, rank=options.rank, mean_error=mean_error))
    return points


def recommend_clusters(points: Sequence[SweepPoint], threshold: float = ERROR_THRESHOLD) -> Tuple[SweepPoint, bool]:
    """
    Smallest cluster count whose mean error is under the threshold

    :param points: Sweep results in increasing cluster count
    :param threshold: Error the recommendation must stay below
    :return: Tuple (chosen point, whether it met the threshold); the best point when none does
    """
    for point in points:
        if point.mean_error < threshold:
            return point, True
    best = min(points, key=lambda point: (point.mean_error, point.clusters))
    return best, False
