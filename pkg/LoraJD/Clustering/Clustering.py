"""Alternating cluster assignment and per-cluster joint diagonalization.

Cluster labels are integers 0..k-1. Members of a cluster are kept in collection order so every
per-cluster solve sees its adapters in canonical order.
"""
import hashlib
import json
import logging
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from sklearn.cluster import KMeans
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from LoraJD.AdapterStore.CompressedCollection import CLUSTERED, CompressedCollection, CompressedGroup
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection, LoraAdapter
from LoraJD.AdapterStore.Normalization import normalize_collection
from LoraJD.AdapterStore.Sigma import FULL
from LoraJD.Clustering.ClusterOptions import ClusterOptions, ClusterReport
from LoraJD.JointDiagonalization.JDDiag import solve_sigmas
from LoraJD.JointDiagonalization.LinearAlgebra import factored_sq_norm, low_rank_residual_sq
from LoraJD.JointDiagonalization.Objective import group_objective
from LoraJD.JointDiagonalization.SolveOptions import ALTERNATING, SolveOptions
from LoraJD.JointDiagonalization.Solver import solve


logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12

Assignment = Dict[str, int]


def _canonical_labels(labels: Sequence[int]) -> List[int]:
    """Renumbers labels in order of first occurrence"""
    order: Dict[int, int] = {}
    for label in labels:
        order.setdefault(int(label), len(order))
    return [order[int(label)] for label in labels]


def _fill_empty_labels(labels: np.ndarray, embeddings: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """
    Gives every missing label one point: the point farthest from its center among clusters with
    more than one member, lowest index on ties

    :param labels: k-means labels, one per adapter
    :param embeddings: Points that were clustered
    :param centers: k-means centers
    :param k: Number of labels wanted
    :return: Labels using every value in 0..k-1
    """
    labels = labels.copy()
    for missing in range(k):
        if np.any(labels == missing):
            continue
        counts = np.bincount(labels, minlength=k)
        distances = np.sum((embeddings - centers[labels]) ** 2, axis=1)
        distances[counts[labels] < 2] = -np.inf
        moved = int(np.argmax(distances))
        logger.info('k-means left cluster %d empty; reseeding it with adapter %d', missing, moved)
        labels[moved] = missing
    return labels


def init_clusters(adapters: AdapterCollection, options: ClusterOptions) -> Assignment:
    """
    Initial clustering: one shared full-mode solve, then seeded k-means++ on the flattened Sigmas

    :param adapters: Collection to cluster
    :param options: Clustering configuration; per_cluster supplies rank, normalization and seed
    :exception ValueError: k exceeds the number of adapters
    :return: Map from id to cluster label, labels numbered by first occurrence
    """
    options.check(len(adapters))
    if options.k == 1:
        return {adapter_id: 0 for adapter_id in adapters.ids}

    shared = options.per_cluster.copy(mode=FULL, algorithm=ALTERNATING)
    group, _ = solve(adapters, shared)
    embeddings = np.stack([group.sigma(adapter_id).values.ravel() for adapter_id in adapters.ids])
    kmeans = KMeans(n_clusters=options.k, init='k-means++', n_init=1, max_iter=options.kmeans_iters,
                    random_state=options.seed).fit(embeddings)
    labels = _fill_empty_labels(kmeans.labels_.astype(int), embeddings, kmeans.cluster_centers_, options.k)
    return dict(zip(adapters.ids, _canonical_labels(labels)))


def _best_error(adapter: LoraAdapter, group: CompressedGroup) -> float:
    """Error of an adapter under a group's bases with its best Sigma"""
    if group.mode == FULL:
        sigma = (group.u.T @ adapter.b) @ (adapter.a @ group.v)
    else:
        single = AdapterCollection([adapter])
        sigma = np.diag(solve_sigmas(single, group.u, group.v)[0])
    return low_rank_residual_sq(adapter.b, adapter.a, group.u, sigma, group.v)


def _costs(adapters: AdapterCollection, groups: Sequence[CompressedGroup]) -> np.ndarray:
    """
    n x k matrix whose row minimum marks the best group of each adapter.

    Full-mode groups use minus the captured energy ||U_j^T B_i A_i V_j||_F^2, which ranks groups the
    same way as the error for orthonormal bases. Diagonal groups use the error itself.
    """
    costs = np.empty((len(adapters), len(groups)))
    for i, adapter in enumerate(adapters):
        for j, group in enumerate(groups):
            if group.mode == FULL:
                costs[i, j] = -factored_sq_norm(group.u.T @ adapter.b, adapter.a @ group.v)
            else:
                costs[i, j] = _best_error(adapter, group)
    return costs


def assign_step(adapters: AdapterCollection, groups: Sequence[CompressedGroup]) -> Assignment:
    """
    Sends every adapter to the group whose bases reconstruct it best; the lowest index wins ties

    :param adapters: Adapters to assign
    :param groups: Candidate groups; only their bases and mode are used
    :return: Map from id to group index
    """
    costs = _costs(adapters, groups)
    energies = np.array([adapter.product_norm() ** 2 for adapter in adapters])
    slack = TIE_TOLERANCE * np.maximum(energies, np.finfo(float).tiny)
    best = costs.min(axis=1)
    choices = np.argmax(costs <= (best + slack)[:, None], axis=1)
    return {adapter.id: int(choice) for adapter, choice in zip(adapters, choices)}


def _members(adapters: AdapterCollection, assignment: Mapping[str, int], k: int) -> List[List[str]]:
    members: List[List[str]] = [[] for _ in range(k)]
    for adapter_id in adapters.ids:
        members[assignment[adapter_id]].append(adapter_id)
    return members


def _repair_empty(adapters: AdapterCollection, groups: Sequence[CompressedGroup],
                  assignment: Assignment, k: int) -> Tuple[Assignment, List[int]]:
    """
    Moves the worst-reconstructed adapter into every empty cluster, taken from clusters with
    at least two members

    :return: Tuple (assignment, indices of repaired clusters)
    """
    assignment = dict(assignment)
    repaired = []
    for cluster in range(k):
        members = _members(adapters, assignment, k)
        if members[cluster]:
            continue
        errors = [(_best_error(adapters[adapter_id], groups[assignment[adapter_id]])
                   if len(members[assignment[adapter_id]]) > 1 else -np.inf) for adapter_id in adapters.ids]
        worst = adapters.ids[int(np.argmax(errors))]
        logger.info('cluster %d emptied; reseeding it with adapter %r', cluster, worst)
        assignment[worst] = cluster
        repaired.append(cluster)
    return assignment, repaired


def _solve_clusters(adapters: AdapterCollection, assignment: Assignment, k: int, options: SolveOptions,
                    warm: Mapping[int, Tuple[np.ndarray, np.ndarray]], threads: int) -> List[CompressedGroup]:
    members = _members(adapters, assignment, k)

    def run(cluster: int) -> CompressedGroup:
        group, _ = solve(adapters.subset(members[cluster]), options, init=warm.get(cluster))
        return group

    if threads == 1:
        return [run(cluster) for cluster in range(k)]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(run, range(k)))


def _total_objective(adapters: AdapterCollection, groups: Sequence[CompressedGroup]) -> float:
    return float(sum(group_objective(adapters.subset(group.members), group) for group in groups))


def cluster_solve(adapters: AdapterCollection,
                  options: ClusterOptions) -> Tuple[CompressedCollection, ClusterReport]:
    """
    Clustered compression: alternate per-cluster solves with reassignment until no adapter moves.

    Adapters are normalized once up front when per_cluster.normalize is set. Later rounds warm-start
    every cluster from its previous bases; a cluster refilled after emptying restarts from its new member.

    :param adapters: Collection to compress
    :param options: Clustering configuration
    :exception ValueError: k exceeds the number of adapters or invalid per-cluster options
    :return: Tuple (CompressedCollection tagged 'clustered', ClusterReport)
    """
    options.check(len(adapters))
    options.per_cluster.check(adapters.d_a, adapters.d_b)
    k = options.k
    normalized = options.per_cluster.normalize
    working = normalize_collection(adapters) if normalized else adapters
    per_cluster = options.per_cluster.copy(normalize=False)

    assignment = init_clusters(working, options.copy(per_cluster=per_cluster))
    digest = hashlib.sha256()
    warm: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    trace: List[float] = []
    repairs = 0
    converged = False
    outer = 0
    groups: Optional[List[CompressedGroup]] = None
    for outer in range(1, options.max_outer_iters + 1):
        digest.update(json.dumps([assignment[adapter_id] for adapter_id in working.ids]).encode('utf-8'))
        groups = _solve_clusters(working, assignment, k, per_cluster, warm, options.threads)
        trace.append(_total_objective(working, groups))
        logger.info('outer iteration %d: total objective %.6e', outer, trace[-1])

        warm = {cluster: (group.u, group.v) for cluster, group in enumerate(groups)}
        updated, repaired = _repair_empty(working, groups, assign_step(working, groups), k)
        repairs += len(repaired)
        for cluster in repaired:
            warm.pop(cluster)
        if updated == assignment:
            converged = True
            break
        assignment = updated

    if not converged:
        # the last reassignment has not been solved yet
        digest.update(json.dumps([assignment[adapter_id] for adapter_id in working.ids]).encode('utf-8'))
        groups = _solve_clusters(working, assignment, k, per_cluster, warm, options.threads)
        trace.append(_total_objective(working, groups))
        logger.warning('clustering stopped after %d outer iterations without a stable assignment', outer)

    ordered = {adapter_id: assignment[adapter_id] for adapter_id in working.ids}
    collection = CompressedCollection(groups, ordered, per_cluster.mode, norms=working.norms, method=CLUSTERED,
                                      normalized=normalized)
    report = ClusterReport(outer_iterations=outer, total_objective_trace=tuple(trace),
                           assignment_history_hash=digest.hexdigest(), converged=converged,
                           empty_cluster_repairs=repairs)
    return collection, report
