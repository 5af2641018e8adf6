import logging
import numpy as np
import scipy.linalg
from typing import Optional, Tuple

from LoraJD.AdapterStore.CompressedCollection import CompressedCollection, CompressedGroup, single_group_collection
from LoraJD.AdapterStore.LoraAdapter import AdapterCollection
from LoraJD.AdapterStore.Normalization import normalize_collection
from LoraJD.AdapterStore.Sigma import FULL
from LoraJD.Errors import ShapeMismatchError
from LoraJD.JointDiagonalization.EigIteration import eig_iteration_step
from LoraJD.JointDiagonalization.JDDiag import diag_objective, diag_sigmas, jd_diag_step, solve_sigmas
from LoraJD.JointDiagonalization.JDFull import full_objective, full_sigmas, jd_full_step
from LoraJD.JointDiagonalization.LinearAlgebra import (fix_signs, product_core, random_orthonormal,
                                                       subspace_delta)
from LoraJD.JointDiagonalization.SolveOptions import EIG_ITERATION, SolveOptions, SolveReport


logger = logging.getLogger(__name__)

Bases = Tuple[np.ndarray, np.ndarray]


def _padded(basis: np.ndarray, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Fills a basis with fewer than rank columns using seeded random orthonormal columns"""
    missing = rank - basis.shape[1]
    if missing <= 0:
        return basis[:, :rank]
    filler = random_orthonormal(basis.shape[0], missing, rng, against=basis)
    return np.hstack([basis, filler])


def _leading_columns(w: np.ndarray, rank: int) -> np.ndarray:
    """Left singular vectors of w for singular values above round-off, at most rank of them"""
    if w.size == 0 or not np.any(w):
        return np.zeros((w.shape[0], 0))
    u, s, _ = scipy.linalg.svd(w, full_matrices=False)
    tolerance = max(w.shape) * np.finfo(float).eps * s[0]
    kept = int(min(rank, np.count_nonzero(s > tolerance)))
    return fix_signs(u[:, :kept])


def initial_bases(adapters: AdapterCollection, rank: int, seed: int = 0) -> Bases:
    """
    Starting bases for a solve.

    A single adapter starts from its own rank-r truncated SVD. Several adapters start from the leading
    left singular vectors of [B_1, ..., B_n] and the leading right singular vectors of [A_1; ...; A_n].
    Rank-deficient stacks are topped up with random orthonormal columns drawn from seed.

    :param adapters: Collection being compressed
    :param rank: Number of columns r
    :param seed: Seed of the random completion
    :return: Tuple (U, V) of orthonormal bases
    """
    rng = np.random.default_rng(seed)
    if len(adapters) == 1:
        adapter = adapters[0]
        q_b, core, q_a = product_core(adapter.b, adapter.a)
        left, values, right_t = scipy.linalg.svd(core)
        kept = int(min(rank, np.count_nonzero(values > 0)))
        u = fix_signs(q_b @ left[:, :kept])
        v = fix_signs(q_a @ right_t[:kept].T)
    else:
        u = _leading_columns(adapters.stacked_b(), rank)
        v = _leading_columns(adapters.stacked_a().T, rank)
    return _padded(u, rank, rng), _padded(v, rank, rng)


def _check_init(adapters: AdapterCollection, rank: int, init: Bases) -> Bases:
    u, v = (np.array(basis, dtype=np.float64) for basis in init)
    if u.shape != (adapters.d_b, rank) or v.shape != (adapters.d_a, rank):
        raise ShapeMismatchError(f'initial bases {u.shape}, {v.shape} do not match rank {rank} on a '
                                 f'{adapters.d_b}x{adapters.d_a} layer')
    return u, v


def solve(adapters: AdapterCollection, options: SolveOptions,
          init: Optional[Bases] = None) -> Tuple[CompressedGroup, SolveReport]:
    """
    Jointly compresses a collection into shared bases U, V and one Sigma per adapter.

    Iterates the step of the chosen mode and algorithm until the budget runs out or both bases move
    less than the tolerance. Full mode recomputes every Sigma at exit. When options.normalize is set the
    Sigmas are on the unit-norm scale and the report carries the norms needed to undo it.

    :param adapters: Collection to compress, n >= 1
    :param options: Solve configuration
    :param init: Warm-start bases (U, V); computed by initial_bases when None
    :exception ValueError: empty collection, rank above min(d_A, d_B) or eigenvalue iteration in diagonal mode
    :exception SolverError: a diagonal-mode normal matrix stays singular after regularization
    :return: Tuple (CompressedGroup, SolveReport)
    """
    if len(adapters) == 0:
        raise ValueError('cannot compress an empty collection')
    options.check(adapters.d_a, adapters.d_b)

    working = normalize_collection(adapters) if options.normalize else adapters
    if init is None:
        u, v = initial_bases(working, options.rank, options.seed)
    else:
        u, v = _check_init(working, options.rank, init)

    full = options.mode == FULL
    scalings = None if full else solve_sigmas(working, u, v)
    trace = []
    delta = float('inf')
    converged = False
    iterations = 0
    for iterations in range(1, options.iteration_budget + 1):
        if options.algorithm == EIG_ITERATION:
            u_next, v_next = eig_iteration_step(working, u, v)
        elif full:
            u_next, v_next = jd_full_step(working, u, v)
        else:
            u_next, v_next, scalings = jd_diag_step(working, u, v, scalings, options.rescale_sigmas)
        delta = max(subspace_delta(u, u_next), subspace_delta(v, v_next))
        u, v = u_next, v_next
        trace.append(full_objective(working, u, v) if full else diag_objective(working, u, v, scalings))
        logger.debug('iteration %d: objective %.6e, subspace delta %.3e', iterations, trace[-1], delta)
        if delta < options.tolerance:
            converged = True
            break

    sigmas = full_sigmas(working, u, v) if full else diag_sigmas(working, scalings)
    group = CompressedGroup(u, v, sigmas, options.mode)
    logger.info('%s solve (%s) of %d adapters at rank %d: %d iterations, objective %.6e, converged=%s',
                options.mode, options.algorithm, len(adapters), options.rank, iterations, trace[-1], converged)
    report = SolveReport(objective_trace=tuple(trace), iterations_run=iterations, converged=converged,
                         final_subspace_delta=float(delta), norms=working.norms, normalized=options.normalize)
    return group, report


def solve_collection(adapters: AdapterCollection, options: SolveOptions,
                     init: Optional[Bases] = None) -> Tuple[CompressedCollection, SolveReport]:
    """Runs solve and wraps the group into a single-group CompressedCollection"""
    group, report = solve(adapters, options, init=init)
    return single_group_collection(group, norms=report.norms, normalized=report.normalized), report
