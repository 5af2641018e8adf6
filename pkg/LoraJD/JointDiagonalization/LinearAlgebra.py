"""Small dense kernels shared by the solvers, metrics and storage layers.

Everything here works on thin factors so no d_B x d_A product is ever formed.
"""
import numpy as np
import scipy.linalg
from typing import Optional, Tuple


ORTHONORMAL_TOLERANCE = 1e-8


def thin_r(x: np.ndarray) -> np.ndarray:
    """
    Triangular factor of the reduced QR factorization of x.

    :param x: Matrix of shape (m, k)
    :return: Matrix of shape (min(m, k), k)
    """
    if x.shape[1] == 0 or x.shape[0] == 0:
        return np.zeros((min(x.shape), x.shape[1]))
    return np.linalg.qr(x, mode='r')


def factored_sq_norm(left: np.ndarray, right: np.ndarray) -> float:
    """
    Squared Frobenius norm of left @ right computed from the QR cores of both factors.

    :param left: Matrix of shape (m, k)
    :param right: Matrix of shape (k, n)
    :return: ||left @ right||_F^2
    """
    if left.shape[1] != right.shape[0]:
        raise ValueError('inner dimensions of left and right must agree')
    if left.shape[1] == 0:
        return 0.0
    core = thin_r(left) @ thin_r(right.T).T
    return float(np.sum(core * core))


def product_core(b: np.ndarray, a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Splits b @ a into q_b @ core @ q_a.T with orthonormal q_b, q_a.

    :param b: Left factor of shape (d_B, k)
    :param a: Right factor of shape (k, d_A)
    :return: Tuple (q_b, core, q_a)
    """
    q_b, r_b = scipy.linalg.qr(b, mode='economic')
    q_a, r_a = scipy.linalg.qr(a.T, mode='economic')
    return q_b, r_b @ r_a.T, q_a


def fix_signs(basis: np.ndarray) -> np.ndarray:
    """
    Flips each column so its largest-magnitude entry is positive; ties go to the lowest row.

    :param basis: Matrix whose columns are flipped
    :return: New matrix with the sign convention applied
    """
    if basis.size == 0:
        return basis.copy()
    pivots = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivots, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def complete_basis(basis: np.ndarray, rank: int) -> np.ndarray:
    """
    Extends orthonormal columns to rank columns by Gram-Schmidt against the identity columns.

    :param basis: Orthonormal matrix of shape (d, k) with k <= rank
    :param rank: Number of columns wanted
    :return: Orthonormal matrix of shape (d, rank) whose first k columns are basis
    """
    d = basis.shape[0]
    if rank > d:
        raise ValueError('rank cannot exceed the ambient dimension')
    columns = [basis[:, j] for j in range(basis.shape[1])]
    for index in range(d):
        if len(columns) >= rank:
            break
        candidate = np.zeros(d)
        candidate[index] = 1.0
        # two passes keep the new column orthogonal to working precision
        for _ in range(2):
            for column in columns:
                candidate -= (column @ candidate) * column
        norm = np.linalg.norm(candidate)
        if norm > 1e-6:
            columns.append(candidate / norm)
    if not columns:
        return np.zeros((d, 0))
    return np.column_stack(columns)


def leading_left_singular_vectors(w: np.ndarray, rank: int) -> np.ndarray:
    """
    Top-rank left singular vectors of w with deterministic completion and sign convention.

    These are the leading eigenvectors of w @ w.T, obtained without forming it.

    :param w: Matrix of shape (d, k)
    :param rank: Number of vectors wanted
    :return: Orthonormal matrix of shape (d, rank)
    """
    d = w.shape[0]
    if w.shape[1] == 0 or not np.any(w):
        return complete_basis(np.zeros((d, 0)), rank)
    u, s, _ = scipy.linalg.svd(w, full_matrices=False)
    tolerance = max(w.shape) * np.finfo(float).eps * s[0]
    kept = int(min(rank, np.count_nonzero(s > tolerance)))
    basis = fix_signs(u[:, :kept])
    if kept < rank:
        basis = complete_basis(basis, rank)
    return basis


def orthonormalize(x: np.ndarray) -> np.ndarray:
    """
    Q factor of the thin QR factorization of x; collapsed columns are replaced by completion.

    :param x: Matrix of shape (d, r)
    :return: Orthonormal matrix of shape (d, r)
    """
    d, rank = x.shape
    if rank == 0:
        return np.zeros((d, 0))
    q, r = scipy.linalg.qr(x, mode='economic')
    diagonal = np.abs(np.diag(r))
    scale = diagonal.max() if diagonal.size else 0.0
    if scale == 0.0:
        return complete_basis(np.zeros((d, 0)), rank)
    # R with a nonnegative diagonal makes Q unique
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    healthy = diagonal > 1e-12 * scale
    if np.all(healthy):
        return q
    return complete_basis(q[:, healthy], rank)


def orthonormality_error(x: np.ndarray) -> float:
    """
    Frobenius distance between x.T @ x and the identity.

    :param x: Matrix of shape (d, r)
    :return: ||x.T x - I||_F
    """
    return float(np.linalg.norm(x.T @ x - np.eye(x.shape[1])))


def is_orthonormal(x: np.ndarray, tolerance: float = ORTHONORMAL_TOLERANCE) -> bool:
    return orthonormality_error(x) <= tolerance


def subspace_delta(old: np.ndarray, new: np.ndarray) -> float:
    """
    Relative size of the part of new outside the column span of old.

    :param old: Previous basis of shape (d, r)
    :param new: Updated basis of shape (d, r)
    :return: ||new - P_old new||_F / ||new||_F, 0 when new is zero
    """
    norm = np.linalg.norm(new)
    if norm == 0.0:
        return 0.0
    q = old if is_orthonormal(old) else orthonormalize(old)
    return float(np.linalg.norm(new - q @ (q.T @ new)) / norm)


def random_orthonormal(d: int, rank: int, rng: np.random.Generator,
                       against: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Seeded random orthonormal columns, optionally orthogonal to an existing basis.

    :param d: Ambient dimension
    :param rank: Number of columns
    :param rng: numpy random generator
    :param against: Orthonormal columns the result must be orthogonal to
    :return: Matrix of shape (d, rank)
    """
    gaussian = rng.standard_normal((d, rank))
    if against is not None and against.shape[1] > 0:
        gaussian -= against @ (against.T @ gaussian)
    return orthonormalize(gaussian)


def low_rank_residual_sq(b: np.ndarray, a: np.ndarray, u: np.ndarray, sigma: np.ndarray, v: np.ndarray) -> float:
    """
    Squared Frobenius norm of b @ a - u @ sigma @ v.T without forming either product.

    The residual equals [b, -u sigma] @ [a; v.T], a product of two thin factors.

    :param b: Matrix of shape (d_B, k)
    :param a: Matrix of shape (k, d_A)
    :param u: Matrix of shape (d_B, r)
    :param sigma: Matrix of shape (r, r)
    :param v: Matrix of shape (d_A, r)
    :return: Nonnegative float
    """
    left = np.hstack([b, -(u @ sigma)])
    right = np.vstack([a, v.T])
    return factored_sq_norm(left, right)
