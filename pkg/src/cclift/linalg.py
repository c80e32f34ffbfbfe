"""Dense linear algebra for full-row-rank matrices.

Everything here works on small dense matrices (a few dozen columns at most).
The Moore-Penrose pseudoinverse of a surjective ``A`` is the right inverse that
returns least-norm preimages; it is computed from a Householder QR
factorization of ``A.T`` rather than from the normal equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, RankDeficient

__all__ = [
    "PinvResult",
    "pseudoinverse",
    "least_norm_solve",
    "pinv_op_norm_identity",
    "smallest_singular_value",
    "wedge_coordinates",
    "kernel_projector",
    "batched_least_norm",
    "batched_truncated_solve",
]


@dataclass(frozen=True)
class PinvResult:
    pinv: np.ndarray
    sigma_min: float
    op_norm_pinv: float


def _as_matrix(A) -> np.ndarray:
    A = np.array(A, dtype=float, ndmin=2)
    if A.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {A.shape}")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionMismatch(f"empty matrix of shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def default_rank_tolerance(A: np.ndarray) -> float:
    return 1e-12 * float(np.max(np.abs(A))) * A.shape[1]


def _qr_of_transpose(A: np.ndarray, rank_tol):
    rows, cols = A.shape
    if rows > cols:
        raise DimensionMismatch(f"need rows <= cols for a right inverse, got {A.shape}")
    tol = default_rank_tolerance(A) if rank_tol is None else float(rank_tol)
    Q, R = np.linalg.qr(A.T)
    # sigma_min(R) <= min |R_ii|, so a tiny diagonal entry already certifies deficiency
    dmin = float(np.min(np.abs(np.diag(R))))
    if dmin <= tol or dmin == 0.0:
        raise RankDeficient(dmin)
    return Q, R, tol


def _sigma_min_from_r(R: np.ndarray) -> float:
    """Smallest singular value of ``R`` by inverse iteration on ``R.T @ R``.

    The inverse ``(R^T R)^{-1} = R^{-1} R^{-T}`` is formed once; the iteration is
    accelerated by repeated squaring, then the Rayleigh quotient ``|R v|`` of the
    converged unit vector is returned.
    """
    p = R.shape[0]
    if p == 1:
        return abs(float(R[0, 0]))
    Rinv = solve_triangular(R, np.eye(p))
    B = Rinv @ Rinv.T
    B /= np.max(np.abs(B))
    for _ in range(64):
        B2 = B @ B
        B2 /= np.max(np.abs(B2))
        if np.max(np.abs(B2 - B)) <= 1e-15:
            B = B2
            break
        B = B2
    v = B[:, int(np.argmax(np.einsum("ij,ij->j", B, B)))]
    v = v / np.linalg.norm(v)
    for _ in range(2):
        v = Rinv @ (Rinv.T @ v)
        v /= np.linalg.norm(v)
    return float(np.linalg.norm(R @ v))


def smallest_singular_value(A, rank_tol=None) -> float:
    """``sigma_min`` of a full-row-rank matrix (``sqrt(lambda_min(A A^T))``)."""
    A = _as_matrix(A)
    _, R, _ = _qr_of_transpose(A, rank_tol)
    return _sigma_min_from_r(R)


def pseudoinverse(A, rank_tol=None) -> PinvResult:
    """Moore-Penrose pseudoinverse of a matrix with independent rows.

    Raises :class:`RankDeficient` when ``sigma_min(A) <= rank_tol`` (default
    ``1e-12 * max|A_ij| * cols``).

    >>> pseudoinverse([[1.0, 1.0]]).pinv
    array([[0.5],
           [0.5]])
    """
    A = _as_matrix(A)
    Q, R, tol = _qr_of_transpose(A, rank_tol)
    sigma = _sigma_min_from_r(R)
    if sigma <= tol:
        raise RankDeficient(sigma)
    # A = R^T Q^T  =>  A^+ = Q R^{-T}
    pinv = Q @ solve_triangular(R, np.eye(R.shape[0]), trans="T")
    return PinvResult(pinv=pinv, sigma_min=sigma, op_norm_pinv=1.0 / sigma)


def least_norm_solve(A, y, rank_tol=None) -> np.ndarray:
    """Least-norm solution of ``A x = y`` for surjective ``A``."""
    A = _as_matrix(A)
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs has length {y.shape[0]}, matrix has {A.shape[0]} rows")
    Q, R, tol = _qr_of_transpose(A, rank_tol)
    sigma = _sigma_min_from_r(R)
    if sigma <= tol:
        raise RankDeficient(sigma)
    return Q @ solve_triangular(R, y, trans="T")


def pinv_op_norm_identity(A, rank_tol=None) -> tuple[float, float]:
    """Both sides of ``|A^+|^{-1} = min_{|y|=1} |A^T y|``.

    The left side comes from the spectral norm of the computed pseudoinverse,
    the right side from inverse iteration on ``A A^T``.
    """
    A = _as_matrix(A)
    res = pseudoinverse(A, rank_tol)
    lhs = 1.0 / float(np.linalg.norm(res.pinv, 2))
    rhs = res.sigma_min
    return lhs, rhs


def kernel_projector(A, rank_tol=None) -> np.ndarray:
    """Orthogonal projector onto ``ker A`` for surjective ``A``: ``I - A^+ A``."""
    A = _as_matrix(A)
    P = pseudoinverse(A, rank_tol).pinv @ A
    return np.eye(A.shape[1]) - P


def wedge_coordinates(V) -> np.ndarray:
    """Pluecker coordinates of the columns of ``V`` (shape ``n x p``).

    Entry ``r`` is the ``p x p`` minor on the ``r``-th row subset in
    lexicographic order.
    """
    V = np.array(V, dtype=float, ndmin=2)
    n, p = V.shape
    if p > n:
        return np.zeros(0)
    rows = np.array(list(combinations(range(n), p)), dtype=int)
    return np.linalg.det(V[rows])


def batched_least_norm(J: np.ndarray, r: np.ndarray, rank_tol: float = 1e-13):
    """Least-norm solutions of a stack of surjective systems ``J[b] x = r[b]``.

    ``J`` has shape ``(B, p, q)`` and ``r`` shape ``(B, p)``. Returns ``(x, ok)``
    where ``ok[b]`` is False for (numerically) rank-deficient rows; those rows
    get ``x = 0``.
    """
    Q, R = np.linalg.qr(np.swapaxes(J, -1, -2))
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    scale = np.max(np.abs(J), axis=(-2, -1))
    ok = np.min(diag, axis=-1) > rank_tol * np.maximum(scale, 1e-300) * J.shape[-1]
    R_safe = np.where(ok[:, None, None], R, np.eye(R.shape[-1]))
    z = np.linalg.solve(np.swapaxes(R_safe, -1, -2), r[..., None])[..., 0]
    x = np.einsum("bij,bj->bi", Q, z)
    x[~ok] = 0.0
    return x, ok


def batched_truncated_solve(J: np.ndarray, r: np.ndarray, rank: int, rank_tol: float = 1e-10):
    """Least-norm solutions of ``J[b] x = r[b]`` using the top ``rank`` singular triplets.

    Used when the rows of ``J`` only span a ``rank``-dimensional space (maps
    onto a lower-dimensional orbit).  ``ok[b]`` is False when the
    ``rank``-th singular value is negligible.
    """
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    p = int(rank)
    sp = s[:, :p]
    ok = sp[:, -1] > rank_tol * np.maximum(s[:, 0], 1e-300)
    z = np.einsum("bij,bi->bj", U[:, :, :p], r) / np.where(ok[:, None], sp, 1.0)
    x = np.einsum("bji,bj->bi", Vt[:, :p, :], z)
    x[~ok] = 0.0
    return x, ok
