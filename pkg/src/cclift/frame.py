"""Involutivity certificates, maximal sub-frames and the frame metric.

All routines work with the ``n x q`` matrix ``T = [Y_1(x), ..., Y_q(x)]``.
Its numerical rank ``p`` may be smaller than ``n`` (lower-dimensional
orbits), so range solves use a truncated SVD rather than the full-row-rank
pseudoinverse of :mod:`cclift.linalg`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy.linalg import qr

from .errors import NotInRange, RankZero
from .fields import Frame, lie_bracket

__all__ = [
    "PairCoefficients",
    "InvolutivityReport",
    "MaximalFrame",
    "check_involutivity",
    "maximal_frame",
    "numerical_rank",
    "range_solve",
    "subunit_norm",
    "frame_metric_inner",
]

EXHAUSTIVE_LIMIT = 100_000


def numerical_rank(T: np.ndarray, rank_tol: float = 1e-9) -> int:
    s = np.linalg.svd(np.atleast_2d(T), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def range_solve(T: np.ndarray, z: np.ndarray, rank_tol: float = 1e-9):
    """Least-norm ``xi`` minimizing ``|T xi - z|`` on the numerical range of ``T``.

    Returns ``(xi, residual, rank)``.  For full row rank this is ``T^+ z``.
    """
    T = np.atleast_2d(np.asarray(T, dtype=float))
    z = np.asarray(z, dtype=float)
    U, s, Vt = np.linalg.svd(T, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(T.shape[1]), float(np.linalg.norm(z)), 0
    p = int(np.sum(s > rank_tol * s[0]))
    xi = Vt[:p].T @ ((U[:, :p].T @ z) / s[:p])
    return xi, float(np.linalg.norm(T @ xi - z)), p


# --------------------------------------------------------------------------- #
# involutivity
# --------------------------------------------------------------------------- #

@dataclass
class PairCoefficients:
    """Samples of ``c_{i,j}`` with ``[Y_i, Y_j](x) = sum_k c^k(x) Y_k(x)``.

    ``coeffs`` holds the reported representative at every sample: the
    least-norm correction of the best constant fit ``constant``.  Where the
    constant fit solves the relation everywhere the representative is that
    constant.  ``least_norm`` keeps the plain pointwise least-norm solutions.
    """

    i: int
    j: int
    coeffs: np.ndarray
    least_norm: np.ndarray
    residuals: np.ndarray
    constant: np.ndarray
    constant_residual: float

    @property
    def variance(self) -> float:
        return float(np.max(np.var(self.coeffs, axis=0)))

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.coeffs)))


@dataclass
class InvolutivityReport:
    points: np.ndarray
    pairs: list[PairCoefficients]
    ranks: np.ndarray
    scale: float
    tol: float = 1e-6

    @property
    def max_residual(self) -> float:
        return max((float(np.max(p.residuals)) for p in self.pairs), default=0.0)

    @property
    def C1_hat(self) -> float:
        return max((p.sup for p in self.pairs), default=0.0)

    @property
    def involutive(self) -> bool:
        return self.max_residual <= self.tol * self.scale

    @property
    def max_variance(self) -> float:
        return max((p.variance for p in self.pairs), default=0.0)

    @property
    def constant_coefficients(self) -> bool:
        return all(p.constant_residual <= self.tol * self.scale for p in self.pairs)

    @property
    def rank_varies(self) -> bool:
        return bool(np.unique(self.ranks).size > 1)

    def records(self):
        """Rows ``(point, i, j, coefficient vector, residual)``, one per sample and pair."""
        for pc in self.pairs:
            for x, c, r in zip(self.points, pc.coeffs, pc.residuals):
                yield x, pc.i, pc.j, c, r


def check_involutivity(
    frame: Frame,
    sample_points,
    rank_tol: float = 1e-9,
    pairs=None,
    tol: float = 1e-6,
) -> InvolutivityReport:
    """Express the brackets ``[Y_i, Y_j]`` in the frame at every sample point.

    ``pairs`` (0-based ``(i, j)``) defaults to all ``i < j``.  Pointwise
    solutions are least-norm on the numerical range of the frame matrix.  A
    constant vector fitting all samples at once is computed as well; the
    reported coefficients are its pointwise least-norm corrections, so an
    exactly constant relation is reported as constant even where the frame
    matrix has a point-dependent kernel.
    """
    X = np.atleast_2d(np.asarray(sample_points, dtype=float))
    S = X.shape[0]
    T = frame.values(X)  # (S, n, q)
    n, q = frame.dim, frame.q
    scale = max(1.0, float(np.max(np.abs(T))))
    ranks = np.array([numerical_rank(Ti, rank_tol) for Ti in T])
    if pairs is None:
        pairs = [(i, j) for i in range(q) for j in range(i + 1, q)]
    # pseudoinverse factors per sample, reused across pairs
    factors = []
    for Ti in T:
        U, s, Vt = np.linalg.svd(Ti, full_matrices=False)
        p = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
        factors.append((U[:, :p], s[:p], Vt[:p]))
    stacked = T.reshape(S * n, q)
    out = []
    for i, j in pairs:
        Z = lie_bracket(frame.fields[i], frame.fields[j]).eval_batch(X)
        ln = np.empty((S, q))
        for k, (U, s, Vt) in enumerate(factors):
            ln[k] = Vt.T @ ((U.T @ Z[k]) / s)
        cbar, *_ = np.linalg.lstsq(stacked, Z.reshape(-1), rcond=rank_tol)
        const_res = float(np.max(np.linalg.norm(np.einsum("snq,q->sn", T, cbar) - Z, axis=1)))
        corr = np.empty((S, q))
        for k, (U, s, Vt) in enumerate(factors):
            r = Z[k] - T[k] @ cbar
            corr[k] = cbar + Vt.T @ ((U.T @ r) / s)
        resid = np.linalg.norm(np.einsum("snq,sq->sn", T, corr) - Z, axis=1)
        out.append(
            PairCoefficients(
                i=i, j=j, coeffs=corr, least_norm=ln, residuals=resid, constant=cbar, constant_residual=const_res
            )
        )
    return InvolutivityReport(points=X, pairs=out, ranks=ranks, scale=scale, tol=tol)


# --------------------------------------------------------------------------- #
# maximal frames
# --------------------------------------------------------------------------- #

@dataclass
class MaximalFrame:
    """A sub-frame ``Y_I(x)`` of maximal wedge norm.

    ``indices`` are 0-based; ``coeffs[k]`` holds ``b_k`` with
    ``Y_k(x) = sum_a b_k^a Y_{I_a}(x)``.
    """

    x: np.ndarray
    p: int
    indices: tuple[int, ...]
    wedge_norm: float
    coeffs: np.ndarray
    exhaustive: bool = True
    reconstruction_error: float = field(default=0.0)

    @property
    def I(self) -> tuple[int, ...]:
        """1-based multi-index."""
        return tuple(i + 1 for i in self.indices)

    @property
    def max_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0


def _gram_volumes(G: np.ndarray, subsets: np.ndarray) -> np.ndarray:
    """``|Y_I|`` for every row of ``subsets`` from the Gram matrix (Cauchy-Binet)."""
    sub = G[subsets[:, :, None], subsets[:, None, :]]
    return np.sqrt(np.maximum(np.linalg.det(sub), 0.0))


def maximal_frame(frame_or_values, x=None, rank_tol: float = 1e-9, tie_tol: float = 1e-12) -> MaximalFrame:
    """Choose ``I`` maximizing ``|Y_{i_1} ^ ... ^ Y_{i_p}(x)|``.

    ``p`` is the numerical rank of the frame matrix.  The search is
    exhaustive over all ``C(q, p)`` subsets up to 1e5 of them and falls back
    to column-pivoted QR beyond that.  Near-ties (relative ``tie_tol``) go to
    the lexicographically smallest subset.  By maximality
    ``|b_k^a| <= 1`` for an exhaustive search.
    """
    if isinstance(frame_or_values, Frame):
        xv = np.asarray(x, dtype=float)
        T = frame_or_values.values(xv)
    else:
        T = np.atleast_2d(np.asarray(frame_or_values, dtype=float))
        xv = np.asarray(x, dtype=float) if x is not None else np.full(T.shape[0], np.nan)
    n, q = T.shape
    p = numerical_rank(T, rank_tol)
    if p == 0:
        raise RankZero(f"all frame fields vanish at {xv}")
    exhaustive = comb(q, p) <= EXHAUSTIVE_LIMIT
    if exhaustive:
        subsets = np.array(list(combinations(range(q), p)), dtype=int)
        vols = _gram_volumes(T.T @ T, subsets)
        best = float(vols.max())
        pick = int(np.flatnonzero(vols >= best * (1.0 - tie_tol))[0])
        I = tuple(int(i) for i in subsets[pick])
        wedge = float(vols[pick])
    else:
        _, _, piv = qr(T, pivoting=True, mode="economic")
        I = tuple(sorted(int(i) for i in piv[:p]))
        wedge = float(_gram_volumes(T.T @ T, np.array([I]))[0])
    TI = T[:, list(I)]
    B, *_ = np.linalg.lstsq(TI, T, rcond=None)
    recon = float(np.max(np.abs(TI @ B - T)))
    return MaximalFrame(
        x=xv, p=p, indices=I, wedge_norm=wedge, coeffs=B.T.copy(), exhaustive=exhaustive, reconstruction_error=recon
    )


# --------------------------------------------------------------------------- #
# frame metric
# --------------------------------------------------------------------------- #

def subunit_norm(frame_values, Z, range_tol: float = 1e-9, rank_tol: float = 1e-9) -> float:
    """``min{|xi| : sum_j Y_j xi_j = Z}``; ``inf`` when ``Z`` is outside the range."""
    Z = np.asarray(Z, dtype=float)
    xi, res, _ = range_solve(frame_values, Z, rank_tol)
    if res > range_tol * max(1.0, float(np.linalg.norm(Z))):
        return float("inf")
    return float(np.linalg.norm(xi))


def frame_metric_inner(frame_values, v, w, range_tol: float = 1e-9, rank_tol: float = 1e-9) -> float:
    """``g(v, w) = <T^+ v, T^+ w>`` for tangent vectors in the range of ``T``."""
    out = []
    for z in (v, w):
        z = np.asarray(z, dtype=float)
        xi, res, _ = range_solve(frame_values, z, rank_tol)
        if res > range_tol * max(1.0, float(np.linalg.norm(z))):
            raise NotInRange(f"vector {z} is not in the span of the frame (residual {res:.3e})")
        out.append(xi)
    return float(out[0] @ out[1])
