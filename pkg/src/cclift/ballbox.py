"""Desk-scale checks of ``E_x(B_Euc(0, eps)) ⊇ B_rho(x, delta)``.

Targets in the CC ball are endpoints of subunit paths ``gamma' = sum_j b_j
Y_j(gamma)`` with piecewise-constant ``|b| <= 1`` and duration ``T < delta``,
so ``T`` bounds ``rho(x, target)``.  Each target is then reached through
``E_x`` by lifting the generating path through ``h -> E_x(h)`` from
``h = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import BlowUp, StepBudgetExceeded
from .fields import Frame
from .flow import EMap, homogeneous_norm
from .frame import numerical_rank
from .integrate import DEFAULT_CONFIG, IntegratorConfig, dopri5
from .lifting import BLOW_UP, COMPLETED, LEFT_DOMAIN, RANK_DEFICIENT, Submersion, lift_batch

__all__ = [
    "CCSamples",
    "SolveOutcome",
    "TargetRecord",
    "BallBoxReport",
    "subunit_paths",
    "sample_cc_ball",
    "e_map_submersion",
    "solve_e_map",
    "solve_e_map_batch",
    "ball_box_verify",
    "ball_box_verify_many",
    "calibrate_delta",
]

RESIDUAL_TOL = 1e-6


@dataclass
class CCSamples:
    """Subunit paths from a base point, sampled on a normalized grid ``s in [0, 1]``.

    ``path`` and ``velocity`` have shape ``(N+1, B, n)``; ``velocity`` is
    ``d gamma / ds = T * sum_j b_j Y_j``.
    """

    x: np.ndarray
    targets: np.ndarray
    lengths: np.ndarray
    controls: np.ndarray
    s: np.ndarray
    path: np.ndarray
    velocity: np.ndarray

    def __len__(self) -> int:
        return self.targets.shape[0]

    def __iter__(self):
        return iter(zip(self.targets, self.lengths))

    def subset(self, rows) -> "CCSamples":
        rows = np.asarray(rows)
        return CCSamples(
            self.x,
            self.targets[rows],
            self.lengths[rows],
            self.controls[rows],
            self.s,
            self.path[:, rows],
            self.velocity[:, rows],
        )


def subunit_paths(
    frame: Frame,
    x,
    controls,
    durations,
    substeps: int = 4,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> CCSamples:
    """Integrate ``gamma' = sum_j b_j Y_j(gamma)`` for a batch of controls.

    ``controls`` has shape ``(B, K, q)``: ``K`` constant pieces of equal
    length covering ``[0, T_b]``.  Each piece is resolved on ``substeps``
    grid intervals; integration never crosses a switching time.
    """
    x = np.asarray(x, dtype=float)
    C = np.asarray(controls, dtype=float)
    if C.ndim == 2:
        C = C[None]
    B, K, q = C.shape
    T = np.broadcast_to(np.asarray(durations, dtype=float), (B,)).copy()
    n = frame.dim
    M = K * substeps
    s = np.linspace(0.0, 1.0, M + 1)
    path = np.empty((M + 1, B, n))
    vel = np.empty((M + 1, B, n))
    y = np.tile(x, (B, 1))
    path[0] = y

    def velocity(y, b):
        return T[:, None] * np.einsum("bnq,bq->bn", frame.values(y), b)

    for k in range(K):
        b = C[:, k, :]
        vel[k * substeps] = velocity(y, b)
        for j in range(substeps):
            i = k * substeps + j
            if np.any(T * np.any(b != 0.0, axis=1)):
                y = dopri5(lambda _, z, b=b: velocity(z, b), s[i], y, s[i + 1], cfg).y
            path[i + 1] = y
            if j + 1 < substeps:
                vel[i + 1] = velocity(y, b)
    vel[M] = velocity(y, C[:, -1, :])
    return CCSamples(x=x, targets=y.copy(), lengths=T, controls=C, s=s, path=path, velocity=vel)


def sample_cc_ball(
    frame: Frame,
    x,
    delta: float,
    count: int,
    seed: int = 0,
    pieces: int = 3,
    substeps: int = 4,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> CCSamples:
    """Quasi-random subunit paths of duration ``T < delta`` from ``x``.

    Each of the ``pieces`` controls is a unit vector in ``R^q`` (all frame
    fields, brackets included).  Durations are spread over
    ``[0.2 delta, delta)``.  Iterating over the result yields
    ``(target, length_bound)`` pairs.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    q = frame.q
    normals = qmc.MultivariateNormalQMC(np.zeros(q * pieces), engine=qmc.Halton(q * pieces, seed=seed)).random(count)
    b = normals.reshape(count, pieces, q)
    b /= np.maximum(np.linalg.norm(b, axis=2, keepdims=True), 1e-300)
    u = qmc.Halton(1, scramble=True, seed=seed).random(count)[:, 0]
    T = delta * (0.2 + 0.8 * u) * (1.0 - 1e-12)
    return subunit_paths(frame, x, b, T, substeps, cfg)


# --------------------------------------------------------------------------- #
# solving E_x(h) = target
# --------------------------------------------------------------------------- #

def e_map_submersion(frame: Frame, x, epsilon: float = np.inf, cfg: IntegratorConfig = DEFAULT_CONFIG, rank=None):
    """``h -> E_x(h)`` as a :class:`Submersion` on ``|h| < epsilon``.

    ``x`` may hold one base point per batch row (shape ``(B, n)``).  Rows
    whose flows blow up come back as ``nan``.  ``rank`` below ``n`` switches
    to solves on the orbit through ``x``.
    """
    emap = EMap(frame, cfg)
    X0 = np.atleast_2d(np.asarray(x, dtype=float))

    def func_jac(H, rows):
        H = np.atleast_2d(H)
        base = X0[0] if X0.shape[0] == 1 else X0[rows]
        try:
            return emap.evaluate(base, H, jacobian=True)
        except (BlowUp, StepBudgetExceeded):
            base = np.broadcast_to(base, (H.shape[0], frame.dim))
            F = np.full((H.shape[0], frame.dim), np.nan)
            J = np.full((H.shape[0], frame.dim, frame.q), np.nan)
            for b in range(H.shape[0]):
                try:
                    Fb, Jb = emap.evaluate(base[b], H[b : b + 1], jacobian=True)
                    F[b], J[b] = Fb[0], Jb[0]
                except (BlowUp, StepBudgetExceeded):
                    pass
            return F, J

    return Submersion(
        frame.q,
        frame.dim,
        func=lambda H: func_jac(H, np.arange(np.atleast_2d(H).shape[0]))[0],
        jac=lambda H: func_jac(H, np.arange(np.atleast_2d(H).shape[0]))[1],
        center=np.zeros(frame.q),
        radius=epsilon,
        name="E_x",
        func_jac=func_jac,
        rank=rank,
        row_dependent=True,
    )


@dataclass
class SolveOutcome:
    h: np.ndarray | None
    residual: float
    h_norm: float
    reason: str = COMPLETED

    @property
    def ok(self) -> bool:
        return self.h is not None


_REASONS = {LEFT_DOMAIN: "LeftBall", RANK_DEFICIENT: "RankDeficient", BLOW_UP: "BlowUp"}


def solve_e_map_batch(
    frame: Frame,
    x,
    samples: CCSamples,
    epsilon: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    rank: int | None = None,
    max_newton: int = 12,
) -> list[SolveOutcome]:
    """Solve ``E_x(h) = target`` for every sampled target.

    ``x`` is a single base point or one per target (shape ``(B, n)``).

    The generating path is lifted through ``h -> E_x(h)`` with an explicit
    predictor and Newton corrections on the sampling grid.  A solution is
    accepted when ``|h| < epsilon`` and the residual is at most 1e-6.
    """
    f = e_map_submersion(frame, x, epsilon, cfg, rank)
    B = len(samples)
    theta, flags, exit_t, _, _ = lift_batch(
        f,
        samples.s,
        samples.path,
        samples.velocity,
        np.zeros((B, frame.q)),
        cfg,
        predictor="euler",
        max_newton=max_newton,
    )
    hs = theta[-1]
    done = np.flatnonzero(flags == COMPLETED)
    F = np.full((B, frame.dim), np.nan)
    if done.size:
        F[done] = f.evaluate(hs[done], done)[0]
    out = []
    for b in range(B):
        if flags[b] != COMPLETED:
            out.append(SolveOutcome(None, float("nan"), float("nan"), _REASONS.get(flags[b], str(flags[b]))))
            continue
        h = hs[b]
        res = float(np.linalg.norm(F[b] - samples.targets[b]))
        hn = float(np.linalg.norm(h))
        if not hn < epsilon:
            out.append(SolveOutcome(None, res, hn, "LeftBall"))
        elif not res <= RESIDUAL_TOL:
            out.append(SolveOutcome(None, res, hn, "Residual"))
        else:
            out.append(SolveOutcome(h, res, hn))
    return out


def solve_e_map(frame: Frame, x, target, epsilon: float, cfg: IntegratorConfig = DEFAULT_CONFIG, trace=None, rank=None):
    """Solve ``E_x(h) = target`` with ``|h| < epsilon``.

    ``trace`` is a :class:`CCSamples` holding the generating path of this
    single target; without it the straight segment from ``x`` is lifted.
    """
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    if trace is None:
        s = np.linspace(0.0, 1.0, 9)
        path = x[None, None, :] + s[:, None, None] * (target - x)[None, None, :]
        vel = np.broadcast_to((target - x)[None, None, :], path.shape).copy()
        trace = CCSamples(x, target[None, :], np.array([np.nan]), np.zeros((1, 0, frame.q)), s, path, vel)
    return solve_e_map_batch(frame, x, trace, epsilon, cfg, rank)[0]


# --------------------------------------------------------------------------- #
# verification
# --------------------------------------------------------------------------- #

@dataclass
class TargetRecord:
    target: np.ndarray
    length_bound: float
    h: np.ndarray | None
    h_norm: float
    residual: float
    reason: str
    homogeneous_norm: float = float("nan")


@dataclass
class BallBoxReport:
    x: np.ndarray
    epsilon: float
    delta: float
    targets: list[TargetRecord] = field(default_factory=list)
    rank: int = 0

    @property
    def success_rate(self) -> float:
        if not self.targets:
            return 1.0
        return sum(r.h is not None for r in self.targets) / len(self.targets)

    @property
    def passed(self) -> bool:
        return self.success_rate == 1.0

    @property
    def max_h_norm(self) -> float:
        vals = [r.h_norm for r in self.targets if r.h is not None]
        return max(vals, default=0.0)

    @property
    def max_residual(self) -> float:
        vals = [r.residual for r in self.targets if r.h is not None]
        return max(vals, default=0.0)


def _report(x, epsilon, delta, rank, samples, outcomes, degrees) -> BallBoxReport:
    report = BallBoxReport(x=x, epsilon=epsilon, delta=delta, rank=rank)
    for (target, length), o in zip(samples, outcomes):
        report.targets.append(
            TargetRecord(
                target=target,
                length_bound=float(length),
                h=o.h,
                h_norm=o.h_norm,
                residual=o.residual,
                reason=o.reason,
                homogeneous_norm=homogeneous_norm(o.h, degrees) if o.h is not None else float("nan"),
            )
        )
    return report


def _frame_rank(frame, x, orbit):
    p = numerical_rank(frame.values(x))
    if p < frame.dim and not orbit:
        raise ValueError(f"frame has rank {p} < {frame.dim} at {x}; pass orbit=True for lower-dimensional orbits")
    return p


def ball_box_verify(
    frame: Frame,
    x,
    epsilon: float,
    delta: float,
    count: int = 100,
    seed: int = 0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    orbit: bool = False,
    samples: CCSamples | None = None,
) -> BallBoxReport:
    """Sample ``count`` targets in the CC ball of radius ``delta`` and solve each.

    The frame must span ``R^n`` at ``x``; with ``orbit=True`` a lower rank is
    accepted and the solves run on the orbit through ``x`` (residuals are
    measured in the ambient space).
    """
    x = np.asarray(x, dtype=float)
    p = _frame_rank(frame, x, orbit)
    if samples is None:
        samples = sample_cc_ball(frame, x, delta, count, seed, cfg=cfg)
    outcomes = solve_e_map_batch(frame, x, samples, epsilon, cfg, rank=p if p < frame.dim else None)
    return _report(x, epsilon, delta, p, samples, outcomes, frame.degrees)


def ball_box_verify_many(
    frame: Frame,
    points,
    epsilon: float,
    delta: float,
    count: int = 100,
    seed: int = 0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    orbit: bool = False,
) -> list[BallBoxReport]:
    """:func:`ball_box_verify` at several base points with the same ``(epsilon, delta)``.

    Targets from all base points are solved in one batch (rows grouped by
    frame rank), which is much cheaper than separate runs.  Each base point
    gets the same ``count`` and ``seed``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ranks = [_frame_rank(frame, x, orbit) for x in points]
    per_point = [sample_cc_ball(frame, x, delta, count, seed, cfg=cfg) for x in points]
    allsamp = CCSamples(
        x=points[0],
        targets=np.concatenate([c.targets for c in per_point]),
        lengths=np.concatenate([c.lengths for c in per_point]),
        controls=np.concatenate([c.controls for c in per_point]),
        s=per_point[0].s,
        path=np.concatenate([c.path for c in per_point], axis=1),
        velocity=np.concatenate([c.velocity for c in per_point], axis=1),
    )
    bases = np.repeat(points, count, axis=0)
    row_rank = np.repeat(ranks, count)
    outcomes: list = [None] * len(bases)
    for p in sorted(set(ranks)):
        rows = np.flatnonzero(row_rank == p)
        res = solve_e_map_batch(frame, bases[rows], allsamp.subset(rows), epsilon, cfg, rank=p if p < frame.dim else None)
        for r, o in zip(rows, res):
            outcomes[r] = o
    return [
        _report(x, epsilon, delta, p, c, outcomes[k * count : (k + 1) * count], frame.degrees)
        for k, (x, p, c) in enumerate(zip(points, ranks, per_point))
    ]


def calibrate_delta(
    frame: Frame,
    x,
    epsilon: float,
    count: int = 100,
    seed: int = 0,
    lo: float = 0.0,
    hi: float = 1.0,
    iterations: int = 8,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    orbit: bool = False,
) -> float:
    """Largest ``delta`` in ``[lo, hi]`` (to bisection width) for which verification passes at ``x``."""
    if ball_box_verify(frame, x, epsilon, hi, count, seed, cfg, orbit).passed:
        return hi
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if ball_box_verify(frame, x, epsilon, mid, count, seed, cfg, orbit).passed:
            lo = mid
        else:
            hi = mid
    return lo
