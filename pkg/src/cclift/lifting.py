"""Horizontal path lifting through submersions.

Given ``f: R^q -> R^p`` with surjective differential and a target path
``gamma`` in ``R^p``, the lift solves

    theta'(t) = df(theta(t))^+ gamma'(t),    theta(0) = theta_0,

so that ``f(theta(t)) = gamma(t)`` and ``theta'`` stays orthogonal to
``ker df``.  Each grid interval is integrated (RK predictor), then the grid
point is pulled back onto the fiber by Newton steps with the same
pseudoinverse, which keeps the correction in the row space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import (
    BlowUp,
    DimensionMismatch,
    LeftDomain,
    NotInCertifiedBall,
    RankDeficient,
    StepBudgetExceeded,
)
from .integrate import DEFAULT_CONFIG, IntegratorConfig, dopri5
from .linalg import batched_least_norm, batched_truncated_solve, kernel_projector, pseudoinverse

__all__ = [
    "Submersion",
    "TargetPath",
    "LiftResult",
    "HorizontalityReport",
    "OpenMapResult",
    "horizontal_lift",
    "lift_batch",
    "verify_horizontal",
    "open_map_solve",
    "open_map_solve_batch",
    "estimate_C0",
    "named_submersion",
    "SUBMERSIONS",
]

COMPLETED = "Completed"
LEFT_DOMAIN = "LeftDomain"
RANK_DEFICIENT = "RankDeficient"
BLOW_UP = "BlowUp"


@dataclass
class Submersion:
    """A map ``R^q -> R^p`` with its Jacobian, acting on batches of rows.

    ``func(X)`` maps ``(B, q)`` to ``(B, p)`` and ``jac(X)`` returns
    ``(B, p, q)``.  The domain is the open ball ``|x - center| < radius``.
    ``func_jac`` optionally returns both at once (for maps where they share
    work).  ``rank`` marks maps whose differential has constant rank below
    ``p`` (onto a lower-dimensional orbit); solves then use that many
    singular directions.
    """

    dom_dim: int
    codom_dim: int
    func: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    center: np.ndarray | None = None
    radius: float = np.inf
    name: str = ""
    func_jac: Callable[..., tuple] | None = None
    rank: int | None = None
    row_dependent: bool = False

    def __post_init__(self):
        if self.codom_dim > self.dom_dim:
            raise DimensionMismatch(f"a submersion needs p <= q, got p={self.codom_dim}, q={self.dom_dim}")
        c = np.zeros(self.dom_dim) if self.center is None else np.asarray(self.center, dtype=float)
        if c.shape != (self.dom_dim,):
            raise DimensionMismatch("center has the wrong dimension")
        self.center = c

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.func(x.reshape(-1, self.dom_dim)).reshape(x.shape[:-1] + (self.codom_dim,))

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        J = self.jac(x.reshape(-1, self.dom_dim))
        return J.reshape(x.shape[:-1] + (self.codom_dim, self.dom_dim))

    def with_domain(self, center=None, radius=None) -> "Submersion":
        return Submersion(
            self.dom_dim,
            self.codom_dim,
            self.func,
            self.jac,
            center=self.center if center is None else center,
            radius=self.radius if radius is None else radius,
            name=self.name,
            func_jac=self.func_jac,
            rank=self.rank,
            row_dependent=self.row_dependent,
        )

    def evaluate(self, X: np.ndarray, rows=None):
        """Values and Jacobians at the rows of ``X``.

        ``rows`` are the batch indices of those rows; maps that depend on the
        row (a different base point per target) take them as a second
        argument of ``func_jac``.
        """
        if self.func_jac is not None:
            if self.row_dependent:
                return self.func_jac(X, np.arange(X.shape[0]) if rows is None else rows)
            return self.func_jac(X)
        return self.func(X), self.jac(X)

    def solve(self, J: np.ndarray, r: np.ndarray):
        """Least-norm solves ``J[b] x = r[b]``; returns ``(x, ok)``."""
        if self.rank is None or self.rank >= self.codom_dim:
            return batched_least_norm(J, r)
        return batched_truncated_solve(J, r, self.rank)

    @classmethod
    def linear(cls, A, name="linear") -> "Submersion":
        A = np.array(A, dtype=float, ndmin=2)
        p, q = A.shape
        return cls(q, p, lambda X: X @ A.T, lambda X: np.broadcast_to(A, (X.shape[0], p, q)), name=name)


@dataclass
class TargetPath:
    """A path ``gamma: [0, 1] -> R^p`` sampled on a grid.

    ``derivative`` (optional) maps grid times to velocities; without it the
    velocity is taken from second-order differences of the samples.
    """

    t: np.ndarray
    values: np.ndarray
    derivative: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        self.values = v.reshape(len(self.t), -1)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("grid times must be strictly increasing")

    @classmethod
    def from_function(cls, gamma, dgamma=None, n_steps: int = 1024) -> "TargetPath":
        t = np.linspace(0.0, 1.0, n_steps + 1)
        vals = np.array([np.atleast_1d(gamma(ti)) for ti in t], dtype=float)
        if dgamma is None:
            return cls(t, vals, None)

        def deriv(ts):
            return np.array([np.atleast_1d(dgamma(ti)) for ti in np.atleast_1d(ts)], dtype=float)

        return cls(t, vals, deriv)

    @classmethod
    def segment(cls, a, b, n_steps: int = 1024) -> "TargetPath":
        a, b = np.atleast_1d(np.asarray(a, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float))
        t = np.linspace(0.0, 1.0, n_steps + 1)
        return cls(t, a[None, :] + t[:, None] * (b - a)[None, :], lambda ts: np.tile(b - a, (np.size(ts), 1)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def velocities(self) -> np.ndarray:
        if self.derivative is not None:
            return np.asarray(self.derivative(self.t), dtype=float).reshape(self.values.shape)
        return np.gradient(self.values, self.t, axis=0, edge_order=2)

    @property
    def speed_bound(self) -> float:
        return float(np.max(np.linalg.norm(self.velocities(), axis=1)))


@dataclass
class LiftResult:
    t: np.ndarray
    theta: np.ndarray
    max_residual: float
    lipschitz_observed: float
    exit_flag: str
    exit_t: float | None = None

    @property
    def completed(self) -> bool:
        return self.exit_flag == COMPLETED


@dataclass
class HorizontalityReport:
    residual_to_target: float
    orthogonality_defect: float


@dataclass
class OpenMapResult:
    x: np.ndarray
    residual: float
    distance: float
    certified: bool
    lift: LiftResult | None = field(default=None, repr=False)


# --------------------------------------------------------------------------- #
# batched lifting core
# --------------------------------------------------------------------------- #

def lift_batch(
    f: Submersion,
    t: np.ndarray,
    gamma: np.ndarray,
    gamma_dot: np.ndarray,
    theta0: np.ndarray,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    predictor: str = "rk",
    newton_tol: float = 1e-12,
    max_newton: int = 12,
    accept_tol: float = 1e-6,
):
    """Lift ``B`` target paths sampled on a common grid.

    ``gamma`` and ``gamma_dot`` have shape ``(N+1, B, p)``.  On each interval
    the predictor integrates ``theta' = J^+ v`` with the secant velocity
    ``v`` of the target (``"rk"``) or takes one explicit step with the
    sampled velocity (``"euler"``); Newton steps then bring each row back to
    ``f(theta) = gamma(t_{i+1})`` within ``newton_tol * (1 + |gamma|)``.  A
    row whose residual stays above ``accept_tol * (1 + |gamma|)`` is stopped
    with ``RankDeficient`` (Newton stalls where ``df`` degenerates).

    Returns ``(theta, flags, exit_t, lipschitz, residual)`` where ``theta``
    has shape ``(N+1, B, q)``.
    """
    t = np.asarray(t, dtype=float)
    N = len(t) - 1
    B = theta0.shape[0]
    q = f.dom_dim
    theta = np.full((N + 1, B, q), np.nan)
    theta[0] = theta0
    flags = np.array([COMPLETED] * B, dtype=object)
    exit_t = np.full(B, np.nan)
    lip = np.zeros(B)
    resid = np.zeros(B)
    active = np.ones(B, dtype=bool)

    def fail(rows, flag, when):
        rows = rows[active[rows]]
        flags[rows] = flag
        exit_t[rows] = when
        active[rows] = False

    F, Jcur = f.evaluate(theta0, np.arange(B))
    Jcur = np.array(Jcur, dtype=float)
    v0, ok0 = f.solve(Jcur, gamma_dot[0])
    fail(np.flatnonzero(~ok0), RANK_DEFICIENT, t[0])
    lip = np.where(ok0, np.linalg.norm(v0, axis=1), 0.0)
    resid = np.linalg.norm(F - gamma[0], axis=1)

    for i in range(N):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        dt = t[i + 1] - t[i]
        y = theta[i, idx].copy()
        if predictor == "rk":
            slope = (gamma[i + 1, idx] - gamma[i, idx]) / dt

            def rhs(s, z, slope=slope, idx=idx):
                return f.solve(f.evaluate(z, idx)[1], slope)[0]

            try:
                y = dopri5(rhs, t[i], y, t[i + 1], cfg, h0=dt).y
            except (BlowUp, StepBudgetExceeded):
                fail(idx, BLOW_UP, t[i])
                continue
        elif predictor == "euler":
            y = y + dt * f.solve(Jcur[idx], gamma_dot[i, idx])[0]
        else:
            raise ValueError(f"unknown predictor {predictor!r}")

        target = gamma[i + 1, idx]
        tol = newton_tol * (1.0 + np.linalg.norm(target, axis=1))
        ok = np.ones(idx.size, dtype=bool)
        F, J = f.evaluate(y, idx)
        F, J = np.array(F, dtype=float), np.array(J, dtype=float)
        for _ in range(max_newton):
            finite = np.all(np.isfinite(F), axis=1) & np.all(np.isfinite(y), axis=1)
            rn = np.linalg.norm(np.where(finite[:, None], F - target, 0.0), axis=1)
            todo = np.flatnonzero((rn > tol) & ok & finite)
            if todo.size == 0:
                break
            dy, ok_t = f.solve(J[todo], (F - target)[todo])
            ok[todo[~ok_t]] = False
            y[todo] -= dy
            F[todo], J[todo] = f.evaluate(y[todo], idx[todo])
        finite = np.all(np.isfinite(F), axis=1) & np.all(np.isfinite(y), axis=1)
        rn = np.where(finite, np.linalg.norm(np.where(finite[:, None], F - target, 0.0), axis=1), np.inf)
        stalled = finite & (rn > accept_tol * (1.0 + np.linalg.norm(target, axis=1)))
        keep = finite & ~stalled
        theta[i + 1, idx] = np.where(keep[:, None], y, np.nan)
        fail(idx[~finite], BLOW_UP, t[i + 1])
        fail(idx[stalled], RANK_DEFICIENT, t[i + 1])
        rn = np.where(keep, rn, 0.0)
        resid[idx] = np.maximum(resid[idx], rn)
        Jcur[idx] = np.where(finite[:, None, None], J, 0.0)
        v, ok_v = f.solve(Jcur[idx], gamma_dot[i + 1, idx])
        ok_v &= ok & finite
        lip[idx] = np.maximum(lip[idx], np.where(ok_v, np.linalg.norm(v, axis=1), 0.0))
        fail(idx[~ok_v], RANK_DEFICIENT, t[i + 1])
        out = np.linalg.norm(y - f.center, axis=1) >= f.radius
        fail(idx[out], LEFT_DOMAIN, t[i + 1])
    return theta, flags, exit_t, lip, resid


def horizontal_lift(
    f: Submersion,
    gamma: TargetPath,
    theta0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    predictor: str = "rk",
    start_tol: float = 1e-10,
) -> LiftResult:
    """Lift ``gamma`` through ``f`` starting at ``theta0``.

    Raises :class:`RankDeficient` if ``df(theta0)`` is not surjective and
    ``ValueError`` if ``f(theta0)`` is not on ``gamma(0)``.  Failures further
    along the path are reported through ``exit_flag``.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (f.dom_dim,):
        raise DimensionMismatch(f"theta0 has shape {theta0.shape}, expected ({f.dom_dim},)")
    if gamma.dim != f.codom_dim:
        raise DimensionMismatch(f"path lives in R^{gamma.dim}, map goes to R^{f.codom_dim}")
    if f.rank is None:
        pseudoinverse(f.jacobian(theta0))
    gap = float(np.linalg.norm(f(theta0) - gamma.values[0]))
    if gap > start_tol * (1.0 + np.linalg.norm(gamma.values[0])):
        raise ValueError(f"f(theta0) misses gamma(0) by {gap:.3e}")
    theta, flags, exit_t, lip, resid = lift_batch(
        f,
        gamma.t,
        gamma.values[:, None, :],
        gamma.velocities()[:, None, :],
        theta0[None, :],
        cfg,
        predictor=predictor,
    )
    path = theta[:, 0, :]
    good = np.all(np.isfinite(path), axis=1)
    return LiftResult(
        t=gamma.t[good],
        theta=path[good],
        max_residual=float(resid[0]),
        lipschitz_observed=float(lip[0]),
        exit_flag=str(flags[0]),
        exit_t=None if np.isnan(exit_t[0]) else float(exit_t[0]),
    )


def verify_horizontal(f: Submersion, theta, t, gamma=None) -> HorizontalityReport:
    """Check ``f(theta) = gamma`` and ``theta' perp ker df`` on a sampled path.

    Velocities come from second-order central differences on the grid ``t``.
    """
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    dtheta = np.gradient(theta, t, axis=0, edge_order=2)
    defect = 0.0
    for x, v in zip(theta, dtheta):
        P = kernel_projector(f.jacobian(x))
        defect = max(defect, float(np.linalg.norm(P @ v)))
    res = 0.0
    if gamma is not None:
        g = np.asarray(gamma, dtype=float).reshape(len(t), -1)
        res = float(np.max(np.linalg.norm(f(theta) - g, axis=1)))
    return HorizontalityReport(residual_to_target=res, orthogonality_defect=defect)


# --------------------------------------------------------------------------- #
# open mapping certificate
# --------------------------------------------------------------------------- #

def open_map_solve_batch(
    f: Submersion,
    targets,
    C0: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    n_steps: int = 1024,
    force: bool = False,
) -> list[OpenMapResult]:
    """Preimages of several targets near ``f(center)`` by lifting straight segments."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    x0 = f.center
    y0 = f(x0)
    dist = np.linalg.norm(targets - y0, axis=1)
    radius = f.radius / (2.0 * C0)
    certified = dist < radius
    if not force and not np.all(certified):
        j = int(np.argmax(~certified))
        raise NotInCertifiedBall(dist[j], radius)
    t = np.linspace(0.0, 1.0, n_steps + 1)
    delta = targets - y0
    gamma = y0[None, None, :] + t[:, None, None] * delta[None, :, :]
    gdot = np.broadcast_to(delta, gamma.shape)
    B = targets.shape[0]
    theta, flags, exit_t, lip, resid = lift_batch(f, t, gamma, gdot, np.tile(x0, (B, 1)), cfg)
    out = []
    for b in range(B):
        path = theta[:, b, :]
        good = np.all(np.isfinite(path), axis=1)
        lift = LiftResult(
            t=t[good],
            theta=path[good],
            max_residual=float(resid[b]),
            lipschitz_observed=float(lip[b]),
            exit_flag=str(flags[b]),
            exit_t=None if np.isnan(exit_t[b]) else float(exit_t[b]),
        )
        x = path[good][-1]
        out.append(
            OpenMapResult(
                x=x,
                residual=float(np.linalg.norm(f(x) - targets[b])),
                distance=float(np.linalg.norm(x - x0)),
                certified=bool(certified[b]),
                lift=lift,
            )
        )
    return out


def open_map_solve(f: Submersion, y, C0: float, cfg: IntegratorConfig = DEFAULT_CONFIG, n_steps=1024, force=False):
    """Preimage of ``y`` inside the domain ball of ``f``.

    Inside the certified ball ``|y - f(center)| < radius / (2 C0)`` a
    preimage with ``|x - center| < radius`` exists; it is found by lifting
    the segment from ``f(center)`` to ``y``.  Outside it
    :class:`NotInCertifiedBall` is raised unless ``force`` is set, in which
    case the attempt is made and flagged ``certified=False``.  Raises
    :class:`LeftDomain` if the lift leaves the ball, which means ``C0`` was
    underestimated.
    """
    res = open_map_solve_batch(f, np.atleast_1d(np.asarray(y, dtype=float))[None, :], C0, cfg, n_steps, force)[0]
    if res.lift.exit_flag == LEFT_DOMAIN:
        raise LeftDomain(res.lift.exit_t)
    if res.lift.exit_flag == RANK_DEFICIENT:
        raise RankDeficient(0.0, f"Jacobian lost rank at t={res.lift.exit_t}")
    if res.lift.exit_flag == BLOW_UP:
        raise BlowUp(res.lift.exit_t)
    return res


def _ball_samples(center, radius, count, seed):
    """Quasi-random points filling the closed ball (radius ``r * u**(1/d)``)."""
    d = center.shape[0]
    # one extra coordinate drives the radial profile
    u = qmc.Halton(d + 1, scramble=True, seed=seed).random(count)
    g = qmc.MultivariateNormalQMC(np.zeros(d), engine=qmc.Halton(d, seed=seed)).random(count)
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    r = radius * u[:, -1:] ** (1.0 / d)
    return center + r * g


def estimate_C0(f: Submersion, sample_count: int = 4096, seed: int = 0, radius: float | None = None) -> float:
    """Sampled ``sup |df(x)^+|`` over the domain ball.

    The maximum over finitely many points is a lower bound for the true
    supremum.  An unbounded domain needs an explicit sampling ``radius``.
    Raises :class:`RankDeficient` at a sample where ``df`` is not onto.
    """
    r = f.radius if radius is None else float(radius)
    if not np.isfinite(r):
        raise ValueError("estimate_C0 needs a finite sampling radius")
    pts = np.vstack([f.center[None, :], _ball_samples(f.center, r, sample_count, seed)])
    # keep samples strictly inside the open ball
    pts = f.center + (pts - f.center) * (1.0 - 1e-12)
    best = 0.0
    for J in f.jacobian(pts):
        best = max(best, pseudoinverse(J).op_norm_pinv)
    return best


# --------------------------------------------------------------------------- #
# named submersions
# --------------------------------------------------------------------------- #

def _arctan_example(radius=10.0) -> Submersion:
    def func(X):
        return (X[:, 0] + np.arctan(X[:, 1]))[:, None]

    def jac(X):
        J = np.empty((X.shape[0], 1, 2))
        J[:, 0, 0] = 1.0
        J[:, 0, 1] = 1.0 / (1.0 + X[:, 1] ** 2)
        return J

    return Submersion(2, 1, func, jac, radius=radius, name="arctan-example")


def _nonuni(radius=np.inf) -> Submersion:
    def func(X):
        a = np.abs(X[:, :2])
        return ((2.0 / 3.0) * np.sum(X[:, :2] * np.sqrt(a), axis=1) + X[:, 2])[:, None]

    def jac(X):
        J = np.ones((X.shape[0], 1, 3))
        J[:, 0, :2] = np.sqrt(np.abs(X[:, :2]))
        return J

    return Submersion(3, 1, func, jac, radius=radius, name="nonuni")


_XYZ_MATRIX = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, -1.0]])


def _xyz_linear(radius=np.inf) -> Submersion:
    return Submersion.linear(_XYZ_MATRIX, name="xyz-linear").with_domain(radius=radius)


def _kernel_example(radius=2.0) -> Submersion:
    def func(X):
        return np.stack([X[:, 0] + X[:, 1] * X[:, 2], X[:, 1]], axis=1)

    def jac(X):
        J = np.zeros((X.shape[0], 2, 3))
        J[:, 0, 0] = 1.0
        J[:, 0, 1] = X[:, 2]
        J[:, 0, 2] = X[:, 1]
        J[:, 1, 1] = 1.0
        return J

    return Submersion(3, 2, func, jac, radius=radius, name="kernel-example")


SUBMERSIONS: dict[str, Callable[..., Submersion]] = {
    "arctan-example": _arctan_example,
    "nonuni": _nonuni,
    "xyz-linear": _xyz_linear,
    "kernel-example": _kernel_example,
}


def named_submersion(name: str, **kw) -> Submersion:
    try:
        make = SUBMERSIONS[name]
    except KeyError:
        raise KeyError(f"unknown submersion {name!r}; known: {sorted(SUBMERSIONS)}") from None
    return make(**kw)
