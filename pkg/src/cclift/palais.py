"""Integration of ``gamma' = sum_j b_j(t) Y_j(gamma)`` and blow-up detection.

``Direct`` mode runs one adaptive integration, stopping at every switching
time of the piecewise-constant control.  ``Renewal`` mode advances in chunks
of length ``delta / 2`` and restarts the integrator from the new point after
each chunk.  Optionally every chunk endpoint is certified as
``x_{k+1} = E_{x_k}(h_k)`` with ``|h_k| < epsilon``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .ballbox import CCSamples, solve_e_map_batch
from .errors import BlowUp, DimensionMismatch, StepBudgetExceeded
from .fields import Frame, VectorField
from .frame import numerical_rank
from .integrate import DEFAULT_CONFIG, IntegratorConfig, dopri5

__all__ = [
    "ControlSchedule",
    "Trajectory",
    "integrate_cauchy",
    "detect_blowup",
]

DIRECT = "Direct"
RENEWAL = "Renewal"


@dataclass
class ControlSchedule:
    """Piecewise-constant control: ``b(t) = values[k]`` for ``starts[k] <= t < starts[k+1]``.

    The last value holds for all later times.
    """

    starts: np.ndarray
    values: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=float).reshape(-1)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.starts.shape[0]:
            raise DimensionMismatch("one control vector per start time is required")
        if self.starts.size == 0 or self.starts[0] != 0.0:
            raise ValueError("the first piece must start at t = 0")
        if np.any(np.diff(self.starts) <= 0):
            raise ValueError("start times must be strictly increasing")
        if np.max(np.abs(self.values)) > self.bound * (1.0 + 1e-12):
            raise ValueError(f"control exceeds the bound {self.bound}")

    @property
    def q(self) -> int:
        return self.values.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.values[max(k, 0)]

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        """Switching times strictly inside ``(t0, t1)``."""
        return self.starts[(self.starts > t0) & (self.starts < t1)]

    @classmethod
    def constant(cls, b) -> "ControlSchedule":
        return cls([0.0], [b])

    @classmethod
    def square_wave(cls, b_on, b_off, period: float, T: float) -> "ControlSchedule":
        """Alternate ``b_on`` and ``b_off`` with half-period ``period / 2`` up to ``T``."""
        half = 0.5 * period
        k = int(np.ceil(T / half - 1e-12))
        starts = half * np.arange(max(k, 1))
        vals = [b_on if i % 2 == 0 else b_off for i in range(len(starts))]
        return cls(starts, vals)

    @classmethod
    def from_csv(cls, path, bound: float = 1.0) -> "ControlSchedule":
        """Read rows ``t_start, b_1, ..., b_q`` (header line required)."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: schedule needs a header and at least one row")
        header = [h.strip() for h in rows[0]]
        if header[0] != "t_start":
            raise ValueError(f"{path}: first column must be t_start")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(data[:, 0], data[:, 1:], bound)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_start"] + [f"b{j + 1}" for j in range(self.q)])
            for t, b in zip(self.starts, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in b])


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    steps: np.ndarray
    mode: str
    blowup: float | None = None
    anchors: np.ndarray | None = None
    certificates: list = field(default_factory=list)
    hypothesis_violation: bool = False

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1]

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def to_csv(self, path) -> None:
        n = self.points.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["step"])
            for t, x, h in zip(self.times, self.points, self.steps):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in x] + [f"{h:.17g}"])


def _rhs(frame: Frame, b: np.ndarray):
    active = [j for j in range(frame.q) if b[j] != 0.0]

    def f(t, y):
        out = np.zeros_like(y)
        for j in active:
            out += b[j] * frame.fields[j].eval_batch(y)
        return out

    return f


def _advance(frame, schedule, y, t0, t1, cfg, times, points, steps):
    """Integrate from ``t0`` to ``t1``, restarting at every switching time."""
    cuts = np.concatenate([[t0], schedule.breakpoints(t0, t1), [t1]])
    for a, b in zip(cuts[:-1], cuts[1:]):
        ctrl = schedule(a)
        if not np.any(ctrl):
            times.append(b)
            points.append(y[0].copy())
            steps.append(b - a)
            continue
        try:
            sol = dopri5(_rhs(frame, ctrl), a, y, b, cfg, record=True)
        except BlowUp as exc:
            raise BlowUp(exc.t, exc.reason) from None
        times.extend(sol.times[1:])
        points.extend(s[0] for s in sol.states[1:])
        steps.extend(sol.steps)
        y = sol.y
    return y


def integrate_cauchy(
    frame: Frame,
    x,
    schedule: ControlSchedule,
    T: float,
    mode: str = DIRECT,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    delta: float | None = None,
    epsilon: float | None = None,
    certify: bool = False,
    on_blowup: str = "raise",
) -> Trajectory:
    """Solve ``gamma' = sum_j b_j(t) Y_j(gamma)``, ``gamma(0) = x``, on ``[0, T]``.

    ``mode="Renewal"`` needs ``delta``; with ``certify=True`` (and
    ``epsilon``) each chunk endpoint is also expressed as ``E_{x_k}(h_k)``.

    A blow-up raises :class:`BlowUp` unless ``on_blowup="record"``, in which
    case the partial trajectory is returned with ``blowup`` set.  In Renewal
    mode a blow-up also sets ``hypothesis_violation``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (frame.dim,):
        raise DimensionMismatch(f"start point has shape {x.shape}, expected ({frame.dim},)")
    if schedule.q != frame.q:
        raise DimensionMismatch(f"schedule has {schedule.q} controls, frame has q = {frame.q}")
    if mode not in (DIRECT, RENEWAL):
        raise ValueError(f"mode must be {DIRECT!r} or {RENEWAL!r}")
    times, points, steps = [0.0], [x.copy()], [0.0]
    y = x[None, :].copy()
    anchors = [x.copy()]
    chunk_bounds = [0.0]
    blowup = None
    try:
        if mode == DIRECT:
            y = _advance(frame, schedule, y, 0.0, float(T), cfg, times, points, steps)
        else:
            if not delta or delta <= 0:
                raise ValueError("Renewal mode needs a positive delta")
            half = 0.5 * float(delta)
            n_chunks = int(np.ceil(float(T) / half - 1e-12))
            for k in range(n_chunks):
                a, b = k * half, min((k + 1) * half, float(T))
                # restart from the current anchor: fresh step-size selection
                y = _advance(frame, schedule, y, a, b, cfg, times, points, steps)
                anchors.append(y[0].copy())
                chunk_bounds.append(b)
    except (BlowUp, StepBudgetExceeded) as exc:
        if on_blowup == "raise":
            raise
        blowup = float(exc.t)
    traj = Trajectory(
        times=np.array(times),
        points=np.array(points),
        steps=np.array(steps),
        mode=mode,
        blowup=blowup,
        anchors=np.array(anchors) if mode == RENEWAL else None,
        hypothesis_violation=(blowup is not None and mode == RENEWAL),
    )
    if certify and mode == RENEWAL and blowup is None:
        if epsilon is None:
            raise ValueError("certification needs epsilon")
        traj.certificates = _certify_chunks(frame, schedule, np.array(anchors), np.array(chunk_bounds), epsilon, cfg)
    return traj


def _certify_chunks(frame, schedule, anchors, bounds, epsilon, cfg, substeps: int = 4):
    """Solve ``anchors[k+1] = E_{anchors[k]}(h_k)`` for all chunks in one batch."""
    K = len(anchors) - 1
    n = frame.dim
    # resample each chunk on a grid that includes its switching times
    grids = []
    for k in range(K):
        a, b = bounds[k], bounds[k + 1]
        g = np.union1d(np.linspace(a, b, substeps + 1), schedule.breakpoints(a, b))
        grids.append(g)
    N = max(len(g) for g in grids) - 1
    s = np.linspace(0.0, 1.0, N + 1)
    path = np.empty((N + 1, K, n))
    vel = np.empty((N + 1, K, n))
    for k in range(K):
        a, b = bounds[k], bounds[k + 1]
        tk = a + s * (b - a)
        y = anchors[k][None, :].copy()
        path[0, k] = y[0]
        for i in range(N):
            y = _advance(frame, schedule, y, tk[i], tk[i + 1], cfg, [], [], [])
            path[i + 1, k] = y[0]
        for i in range(N + 1):
            ctrl = schedule(min(tk[i], b - 1e-15 * max(1.0, b)))
            vel[i, k] = (b - a) * frame.values(path[i, k]) @ ctrl
    samples = CCSamples(
        x=anchors[0],
        targets=path[-1].copy(),
        lengths=np.diff(bounds),
        controls=np.zeros((K, 0, frame.q)),
        s=s,
        path=path,
        velocity=vel,
    )
    p = numerical_rank(frame.values(anchors[0]))
    return solve_e_map_batch(frame, anchors[:-1], samples, epsilon, cfg, rank=p if p < n else None)


def _completes(X: VectorField, x, T, cfg) -> bool:
    try:
        dopri5(lambda t, y: X.eval_batch(y), 0.0, x[None, :], T, cfg)
        return True
    except (BlowUp, StepBudgetExceeded):
        return False


def detect_blowup(X: VectorField, x, T_max: float, cfg: IntegratorConfig = DEFAULT_CONFIG, width: float = 1e-3):
    """Escape time of ``exp(tX)x`` within ``[0, T_max]``, or ``None``.

    Escape means the norm passes ``cfg.blowup_norm`` or the step size
    underflows.  The escape time is bracketed by bisection on the predicate
    "integration up to T completes" until the bracket is narrower than
    ``width``; the midpoint is returned.
    """
    x = np.asarray(x, dtype=float)
    if _completes(X, x, T_max, cfg):
        return None
    lo, hi = 0.0, float(T_max)
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if _completes(X, x, mid, cfg):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
