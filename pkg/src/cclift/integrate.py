"""Embedded Runge-Kutta 5(4) integration (Dormand-Prince) with PI step control.

The integrator advances a whole batch of states ``y`` of shape ``(B, d)`` with
one shared step sequence.  Sharing the steps keeps the discrete solution map
a smooth function of the initial data, which matters when callers difference
or differentiate through it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BlowUp, StepBudgetExceeded

__all__ = ["IntegratorConfig", "Solution", "dopri5"]


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_steps: int = 1_000_000
    blowup_norm: float = 1e8

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "max_steps", "blowup_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IntegratorConfig.{name} must be positive")

    def replace(self, **kw) -> "IntegratorConfig":
        vals = {k: getattr(self, k) for k in ("rel_tol", "abs_tol", "max_step", "max_steps", "blowup_norm")}
        vals.update(kw)
        return IntegratorConfig(**vals)


DEFAULT_CONFIG = IntegratorConfig()

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# fifth-order weights are _A[6]; error = 5th - 4th order
_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


@dataclass
class Solution:
    t: float
    y: np.ndarray
    n_steps: int = 0
    n_rejected: int = 0
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    states: list = field(default_factory=list)


def _error_norm(err, y0, y1, cfg, cols):
    if cols is not None:
        err, y0, y1 = err[:, cols], y0[:, cols], y1[:, cols]
    sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
    r = err / sc
    with np.errstate(invalid="ignore", over="ignore"):
        val = float(np.max(np.sqrt(np.mean(r * r, axis=1))))
    return val if math.isfinite(val) else math.inf


def _initial_step(fun, t0, y0, f0, direction, cfg, cols):
    ys, fs = (y0, f0) if cols is None else (y0[:, cols], f0[:, cols])
    sc = cfg.abs_tol + cfg.rel_tol * np.abs(ys)
    d0 = float(np.max(np.sqrt(np.mean((ys / sc) ** 2, axis=1))))
    d1 = float(np.max(np.sqrt(np.mean((fs / sc) ** 2, axis=1))))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, cfg.max_step)
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    df = f1 - f0 if cols is None else (f1 - f0)[:, cols]
    d2 = float(np.max(np.sqrt(np.mean((df / sc) ** 2, axis=1)))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, cfg.max_step)


def dopri5(
    fun: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    y0: np.ndarray,
    t1: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    *,
    error_cols=None,
    record: bool = False,
    h0: float | None = None,
) -> Solution:
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` for a batch ``y0`` of shape ``(B, d)``.

    ``error_cols`` restricts step-size control (and the blow-up test) to a
    subset of state columns; the remaining columns ride along on the same
    steps (used for variational equations).

    Raises :class:`BlowUp` when the controlled state exceeds
    ``cfg.blowup_norm`` or the step size underflows, and
    :class:`StepBudgetExceeded` after ``cfg.max_steps`` steps.
    """
    y = np.array(y0, dtype=float)
    if y.ndim != 2:
        raise ValueError("dopri5 expects states of shape (B, d)")
    t0, t1 = float(t0), float(t1)
    sol = Solution(t=t0, y=y)
    if record:
        sol.times.append(t0)
        sol.states.append(y.copy())
    if t1 == t0:
        return sol
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)

    t = t0
    k1 = fun(t, y)
    h = h0 if h0 is not None else _initial_step(fun, t, y, k1, direction, cfg, error_cols)
    h = min(h, cfg.max_step, span)
    facold = 1e-4
    steps = 0
    rejected = 0
    while True:
        remaining = abs(t1 - t)
        if remaining <= 1e-15 * max(1.0, abs(t1)):
            break
        last = h >= remaining
        if last:
            h = remaining
        if h < 16 * np.finfo(float).eps * max(abs(t), span, 1.0):
            raise BlowUp(t, reason="step underflow")
        if steps >= cfg.max_steps:
            raise StepBudgetExceeded(t, steps)
        hd = direction * h
        ks = [k1]
        for i in range(1, 7):
            yi = y.copy()
            for a, k in zip(_A[i], ks):
                if a != 0.0:
                    yi += (hd * a) * k
            if i == 6:
                y_new = yi
            ks.append(fun(t + _C[i] * hd, yi))
        err_vec = ks[0] * _E[0]
        for e, k in zip(_E[1:], ks[1:]):
            if e != 0.0:
                err_vec = err_vec + e * k
        err_vec *= hd
        err = _error_norm(err_vec, y, y_new, cfg, error_cols)
        steps += 1
        if err <= 1.0:
            t = t1 if last else t + hd
            y = y_new
            k1 = ks[6]
            check = y if error_cols is None else y[:, error_cols]
            with np.errstate(invalid="ignore"):
                big = not np.all(np.isfinite(check)) or float(np.max(np.abs(check))) > cfg.blowup_norm
            if big:
                raise BlowUp(t, reason="norm")
            sol.steps.append(h)
            if record:
                sol.times.append(t)
                sol.states.append(y.copy())
            if last:
                break
            fac11 = err**0.17 if err > 0 else 0.0
            fac = fac11 / facold**0.04
            fac = min(5.0, max(0.1, fac / 0.9)) if fac > 0 else 0.1
            h = min(h / fac, cfg.max_step)
            facold = max(err, 1e-4)
        else:
            rejected += 1
            if math.isinf(err):
                h *= 0.1
            else:
                h /= min(5.0, err**0.17 / 0.9)
    sol.t = t
    sol.y = y
    sol.n_steps = steps
    sol.n_rejected = rejected
    return sol
