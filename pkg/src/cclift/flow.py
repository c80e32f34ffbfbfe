"""Flows of vector fields, commutator compositions and the composite map ``E_x``.

For a word ``w = w_1 ... w_l`` the composition ``C_tau(X_{w_1}, ..., X_{w_l})``
is stored as the ordered list of elementary flows ``(generator, sign)`` that
are applied to a point, first entry first.  ``approx_exp(w, t)`` uses
``tau = |t|**(1/l)`` and either that list (``t >= 0``) or its exact inverse.

``E_x(h) = exp_ap(h_1 Y_1) o ... o exp_ap(h_q Y_q) x`` applies the factor
of ``Y_q`` first.  :class:`EMap` evaluates it for a batch of ``h`` and can
return the exact derivative of the discretized map, obtained by integrating
variational equations alongside the flows.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BlowUp, DimensionMismatch
from .fields import Frame, VectorField, _as_word
from .integrate import DEFAULT_CONFIG, IntegratorConfig, dopri5

__all__ = [
    "HVector",
    "flow",
    "flow_batch",
    "elementary_sequence",
    "invert_sequence",
    "commutator_flow",
    "approx_exp",
    "EMap",
    "e_map",
    "e_jacobian",
    "homogeneous_norm",
]


@dataclass(frozen=True)
class HVector:
    """Coordinates ``h`` of the composite map together with the word lengths."""

    h: np.ndarray
    degrees: tuple[int, ...]

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if h.shape[0] != len(self.degrees):
            raise DimensionMismatch(f"h has length {h.shape[0]} but {len(self.degrees)} degrees were given")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))


def homogeneous_norm(h, degrees=None) -> float:
    """``max_j |h_j|**(1/l_j)``."""
    if isinstance(h, HVector):
        h, degrees = h.h, h.degrees
    h = np.asarray(h, dtype=float)
    d = np.asarray(degrees, dtype=float)
    if h.size == 0:
        return 0.0
    return float(np.max(np.abs(h) ** (1.0 / d), axis=-1))


# --------------------------------------------------------------------------- #
# flows of a single field
# --------------------------------------------------------------------------- #

def flow_batch(
    X: VectorField,
    Y0: np.ndarray,
    T: np.ndarray,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    tangent: bool = False,
):
    """Flow every row of ``Y0`` along ``X`` for its own time ``T[b]``.

    Time is rescaled to ``s in [0, 1]`` so that all rows share one step
    sequence.  With ``tangent=True`` the derivative of the flow map with
    respect to the initial point is returned as well (shape ``(B, n, n)``).
    """
    Y0 = np.asarray(Y0, dtype=float)
    B, n = Y0.shape
    T = np.broadcast_to(np.asarray(T, dtype=float), (B,))
    if not np.any(T):
        return (Y0.copy(), np.broadcast_to(np.eye(n), (B, n, n)).copy()) if tangent else (Y0.copy(), None)
    Tc = T[:, None]
    if not tangent:
        sol = dopri5(lambda s, y: Tc * X.eval_batch(y), 0.0, Y0, 1.0, cfg)
        return sol.y, None

    def rhs(s, z):
        y = z[:, :n]
        V = z[:, n:].reshape(B, n, n)
        dV = np.matmul(X.jacobian_batch(y), V)
        return np.concatenate([Tc * X.eval_batch(y), (Tc[:, :, None] * dV).reshape(B, n * n)], axis=1)

    z0 = np.concatenate([Y0, np.broadcast_to(np.eye(n).reshape(1, -1), (B, n * n))], axis=1)
    sol = dopri5(rhs, 0.0, z0, 1.0, cfg, error_cols=slice(0, n))
    return sol.y[:, :n], sol.y[:, n:].reshape(B, n, n)


def flow(X: VectorField, x, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """The point ``exp(t X) x``.

    Raises :class:`BlowUp` (with the escape time in the original time scale)
    if the solution leaves every bounded set before time ``t``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (X.dim,):
        raise DimensionMismatch(f"point of shape {x.shape} for a field of dimension {X.dim}")
    t = float(t)
    if t == 0.0:
        return x.copy()
    try:
        y, _ = flow_batch(X, x[None, :], np.array([t]), cfg)
    except BlowUp as exc:
        raise BlowUp(exc.t * t, exc.reason) from None
    return y[0]


# --------------------------------------------------------------------------- #
# commutator compositions
# --------------------------------------------------------------------------- #

def elementary_sequence(word) -> list[tuple[int, int]]:
    """Elementary flows of ``C_tau(X_{w_1}, ..., X_{w_l})`` in order of application.

    Entries are ``(generator index (0-based), sign)``; the flow applied is
    ``exp(sign * tau * X_g)``.  The list has ``N(1) = 1``,
    ``N(l) = 2 N(l-1) + 2`` entries.
    """
    letters = _as_word(word).letters
    g = letters[0] - 1
    if len(letters) == 1:
        return [(g, 1)]
    inner = elementary_sequence(letters[1:])
    return [(g, 1)] + inner + [(g, -1)] + invert_sequence(inner)


def invert_sequence(seq: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    return [(g, -s) for g, s in reversed(seq)]


def _apply_sequence(generators, seq, tau, x, cfg):
    y = np.array(x, dtype=float)
    for g, sgn in seq:
        y = flow(generators[g], y, sgn * tau, cfg)
    return y


def commutator_flow(generators: Sequence[VectorField], word, tau: float, x, cfg=DEFAULT_CONFIG) -> np.ndarray:
    """The point ``C_tau(X_{w_1}, ..., X_{w_l}) x`` for ``tau >= 0``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return _apply_sequence(generators, elementary_sequence(word), float(tau), x, cfg)


def approx_exp(generators: Sequence[VectorField], word, t: float, x, cfg=DEFAULT_CONFIG) -> np.ndarray:
    """Approximate exponential ``exp_ap(t X_w) x``."""
    w = _as_word(word)
    tau = abs(float(t)) ** (1.0 / w.length)
    seq = elementary_sequence(w)
    if t < 0:
        seq = invert_sequence(seq)
    return _apply_sequence(generators, seq, tau, x, cfg)


# --------------------------------------------------------------------------- #
# the composite map E_x
# --------------------------------------------------------------------------- #

# below this |h_k| the derivative of a bracket factor is taken as its limit Y_k
_H_LIMIT = 1e-15

# Richardson ladders in eta = t**(1/l) for difference quotients at h_k = 0,
# as (eta_0, levels) per word length.  Longer words divide by eta**l, so
# they need larger eta to keep roundoff amplification in check.
_LADDERS = {1: (0.02, 4), 2: (0.02, 4), 3: (0.05, 5)}
_LADDER_LONG = (0.2, 3)


class EMap:
    """Batched evaluation of ``h -> E_x(h)`` for a fixed frame.

    ``evaluate(x, H)`` accepts base points of shape ``(n,)`` or ``(B, n)``
    and coordinates of shape ``(B, q)``.
    """

    def __init__(self, frame: Frame, cfg: IntegratorConfig = DEFAULT_CONFIG):
        self.frame = frame
        self.cfg = cfg
        self.n = frame.dim
        self.q = frame.q
        self.degrees = np.array(frame.degrees)
        self._seqs = [elementary_sequence(w) for w in frame.words]

    def _segments(self, H: np.ndarray):
        """Merged elementary flows with per-row coefficients.

        Returns a list of ``(block, generator, coef)`` in application order;
        the flow time of row ``b`` is ``coef[b] * tau[b, block]``.
        """
        B = H.shape[0]
        segments = []
        for k in range(self.q - 1, -1, -1):
            seq = self._seqs[k]
            if self.degrees[k] == 1:
                segments.append((k, seq[0][0], np.ones(B)))
                continue
            pos = (H[:, k] >= 0).astype(float)
            entries = [(g, s * pos) for g, s in seq] + [(g, s * (1.0 - pos)) for g, s in invert_sequence(seq)]
            merged: list[list] = []
            for g, c in entries:
                if merged and merged[-1][0] == g:
                    merged[-1][1] = merged[-1][1] + c
                else:
                    merged.append([g, c])
            for g, c in merged:
                if np.any(c != 0.0):
                    segments.append((k, g, c))
        return segments

    def _tau(self, H):
        deg = self.degrees[None, :]
        tau = np.where(deg == 1, H, np.abs(H) ** (1.0 / deg))
        with np.errstate(divide="ignore", invalid="ignore"):
            dtau = np.where(
                deg == 1,
                1.0,
                np.sign(H) * np.abs(H) ** (1.0 / deg - 1.0) / deg,
            )
        limit = (deg > 1) & (np.abs(H) < _H_LIMIT)
        dtau = np.where(limit, 0.0, dtau)
        return tau, dtau, limit

    def evaluate(self, x, H, jacobian: bool = False):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        B = H.shape[0]
        if H.shape[1] != self.q:
            raise DimensionMismatch(f"h has {H.shape[1]} entries, frame has q = {self.q}")
        X0 = np.broadcast_to(np.asarray(x, dtype=float), (B, self.n)).copy()
        tau, dtau, limit = self._tau(H)
        gens = self.frame.generators
        y = X0
        records = []  # (block, generator, coef, y_end, D)
        block_end = {}
        segs = self._segments(H)
        for idx, (k, g, c) in enumerate(segs):
            times = c * tau[:, k]
            y, D = flow_batch(gens[g], y, times, self.cfg, tangent=jacobian)
            if jacobian:
                records.append((k, g, c, y, D))
            if idx == len(segs) - 1 or segs[idx + 1][0] != k:
                block_end[k] = y
        if not jacobian:
            return y
        # blocks without segments (identity factors) end where the previous one ended
        last = X0
        for k in range(self.q - 1, -1, -1):
            if k in block_end:
                last = block_end[k]
            else:
                block_end[k] = last
        J = np.zeros((B, self.n, self.q))
        P = np.broadcast_to(np.eye(self.n), (B, self.n, self.n)).copy()
        r = len(records) - 1
        for k in range(self.q):
            if np.any(limit[:, k]):
                Yk = self.frame.fields[k].eval_batch(block_end[k])
                col = np.einsum("bij,bj->bi", P, Yk)
                J[:, :, k] = np.where(limit[:, k, None], col, J[:, :, k])
            while r >= 0 and records[r][0] == k:
                _, g, c, y_end, D = records[r]
                Xg = gens[g].eval_batch(y_end)
                w = c * dtau[:, k]
                J[:, :, k] += np.einsum("bij,bj->bi", P, Xg) * w[:, None]
                P = np.matmul(P, D)
                r -= 1
        return y, J


def e_map(frame: Frame, x, h, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """The point ``E_x(h)``."""
    if isinstance(h, HVector):
        h = h.h
    return EMap(frame, cfg).evaluate(x, np.asarray(h, dtype=float)[None, :])[0]


def _richardson(values: list[np.ndarray]) -> np.ndarray:
    """Extrapolate a sequence computed at steps ``eta, eta/2, eta/4, ...``."""
    table = [values[0]]
    for i in range(1, len(values)):
        row = [values[i]]
        for j in range(1, i + 1):
            f = 2.0**j
            row.append((f * row[j - 1] - table[j - 1]) / (f - 1.0))
        table = row
    return table[-1]


def e_jacobian(
    frame: Frame,
    x,
    h,
    fd_step=None,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    method: str = "tangent",
) -> np.ndarray:
    """The ``n x q`` derivative of ``h -> E_x(h)``.

    ``method="fd"`` uses central differences with per-coordinate step
    ``min(1e-6, 0.01 * (|h_k| + 1e-6))`` (or ``fd_step``).  Where ``h_k = 0``
    for a bracket word of length ``l >= 2`` the difference quotient is a power
    series in ``t**(1/l)``, so it is evaluated on a geometric ladder of steps
    and extrapolated.  ``method="tangent"`` differentiates the discretized map
    exactly via variational equations.
    """
    if isinstance(h, HVector):
        h = h.h
    h = np.asarray(h, dtype=float)
    emap = EMap(frame, cfg)
    if method == "tangent":
        return emap.evaluate(x, h[None, :], jacobian=True)[1][0]
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    q = frame.q
    rows = []
    plan = []
    for k in range(q):
        ell = frame.degrees[k]
        if h[k] == 0.0 and ell > 1 and fd_step is None:
            eta0, levels = _LADDERS.get(ell, _LADDER_LONG)
            steps = [(eta0 / 2.0**i) ** ell for i in range(levels)]
        else:
            steps = [fd_step if fd_step is not None else min(1e-6, 0.01 * (abs(h[k]) + 1e-6))]
        plan.append(steps)
        for dt in steps:
            e = np.zeros(q)
            e[k] = dt
            rows.extend([h + e, h - e])
    pts = emap.evaluate(x, np.array(rows))
    J = np.empty((frame.dim, q))
    i = 0
    for k, steps in enumerate(plan):
        quots = []
        for dt in steps:
            quots.append((pts[i] - pts[i + 1]) / (2.0 * dt))
            i += 2
        J[:, k] = quots[0] if len(quots) == 1 else _richardson(quots)
    return J
