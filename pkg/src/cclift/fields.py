"""Vector fields with exact Jacobians, Lie brackets and bracket words.

Coefficients of built-in fields are :class:`Expr` objects: finite sums of
terms ``c * x**e * (1 + sum_{i in S} x_i**2)**(k/2)`` with an integer
exponent vector ``e`` and an integer ``k``.  Plain polynomials are the case
``k = 0``.  The class is closed under products and partial derivatives, so
brackets of any length are computed exactly, with no finite differences.

Fields defined only through callables (``eval`` and ``jacobian``) are also
supported; their brackets carry a central-difference Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, WordTooLong

__all__ = [
    "Expr",
    "VectorField",
    "Word",
    "Frame",
    "lie_bracket",
    "nested_commutator",
    "enumerate_frame",
    "frame_size",
    "contact_pair",
    "catalog_field",
    "CATALOG",
]


# --------------------------------------------------------------------------- #
# scalar expressions
# --------------------------------------------------------------------------- #

class Expr:
    """Sum of ``c * x**e * u**(k/2)`` with ``u = 1 + sum_{i in radial} x_i**2``."""

    __slots__ = ("dim", "radial", "terms", "_compiled")

    def __init__(self, dim: int, terms=None, radial: Sequence[int] = ()):
        self.dim = int(dim)
        self.radial = tuple(sorted(set(int(i) for i in radial)))
        self.terms: dict[tuple[tuple[int, ...], int], float] = {}
        self._compiled = None
        if terms:
            for key, c in terms.items():
                e, k = key
                e = tuple(int(v) for v in e)
                if len(e) != self.dim:
                    raise DimensionMismatch(f"exponent {e} does not match dimension {self.dim}")
                if c != 0.0:
                    self.terms[(e, int(k))] = self.terms.get((e, int(k)), 0.0) + float(c)
            self.terms = {key: c for key, c in self.terms.items() if c != 0.0}
        if not self.uses_radial:
            self.radial = ()

    # construction ---------------------------------------------------------- #
    @classmethod
    def const(cls, dim: int, c: float) -> "Expr":
        return cls(dim, {((0,) * dim, 0): c})

    @classmethod
    def var(cls, dim: int, i: int) -> "Expr":
        e = [0] * dim
        e[i] = 1
        return cls(dim, {(tuple(e), 0): 1.0})

    @classmethod
    def radial_power(cls, dim: int, radial: Sequence[int], k: int) -> "Expr":
        """``(1 + sum_{i in radial} x_i^2)^(k/2)``."""
        return cls(dim, {((0,) * dim, int(k)): 1.0}, radial=radial)

    @classmethod
    def from_monomials(cls, dim: int, monomials) -> "Expr":
        """Polynomial from ``[[coefficient, [e_1, ..., e_n]], ...]``."""
        terms: dict = {}
        for coef, exps in monomials:
            key = (tuple(int(v) for v in exps), 0)
            if len(key[0]) != dim:
                raise DimensionMismatch(f"monomial exponent {exps} does not match dimension {dim}")
            terms[key] = terms.get(key, 0.0) + float(coef)
        return cls(dim, terms)

    # properties ------------------------------------------------------------ #
    @property
    def uses_radial(self) -> bool:
        return any(k != 0 for (_, k) in self.terms)

    @property
    def is_polynomial(self) -> bool:
        return not self.uses_radial

    def is_zero(self) -> bool:
        return not self.terms

    def monomials(self) -> list:
        if not self.is_polynomial:
            raise ValueError("expression is not a polynomial")
        return [[c, list(e)] for (e, _), c in sorted(self.terms.items())]

    # arithmetic ------------------------------------------------------------ #
    def _radial_with(self, other: "Expr") -> tuple[int, ...]:
        if self.dim != other.dim:
            raise DimensionMismatch(f"dimensions {self.dim} and {other.dim} differ")
        if self.uses_radial and other.uses_radial and self.radial != other.radial:
            raise ValueError(f"incompatible radial weights {self.radial} and {other.radial}")
        return self.radial if self.uses_radial else other.radial

    def _coerce(self, other) -> "Expr":
        if isinstance(other, Expr):
            return other
        return Expr.const(self.dim, float(other))

    def __add__(self, other) -> "Expr":
        other = self._coerce(other)
        radial = self._radial_with(other)
        terms = dict(self.terms)
        for key, c in other.terms.items():
            terms[key] = terms.get(key, 0.0) + c
        return Expr(self.dim, terms, radial)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr(self.dim, {key: -c for key, c in self.terms.items()}, self.radial)

    def __sub__(self, other) -> "Expr":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Expr":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Expr":
        if not isinstance(other, Expr):
            c0 = float(other)
            return Expr(self.dim, {key: c * c0 for key, c in self.terms.items()}, self.radial)
        radial = self._radial_with(other)
        terms: dict = {}
        for (e1, k1), c1 in self.terms.items():
            for (e2, k2), c2 in other.terms.items():
                key = (tuple(a + b for a, b in zip(e1, e2)), k1 + k2)
                terms[key] = terms.get(key, 0.0) + c1 * c2
        return Expr(self.dim, terms, radial)

    __rmul__ = __mul__

    def diff(self, i: int) -> "Expr":
        terms: dict = {}
        in_radial = i in self.radial
        for (e, k), c in self.terms.items():
            if e[i] > 0:
                e2 = list(e)
                e2[i] -= 1
                key = (tuple(e2), k)
                terms[key] = terms.get(key, 0.0) + c * e[i]
            if in_radial and k != 0:
                # d/dx_i u^(k/2) = k x_i u^((k-2)/2)
                e2 = list(e)
                e2[i] += 1
                key = (tuple(e2), k - 2)
                terms[key] = terms.get(key, 0.0) + c * k
        return Expr(self.dim, terms, self.radial)

    def gradient(self) -> list["Expr"]:
        return [self.diff(i) for i in range(self.dim)]

    # evaluation ------------------------------------------------------------ #
    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        out = _Block([self], self.dim)(flat)[:, 0]
        return out.reshape(x.shape[:-1])

    def __repr__(self) -> str:
        if not self.terms:
            return "Expr(0)"
        parts = []
        for (e, k), c in sorted(self.terms.items()):
            mono = "*".join(f"x{i}^{p}" if p > 1 else f"x{i}" for i, p in enumerate(e) if p)
            rad = f"u^({k}/2)" if k else ""
            body = "*".join(s for s in (mono, rad) if s)
            parts.append(f"{c:+.6g}" + (f"*{body}" if body else ""))
        return "Expr(" + " ".join(parts) + ")"


class _Block:
    """Vectorized evaluator for a list of expressions sharing a dimension."""

    def __init__(self, exprs: Sequence[Expr], dim: int):
        self.dim = dim
        keys: dict = {}
        radial: tuple[int, ...] = ()
        for ex in exprs:
            if ex.uses_radial:
                if radial and ex.radial != radial:
                    raise ValueError("mixed radial weights in one field")
                radial = ex.radial
            for key in ex.terms:
                keys.setdefault(key, len(keys))
        self.radial = np.array(radial, dtype=int)
        nkeys = len(keys)
        self.E = np.zeros((nkeys, dim), dtype=int)
        self.K = np.zeros(nkeys, dtype=float)
        for (e, k), j in keys.items():
            self.E[j] = e
            self.K[j] = 0.5 * k
        self.C = np.zeros((nkeys, len(exprs)))
        for col, ex in enumerate(exprs):
            for key, c in ex.terms.items():
                self.C[keys[key], col] += c
        self.nout = len(exprs)
        self.has_radial = bool(np.any(self.K != 0.0))
        self.maxdeg = self.E.max(axis=0) if nkeys else np.zeros(dim, dtype=int)
        self.const_only = nkeys > 0 and not self.E.any() and not self.has_radial

    def __call__(self, X: np.ndarray) -> np.ndarray:
        B = X.shape[0]
        if self.C.shape[0] == 0:
            return np.zeros((B, self.nout))
        if self.const_only:
            return np.broadcast_to(self.C.sum(axis=0), (B, self.nout)).copy()
        mon = np.ones((B, self.C.shape[0]))
        for i in range(self.dim):
            d = int(self.maxdeg[i])
            if d == 0:
                continue
            # power table x_i^0..x_i^d, gathered by exponent
            pw = np.empty((B, d + 1))
            pw[:, 0] = 1.0
            for j in range(1, d + 1):
                pw[:, j] = pw[:, j - 1] * X[:, i]
            mon *= pw[:, self.E[:, i]]
        if self.has_radial:
            u = 1.0 + np.sum(X[:, self.radial] ** 2, axis=1)
            mon *= u[:, None] ** self.K[None, :]
        return mon @ self.C


# --------------------------------------------------------------------------- #
# vector fields
# --------------------------------------------------------------------------- #

def _fd_jacobian(func: Callable, X: np.ndarray) -> np.ndarray:
    """Central differences with step ``1e-5 * (|x| + 1)`` per row."""
    B, n = X.shape
    h = 1e-5 * (np.linalg.norm(X, axis=1) + 1.0)
    J = np.empty((B, n, n))
    for j in range(n):
        dX = np.zeros_like(X)
        dX[:, j] = h
        J[:, :, j] = (func(X + dX) - func(X - dX)) / (2.0 * h[:, None])
    return J


class VectorField:
    """A vector field on an open subset of ``R^n``.

    Either built from coefficient expressions (``components``), which gives
    exact Jacobians and exact brackets, or from callables ``func`` and
    ``jac`` acting on arrays of shape ``(B, n)``.
    """

    def __init__(
        self,
        dim: int,
        components: Sequence[Expr] | None = None,
        func: Callable | None = None,
        jac: Callable | None = None,
        name: str | None = None,
        form: str | None = None,
    ):
        self.dim = int(dim)
        self.name = name
        self.components = None
        if components is not None:
            comps = list(components)
            if len(comps) != self.dim or any(c.dim != self.dim for c in comps):
                raise DimensionMismatch("components must be a list of n expressions in n variables")
            self.components = comps
            self._value_block = _Block(comps, self.dim)
            self._jac_block = _Block([c.diff(j) for c in comps for j in range(self.dim)], self.dim)
            self.form = "polynomial" if all(c.is_polynomial for c in comps) else "analytic"
        else:
            if func is None:
                raise ValueError("need components or func")
            self._func = func
            self._jac = jac
            self.form = form or ("analytic" if jac is not None else "bracket")

    # construction ---------------------------------------------------------- #
    @classmethod
    def from_monomials(cls, dim: int, components, name: str | None = None) -> "VectorField":
        return cls(dim, [Expr.from_monomials(dim, comp) for comp in components], name=name)

    @classmethod
    def coordinate(cls, dim: int, i: int, name: str | None = None) -> "VectorField":
        comps = [Expr.const(dim, 1.0 if j == i else 0.0) for j in range(dim)]
        return cls(dim, comps, name=name or f"d{i}")

    @property
    def is_exact(self) -> bool:
        return self.components is not None

    def is_zero(self) -> bool:
        return self.is_exact and all(c.is_zero() for c in self.components)

    # evaluation ------------------------------------------------------------ #
    def _flat(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"point has dimension {x.shape[-1]}, field has {self.dim}")
        return x, x.reshape(-1, self.dim)

    def eval_batch(self, X: np.ndarray) -> np.ndarray:
        """Values at the rows of a ``(B, n)`` array."""
        if self.components is not None:
            return self._value_block(X)
        return np.asarray(self._func(X), dtype=float).reshape(X.shape[0], self.dim)

    def jacobian_batch(self, X: np.ndarray) -> np.ndarray:
        if self.components is not None:
            return self._jac_block(X).reshape(X.shape[0], self.dim, self.dim)
        if self._jac is not None:
            return np.asarray(self._jac(X), dtype=float).reshape(X.shape[0], self.dim, self.dim)
        return _fd_jacobian(self.eval_batch, X)

    def __call__(self, x) -> np.ndarray:
        x, flat = self._flat(x)
        return self.eval_batch(flat).reshape(x.shape)

    eval = __call__

    def jacobian(self, x) -> np.ndarray:
        x, flat = self._flat(x)
        return self.jacobian_batch(flat).reshape(x.shape + (self.dim,))

    def apply(self, f: Expr) -> Expr:
        """The derivative ``X f = sum_a X^a d_a f`` of a scalar expression."""
        if self.components is None:
            raise TypeError("apply() needs an exact (expression-backed) field")
        out = Expr(self.dim)
        for a, c in enumerate(self.components):
            if not c.is_zero():
                out = out + c * f.diff(a)
        return out

    # arithmetic ------------------------------------------------------------ #
    def __add__(self, other: "VectorField") -> "VectorField":
        return self.combine([1.0, 1.0], [self, other])

    def __sub__(self, other: "VectorField") -> "VectorField":
        return self.combine([1.0, -1.0], [self, other])

    def __rmul__(self, c: float) -> "VectorField":
        return self.combine([float(c)], [self])

    def __neg__(self) -> "VectorField":
        return self.combine([-1.0], [self])

    @staticmethod
    def combine(coefs: Sequence[float], fields: Sequence["VectorField"], name=None) -> "VectorField":
        """Constant-coefficient linear combination ``sum_j c_j X_j``."""
        dim = fields[0].dim
        if any(f.dim != dim for f in fields):
            raise DimensionMismatch("fields have different dimensions")
        coefs = [float(c) for c in coefs]
        if all(f.is_exact for f in fields):
            comps = []
            for a in range(dim):
                e = Expr(dim)
                for c, f in zip(coefs, fields):
                    if c != 0.0:
                        e = e + f.components[a] * c
                comps.append(e)
            return VectorField(dim, comps, name=name)

        def func(X):
            return sum(c * f.eval_batch(X) for c, f in zip(coefs, fields))

        def jac(X):
            return sum(c * f.jacobian_batch(X) for c, f in zip(coefs, fields))

        return VectorField(dim, func=func, jac=jac, name=name, form="analytic")

    def __repr__(self) -> str:
        return f"VectorField({self.name or '?'}, dim={self.dim}, form={self.form})"


def lie_bracket(X: VectorField, Y: VectorField, name: str | None = None) -> VectorField:
    """``[X, Y] = JY X - JX Y``.

    Exact when both fields are expression-backed; otherwise the result is
    evaluated from the parents' Jacobians and differentiated numerically.
    """
    if X.dim != Y.dim:
        raise DimensionMismatch(f"cannot bracket fields of dimension {X.dim} and {Y.dim}")
    n = X.dim
    if X.is_exact and Y.is_exact:
        comps = []
        for a in range(n):
            e = Expr(n)
            for b in range(n):
                if not X.components[b].is_zero():
                    e = e + X.components[b] * Y.components[a].diff(b)
                if not Y.components[b].is_zero():
                    e = e - Y.components[b] * X.components[a].diff(b)
            comps.append(e)
        return VectorField(n, comps, name=name)

    def func(Z):
        return np.einsum("bij,bj->bi", Y.jacobian_batch(Z), X.eval_batch(Z)) - np.einsum(
            "bij,bj->bi", X.jacobian_batch(Z), Y.eval_batch(Z)
        )

    return VectorField(n, func=func, jac=None, name=name, form="bracket")


# --------------------------------------------------------------------------- #
# words and frames
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Word:
    """A bracket word ``w_1 ... w_l`` over generator labels ``1..m``."""

    letters: tuple[int, ...]

    def __post_init__(self):
        letters = tuple(int(v) for v in self.letters)
        if not letters:
            raise ValueError("a word must be nonempty")
        if min(letters) < 1:
            raise ValueError(f"letters are 1-based generator labels, got {letters}")
        object.__setattr__(self, "letters", letters)

    @property
    def length(self) -> int:
        return len(self.letters)

    def __len__(self) -> int:
        return len(self.letters)

    def __iter__(self):
        return iter(self.letters)

    def __str__(self) -> str:
        return "".join(str(v) for v in self.letters) if max(self.letters) < 10 else ".".join(
            str(v) for v in self.letters
        )


def _as_word(w) -> Word:
    return w if isinstance(w, Word) else Word(tuple(w) if not isinstance(w, int) else (w,))


def nested_commutator(
    word, generators: Sequence[VectorField], s: int | None = None, _cache: dict | None = None
) -> VectorField:
    """Right-nested bracket ``[X_{w1}, [X_{w2}, ... [X_{w_{l-1}}, X_{w_l}] ...]]``."""
    w = _as_word(word)
    if s is not None and w.length > s:
        raise WordTooLong(f"word {w} has length {w.length} > s = {s}")
    if max(w.letters) > len(generators):
        raise ValueError(f"word {w} uses a letter beyond the {len(generators)} generators")
    cache = {} if _cache is None else _cache
    return _nested(w.letters, generators, cache)


def _nested(letters: tuple[int, ...], generators, cache) -> VectorField:
    if letters in cache:
        return cache[letters]
    if len(letters) == 1:
        out = generators[letters[0] - 1]
    else:
        out = lie_bracket(
            generators[letters[0] - 1], _nested(letters[1:], generators, cache), name="X" + "".join(map(str, letters))
        )
    cache[letters] = out
    return out


def frame_size(m: int, s: int) -> int:
    return sum(m**ell for ell in range(1, s + 1))


@dataclass
class Frame:
    """The family ``Y_1..Y_q`` of all nested commutators of length at most ``s``.

    Words are ordered by length, then lexicographically.
    """

    generators: list[VectorField]
    words: list[Word]
    fields: list[VectorField]
    degrees: list[int]
    s: int
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {w.letters: j for j, w in enumerate(self.words)}

    @property
    def q(self) -> int:
        return len(self.fields)

    @property
    def m(self) -> int:
        return len(self.generators)

    @property
    def dim(self) -> int:
        return self.generators[0].dim

    def index(self, word) -> int:
        """0-based position of a word in the enumeration."""
        return self._index[_as_word(word).letters]

    def values(self, x) -> np.ndarray:
        """The matrix ``[Y_1(x), ..., Y_q(x)]``; batched input gives ``(B, n, q)``."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        cols = np.stack([Y.eval_batch(flat) for Y in self.fields], axis=-1)
        return cols.reshape(x.shape[:-1] + (self.dim, self.q))

    def control_field(self, b: Sequence[float], name=None) -> VectorField:
        """``sum_j b_j Y_j`` for a constant control vector ``b``."""
        return VectorField.combine(list(b), self.fields, name=name)


def enumerate_frame(generators: Sequence[VectorField], s: int) -> Frame:
    if s < 1:
        raise ValueError("s must be >= 1")
    generators = list(generators)
    m = len(generators)
    dims = {g.dim for g in generators}
    if len(dims) != 1:
        raise DimensionMismatch("generators have different dimensions")
    cache: dict = {}
    words, fields, degrees = [], [], []
    for ell in range(1, s + 1):
        for letters in product(range(1, m + 1), repeat=ell):
            words.append(Word(letters))
            fields.append(_nested(letters, generators, cache))
            degrees.append(ell)
    return Frame(generators=generators, words=words, fields=fields, degrees=degrees, s=s)


# --------------------------------------------------------------------------- #
# registered analytic fields
# --------------------------------------------------------------------------- #

def contact_pair(potential: Expr, names=("X1", "X2")) -> tuple[VectorField, VectorField]:
    """``X1 = d_1 + (d_2 p) d_t`` and ``X2 = d_2 - (d_1 p) d_t`` on ``R^2 x R``."""
    n = potential.dim
    if n != 3:
        raise DimensionMismatch("contact pairs live on R^3 with coordinates (x1, x2, t)")
    zero, one = Expr.const(3, 0.0), Expr.const(3, 1.0)
    X1 = VectorField(3, [one, zero, potential.diff(1)], name=names[0])
    X2 = VectorField(3, [zero, one, -potential.diff(0)], name=names[1])
    return X1, X2


def _cierre_potential() -> Expr:
    # (1 + |x|^2)^(1/2) - 1, with |x| over the first two coordinates only
    return Expr.radial_power(3, (0, 1), 1) - 1.0


def _siegel_potential() -> Expr:
    x1, x2 = Expr.var(3, 0), Expr.var(3, 1)
    r2 = x1 * x1 + x2 * x2
    return r2 * r2


CATALOG: dict[str, Callable[[], VectorField]] = {
    "cierre:X1": lambda: contact_pair(_cierre_potential())[0],
    "cierre:X2": lambda: contact_pair(_cierre_potential())[1],
    "siegel:X1": lambda: contact_pair(_siegel_potential())[0],
    "siegel:X2": lambda: contact_pair(_siegel_potential())[1],
}


def catalog_field(name: str) -> VectorField:
    try:
        make = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog field {name!r}; known: {sorted(CATALOG)}") from None
    X = make()
    X.name = name
    return X
