"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` holds the Taylor coefficients ``t[alpha] = d^alpha u / alpha!``
of a function at a base point, for every multi-index of total degree up to
``degree``.  Products are truncated at ``degree``.  Coefficients are laid out
degree by degree in graded-lexicographic order (see :func:`enumerate_indices`).
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np


def enumerate_indices(n: int, j: int) -> list[tuple[int, ...]]:
    """All multi-indices of order ``j`` in dimension ``n``, graded-lex.

    >>> enumerate_indices(2, 2)
    [(2, 0), (1, 1), (0, 2)]
    """
    if n < 1 or j < 0:
        raise ValueError(f"need n >= 1 and j >= 0, got n={n}, j={j}")
    if n == 1:
        return [(j,)]
    out = []
    for first in range(j, -1, -1):
        for rest in enumerate_indices(n - 1, j - first):
            out.append((first, *rest))
    return out


class IndexTable:
    """Cached bookkeeping for dimension ``n`` and maximum degree ``D``."""

    def __init__(self, n: int, D: int):
        self.n = n
        self.D = D
        exps = []
        self.offsets = [0]
        for j in range(D + 1):
            block = enumerate_indices(n, j)
            exps.extend(block)
            self.offsets.append(self.offsets[-1] + len(block))
        self.exps = np.array(exps, dtype=np.int64).reshape(-1, n)
        self.size = len(exps)
        self.position = {e: i for i, e in enumerate(exps)}
        self.order = self.exps.sum(axis=1)
        self.factorial = np.array(
            [math.prod(math.factorial(int(a)) for a in e) for e in self.exps], dtype=float
        )

        # product table: (ia, ib) -> ic for deg(ia) + deg(ib) <= D
        ia, ib, ic = [], [], []
        for a in range(self.size):
            for b in range(self.size):
                if self.order[a] + self.order[b] <= D:
                    ia.append(a)
                    ib.append(b)
                    ic.append(self.position[tuple(self.exps[a] + self.exps[b])])
        self.mul_a = np.array(ia, dtype=np.int64)
        self.mul_b = np.array(ib, dtype=np.int64)
        self.mul_c = np.array(ic, dtype=np.int64)

        # d/dx_i maps t[alpha] -> alpha_i * t[alpha] at alpha - e_i
        self.diff = []
        for i in range(n):
            src, dst, fac = [], [], []
            for a in range(self.size):
                e = self.exps[a]
                if e[i] > 0:
                    lower = e.copy()
                    lower[i] -= 1
                    src.append(a)
                    dst.append(self.position[tuple(lower)])
                    fac.append(float(e[i]))
            self.diff.append(
                (np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(fac))
            )

    def block(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j + 1])


@lru_cache(maxsize=None)
def index_table(n: int, D: int) -> IndexTable:
    return IndexTable(n, D)


class Jet:
    """Truncated Taylor expansion in ``n`` variables."""

    __slots__ = ("table", "coef")

    def __init__(self, table: IndexTable, coef: np.ndarray | None = None):
        self.table = table
        if coef is None:
            coef = np.zeros(table.size)
        self.coef = np.asarray(coef, dtype=float)

    # construction -------------------------------------------------------

    @classmethod
    def constant(cls, n: int, D: int, value: float) -> Jet:
        jet = cls(index_table(n, D))
        jet.coef[0] = value
        return jet

    @classmethod
    def variable(cls, n: int, D: int, i: int, value: float = 0.0) -> Jet:
        """The coordinate ``x_i`` expanded about a point where it equals ``value``."""
        table = index_table(n, D)
        jet = cls(table)
        jet.coef[0] = value
        if D >= 1:
            e = [0] * n
            e[i] = 1
            jet.coef[table.position[tuple(e)]] = 1.0
        return jet

    @classmethod
    def from_partials(cls, blocks: Sequence[np.ndarray], n: int, D: int | None = None) -> Jet:
        """Build from raw partial-derivative blocks (block ``j`` graded-lex)."""
        D = len(blocks) - 1 if D is None else D
        table = index_table(n, D)
        jet = cls(table)
        for j, values in enumerate(blocks[: D + 1]):
            sl = table.block(j)
            jet.coef[sl] = np.asarray(values, dtype=float) / table.factorial[sl]
        return jet

    # properties ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def degree(self) -> int:
        return self.table.D

    @property
    def value(self) -> float:
        return float(self.coef[0])

    def copy(self) -> Jet:
        return Jet(self.table, self.coef.copy())

    def partials(self, j: int) -> np.ndarray:
        """Raw partial derivatives of order ``j`` at the base point."""
        sl = self.table.block(j)
        return self.coef[sl] * self.table.factorial[sl]

    def taylor_block(self, j: int) -> np.ndarray:
        return self.coef[self.table.block(j)]

    def truncate(self, D: int) -> Jet:
        """Re-express with maximum degree ``D`` (dropping or zero-padding)."""
        table = index_table(self.n, D)
        out = Jet(table)
        m = min(table.size, self.table.size)
        out.coef[:m] = self.coef[:m]
        return out

    # arithmetic ---------------------------------------------------------

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Jet):
            if other.table is not self.table:
                raise ValueError("jets of different shape")
            return other.coef
        out = np.zeros(self.table.size)
        out[0] = float(other)
        return out

    def __add__(self, other) -> Jet:
        return Jet(self.table, self.coef + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other) -> Jet:
        return Jet(self.table, self.coef - self._coerce(other))

    def __rsub__(self, other) -> Jet:
        return Jet(self.table, self._coerce(other) - self.coef)

    def __neg__(self) -> Jet:
        return Jet(self.table, -self.coef)

    def __mul__(self, other) -> Jet:
        if not isinstance(other, Jet):
            return Jet(self.table, self.coef * float(other))
        b = self._coerce(other)
        t = self.table
        prod = np.bincount(t.mul_c, weights=self.coef[t.mul_a] * b[t.mul_b], minlength=t.size)
        return Jet(t, prod)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Jet:
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.table, self.coef / float(other))

    def __pow__(self, k: int) -> Jet:
        out = Jet.constant(self.n, self.degree, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def diff(self, i: int) -> Jet:
        """d/dx_i; the top-degree block of the result is zero."""
        src, dst, fac = self.table.diff[i]
        out = np.zeros(self.table.size)
        np.add.at(out, dst, fac * self.coef[src])
        return Jet(self.table, out)

    def gradient(self) -> list[Jet]:
        return [self.diff(i) for i in range(self.n)]

    def compose(self, derivs: Sequence[float]) -> Jet:
        """Apply a univariate function given its derivatives at ``self.value``."""
        h = self - self.value
        out = Jet.constant(self.n, self.degree, derivs[0])
        power = Jet.constant(self.n, self.degree, 1.0)
        for k in range(1, self.degree + 1):
            power = power * h
            out = out + power * (derivs[k] / math.factorial(k))
        return out

    def reciprocal(self) -> Jet:
        a = self.value
        if a == 0.0:
            raise ZeroDivisionError("reciprocal of a jet with zero constant term")
        derivs = [math.factorial(k) * (-1) ** k / a ** (k + 1) for k in range(self.degree + 1)]
        return self.compose(derivs)

    def sin(self) -> Jet:
        return self.compose(_trig_derivs(self.value, self.degree, math.sin, math.cos))

    def cos(self) -> Jet:
        return self.compose(_trig_derivs(self.value, self.degree, math.cos, lambda a: -math.sin(a)))

    def sec(self) -> Jet:
        return self.cos().reciprocal()

    # evaluation ---------------------------------------------------------

    def __call__(self, y) -> np.ndarray | float:
        """Evaluate the truncated series at displacement(s) ``y`` from the base point."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        Y = np.atleast_2d(y)
        mono = np.prod(Y[:, None, :] ** self.table.exps[None, :, :], axis=2)
        vals = mono @ self.coef
        return float(vals[0]) if single else vals

    def __repr__(self) -> str:
        return f"Jet(n={self.n}, degree={self.degree}, value={self.value:.6g})"


def _trig_derivs(a: float, D: int, f: Callable, fp: Callable) -> list[float]:
    # derivatives cycle f, f', -f, -f'
    base = [f(a), fp(a), -f(a), -fp(a)]
    return [base[k % 4] for k in range(D + 1)]


def dot(u: Sequence[Jet], v: Sequence[Jet]) -> Jet:
    out = u[0] * v[0]
    for a, b in zip(u[1:], v[1:]):
        out = out + a * b
    return out
