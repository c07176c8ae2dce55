"""Polynomials stored as blocks of partial derivatives about a center.

Block ``k`` of a :class:`CoeffSet` holds the raw ``k``-th order partials
``d^k P / dx^alpha`` (not divided by ``alpha!``) for the order-``k``
multi-indices in graded-lexicographic order, so that::

    P(x) = sum_alpha C[alpha] * (x - center)^alpha / alpha!

Kronecker rows lay the same partials out over ordered index tuples
``(i1, ..., ik)`` at position ``sum_m i_m * n**(k - m)``, which is the layout
``numpy.kron`` produces.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .jet import Jet, enumerate_indices, index_table

__all__ = [
    "CoeffSet",
    "enumerate_indices",
    "sym_to_kron",
    "kron_to_sym",
    "poly_eval",
    "poly_partials",
    "affine_change",
    "recover_partials",
    "householder_basis",
    "kron_power",
]


@dataclass(frozen=True, eq=False)
class CoeffSet:
    """Partial derivatives of a polynomial of degree ``len(blocks) - 1`` at ``center``."""

    blocks: tuple[np.ndarray, ...]
    center: np.ndarray = field(repr=False)

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(-1)
        n = center.size
        blocks = tuple(np.asarray(b, dtype=float).reshape(-1) for b in self.blocks)
        for k, b in enumerate(blocks):
            if b.size != math.comb(n + k - 1, k):
                raise ValueError(f"block {k} has {b.size} entries, expected {math.comb(n + k - 1, k)}")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"block {k} has non-finite entries")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def degree(self) -> int:
        return len(self.blocks) - 1

    @classmethod
    def zeros(cls, n: int, degree: int, center=None) -> CoeffSet:
        center = np.zeros(n) if center is None else center
        return cls(tuple(np.zeros(math.comb(n + k - 1, k)) for k in range(degree + 1)), center)

    @classmethod
    def from_jet(cls, jet: Jet, center) -> CoeffSet:
        return cls(tuple(jet.partials(k) for k in range(jet.degree + 1)), center)

    def to_jet(self, degree: int | None = None) -> Jet:
        return Jet.from_partials(self.blocks, self.dim, self.degree if degree is None else degree)

    def __sub__(self, other: CoeffSet) -> CoeffSet:
        if not np.array_equal(self.center, other.center) or self.degree != other.degree:
            raise ValueError("coefficient sets differ in center or degree")
        return CoeffSet(tuple(a - b for a, b in zip(self.blocks, other.blocks)), self.center)

    def __add__(self, other: CoeffSet) -> CoeffSet:
        if not np.array_equal(self.center, other.center) or self.degree != other.degree:
            raise ValueError("coefficient sets differ in center or degree")
        return CoeffSet(tuple(a + b for a, b in zip(self.blocks, other.blocks)), self.center)

    def max_abs_diff(self, other: CoeffSet) -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.blocks, other.blocks))

    # vectorised evaluation ---------------------------------------------

    @cached_property
    def _taylor(self) -> np.ndarray:
        return self.to_jet().coef

    @cached_property
    def _grad_taylor(self) -> np.ndarray:
        jet = self.to_jet()
        return np.stack([jet.diff(i).coef for i in range(self.dim)], axis=1)

    def _monomials(self, X: np.ndarray) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(X, dtype=float)) - self.center
        exps = index_table(self.dim, self.degree).exps
        return np.prod(Y[:, None, :] ** exps[None, :, :], axis=2)

    def __call__(self, X):
        """Evaluate at one point (returns float) or at rows of ``X``."""
        X = np.asarray(X, dtype=float)
        vals = self._monomials(X) @ self._taylor
        return float(vals[0]) if X.ndim == 1 else vals

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        g = self._monomials(X) @ self._grad_taylor
        return g[0] if X.ndim == 1 else g

    # serialisation ------------------------------------------------------

    def rows(self):
        """Yield ``(order, exponents, value)`` per multi-index."""
        for k, block in enumerate(self.blocks):
            for alpha, v in zip(enumerate_indices(self.dim, k), block):
                yield k, alpha, float(v)

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["order", *[f"e{i + 1}" for i in range(self.dim)], "value"])
            w.writerow(["center", *[repr(float(c)) for c in self.center], ""])
            for k, alpha, v in self.rows():
                w.writerow([k, *alpha, repr(v)])

    @classmethod
    def from_csv(cls, path: str | Path) -> CoeffSet:
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        n = len(rows[0]) - 2
        center = np.array([float(v) for v in rows[1][1 : n + 1]])
        degree = max(int(r[0]) for r in rows[2:])
        blocks = [np.zeros(math.comb(n + k - 1, k)) for k in range(degree + 1)]
        lookup = {k: {a: i for i, a in enumerate(enumerate_indices(n, k))} for k in range(degree + 1)}
        for r in rows[2:]:
            k = int(r[0])
            alpha = tuple(int(v) for v in r[1 : n + 1])
            blocks[k][lookup[k][alpha]] = float(r[-1])
        return cls(tuple(blocks), center)


# Kronecker layout ---------------------------------------------------------


def _tuple_to_multi(t: Sequence[int], n: int) -> tuple[int, ...]:
    counts = [0] * n
    for i in t:
        counts[i] += 1
    return tuple(counts)


def _kron_positions(n: int, k: int) -> np.ndarray:
    """For each Kronecker position, the index of its multi-index within block ``k``."""
    lookup = {a: i for i, a in enumerate(enumerate_indices(n, k))}
    return np.array(
        [lookup[_tuple_to_multi(t, n)] for t in itertools.product(range(n), repeat=k)],
        dtype=np.int64,
    )


def sym_to_kron(block, n: int) -> np.ndarray:
    """Spread a symmetric block of order ``k`` over all ``n**k`` index tuples."""
    block = np.asarray(block, dtype=float)
    k = _block_order(block.size, n)
    return block[_kron_positions(n, k)]


def kron_to_sym(row, n: int) -> np.ndarray:
    """Collapse a Kronecker row to its symmetric block, averaging over permutations."""
    row = np.asarray(row, dtype=float)
    k = round(math.log(row.size, n)) if n > 1 else row.size - 1
    if n ** k != row.size:
        raise ValueError(f"row length {row.size} is not a power of {n}")
    pos = _kron_positions(n, k)
    size = math.comb(n + k - 1, k)
    mean = np.bincount(pos, weights=row, minlength=size) / np.bincount(pos, minlength=size)
    # groups whose entries already agree are returned bit-exactly
    first = np.empty(size)
    first[pos[::-1]] = row[::-1]
    spread = np.zeros(size)
    np.maximum.at(spread, pos, np.abs(row - first[pos]))
    return np.where(spread == 0.0, first, mean)


def _block_order(size: int, n: int) -> int:
    for k in range(64):
        c = math.comb(n + k - 1, k)
        if c == size:
            return k
        if c > size:
            break
    raise ValueError(f"{size} entries is not a symmetric block size for dimension {n}")


def kron_power(M: np.ndarray, k: int) -> np.ndarray:
    out = np.ones((1, 1))
    for _ in range(k):
        out = np.kron(out, M)
    return out


# evaluation and change of variables ------------------------------------------


def poly_eval(C: CoeffSet, x) -> float:
    """``sum_alpha C[alpha] (x - center)^alpha / alpha!`` at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (C.dim,):
        raise ValueError(f"point has shape {x.shape}, expected ({C.dim},)")
    return C(x)


def affine_change(C: CoeffSet, V, a) -> CoeffSet:
    """Re-expand ``xi -> P(C, a + V xi)`` about ``xi = 0``.

    The result is exact: composing a polynomial with an affine map keeps its
    degree.
    """
    V = np.asarray(V, dtype=float)
    a = np.asarray(a, dtype=float)
    n, D = C.dim, C.degree
    if V.shape != (n, n) or a.shape != (n,):
        raise ValueError("dimension mismatch in affine_change")
    shift = a - C.center
    subs = []
    for i in range(n):
        s = Jet.constant(n, D, shift[i])
        if D >= 1:
            s.coef[index_table(n, D).block(1)] = V[i]
        subs.append(s)
    # powers of each substituted coordinate
    powers = [[Jet.constant(n, D, 1.0)] for _ in range(n)]
    for i in range(n):
        for _ in range(D):
            powers[i].append(powers[i][-1] * subs[i])
    table = index_table(n, D)
    taylor = C.to_jet().coef
    out = Jet(table)
    for idx in range(table.size):
        t = taylor[idx]
        if t == 0.0:
            continue
        term = None
        for i, e in enumerate(table.exps[idx]):
            if e:
                term = powers[i][e] if term is None else term * powers[i][e]
        out = out + (t if term is None else term * t)
    return CoeffSet.from_jet(out, np.zeros(n))


def poly_partials(C: CoeffSet, x, k: int) -> np.ndarray:
    """Order-``k`` partials of the polynomial at ``x`` (graded-lex block)."""
    if k > C.degree:
        raise ValueError(f"order {k} exceeds polynomial degree {C.degree}")
    x = np.asarray(x, dtype=float)
    if np.array_equal(x, C.center):
        return C.blocks[k].copy()
    return affine_change(C, np.eye(C.dim), x).blocks[k]


def recover_partials(hat_blocks: Sequence[np.ndarray], V) -> list[np.ndarray]:
    """Map partials taken in rotated coordinates ``x = x0 + V xi`` back to ``x``.

    Each order is contracted in Kronecker form against ``V^T (x) ... (x) V^T``.
    """
    V = np.asarray(V, dtype=float)
    n = V.shape[0]
    out = []
    for k, block in enumerate(hat_blocks):
        block = np.asarray(block, dtype=float)
        if block.size != math.comb(n + k - 1, k):
            raise ValueError(f"block {k} does not match dimension {n}")
        if k == 0:
            out.append(block.copy())
            continue
        row = sym_to_kron(block, n) @ kron_power(V.T, k)
        out.append(kron_to_sym(row, n))
    return out


def householder_basis(v) -> np.ndarray:
    """Orthogonal matrix whose first column is ``v / |v|``.

    Built from the Householder reflector that sends ``v`` to a multiple of
    ``e1``, with the sign chosen to avoid cancellation.
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if not norm > 0.0 or not np.isfinite(norm):
        raise ValueError("householder_basis needs a nonzero finite vector")
    u = v / norm
    s = 1.0 if u[0] >= 0.0 else -1.0
    w = u.copy()
    w[0] += s
    H = np.eye(v.size) - 2.0 * np.outer(w, w) / (w @ w)
    # H u = -s e1, so H e1 = -s u; flip that column back to u exactly
    H[:, 0] = u
    return H
