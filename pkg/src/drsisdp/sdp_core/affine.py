"""Affine matrix expressions in the decision vector, for assembling LMIs.

An :class:`Affine` is ``const + sum_i x_i * coef[i]`` with constant-shaped
matrices; it supports the handful of operations needed to write block LMIs
(addition, constant left/right products, transpose, block assembly).
"""
from __future__ import annotations

import numpy as np

from .program import LmiBlock


class Affine:
    __slots__ = ("const", "terms")
    # make ndarray @ Affine dispatch to __rmatmul__
    __array_ufunc__ = None

    def __init__(self, const, terms=None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = {} if terms is None else terms

    @property
    def shape(self):
        return self.const.shape

    @classmethod
    def zeros(cls, r, c):
        return cls(np.zeros((r, c)))

    def __add__(self, other):
        other = other if isinstance(other, Affine) else Affine(other)
        terms = dict(self.terms)
        for i, M in other.terms.items():
            terms[i] = terms[i] + M if i in terms else M
        return Affine(self.const + other.const, terms)

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = other if isinstance(other, Affine) else Affine(other)
        return self + (-other)

    def __mul__(self, s: float):
        return Affine(self.const * s, {i: M * s for i, M in self.terms.items()})

    __rmul__ = __mul__

    def __rmatmul__(self, L):
        L = np.asarray(L, dtype=float)
        return Affine(L @ self.const, {i: L @ M for i, M in self.terms.items()})

    def __matmul__(self, R):
        R = np.asarray(R, dtype=float)
        return Affine(self.const @ R, {i: M @ R for i, M in self.terms.items()})

    @property
    def T(self):
        return Affine(self.const.T, {i: M.T for i, M in self.terms.items()})

    def traced(self, W) -> tuple[dict[int, float], float]:
        """trace(W @ self) as a linear form: ({index: coefficient}, constant)."""
        W = np.asarray(W, dtype=float)
        lin = {i: float(np.sum(W.T * M)) for i, M in self.terms.items()}
        return {i: v for i, v in lin.items() if v != 0.0}, float(np.sum(W.T * self.const))

    def value(self, x):
        out = self.const.copy()
        for i, M in self.terms.items():
            out = out + x[i] * M
        return out

    def to_lmi(self, name: str = "") -> LmiBlock:
        return LmiBlock.from_terms(self.const, self.terms, name)


def block(rows) -> Affine:
    """Assemble a block matrix from a nested list of Affine / ndarray / None (zero)."""
    heights = []
    for row in rows:
        h = next((_shape(e)[0] for e in row if e is not None), None)
        heights.append(h)
    widths = []
    for j in range(len(rows[0])):
        w = next((_shape(row[j])[1] for row in rows if row[j] is not None), None)
        widths.append(w)
    total = (sum(heights), sum(widths))
    const = np.zeros(total)
    terms: dict[int, np.ndarray] = {}
    r0 = 0
    for row, h in zip(rows, heights):
        c0 = 0
        for e, w in zip(row, widths):
            if e is not None:
                a = e if isinstance(e, Affine) else Affine(e)
                const[r0:r0 + h, c0:c0 + w] = a.const
                for i, M in a.terms.items():
                    if i not in terms:
                        terms[i] = np.zeros(total)
                    terms[i][r0:r0 + h, c0:c0 + w] += M
            c0 += w
        r0 += h
    return Affine(const, terms)


def _shape(e):
    return e.shape if isinstance(e, Affine) else np.atleast_2d(np.asarray(e)).shape


class VariableMap:
    """Allocates decision-variable indices and returns them as Affine views."""

    def __init__(self):
        self.names: list[str] = []

    @property
    def size(self) -> int:
        return len(self.names)

    def _alloc(self, count, label):
        start = len(self.names)
        self.names.extend(label(k) for k in range(count))
        return start

    def scalar(self, name) -> Affine:
        i = self._alloc(1, lambda k: name)
        return Affine(np.zeros((1, 1)), {i: np.ones((1, 1))})

    def vector(self, n, name) -> Affine:
        """Column vector of n fresh variables."""
        s = self._alloc(n, lambda k: f"{name}[{k}]")
        terms = {}
        for k in range(n):
            M = np.zeros((n, 1))
            M[k, 0] = 1.0
            terms[s + k] = M
        return Affine(np.zeros((n, 1)), terms)

    def matrix(self, r, c, name) -> Affine:
        s = self._alloc(r * c, lambda k: f"{name}[{k // c},{k % c}]")
        terms = {}
        for k in range(r * c):
            M = np.zeros((r, c))
            M[k // c, k % c] = 1.0
            terms[s + k] = M
        return Affine(np.zeros((r, c)), terms)

    def sym(self, n, name) -> Affine:
        """Symmetric n x n matrix parameterized by its upper triangle."""
        pairs = [(i, j) for i in range(n) for j in range(i, n)]
        s = self._alloc(len(pairs), lambda k: f"{name}[{pairs[k][0]},{pairs[k][1]}]")
        terms = {}
        for k, (i, j) in enumerate(pairs):
            M = np.zeros((n, n))
            M[i, j] = M[j, i] = 1.0
            terms[s + k] = M
        return Affine(np.zeros((n, n)), terms)
