"""Batched derivative jets.

A :class:`Jet` stores every partial derivative of a scalar field up to a
fixed total order, evaluated at a batch of points.  Products follow the
Leibniz rule and differentiation shifts multi-indices, so jets compose
exactly without any numerical differentiation.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import comb

import numpy as np

MultiIndex = tuple


@lru_cache(maxsize=None)
def multi_indices(order: int, dim: int = 3) -> tuple:
    """All multi-indices of total degree <= ``order``, sorted by degree."""
    out = [a for a in product(range(order + 1), repeat=dim) if sum(a) <= order]
    out.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
    return tuple(out)


@lru_cache(maxsize=None)
def _leibniz_table(order: int, dim: int):
    table = []
    for alpha in multi_indices(order, dim):
        terms = []
        for gamma in product(*(range(a + 1) for a in alpha)):
            weight = 1
            for a, g in zip(alpha, gamma):
                weight *= comb(a, g)
            rest = tuple(a - g for a, g in zip(alpha, gamma))
            terms.append((weight, gamma, rest))
        table.append((alpha, tuple(terms)))
    return tuple(table)


def add_index(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


def unit_index(axis: int, dim: int = 3) -> MultiIndex:
    return tuple(1 if i == axis else 0 for i in range(dim))


class Jet:
    """All partials up to ``order`` of one scalar field at a batch of points.

    ``data`` maps a multi-index ``alpha`` to the array of ``d^alpha f``
    values (one entry per point).
    """

    __slots__ = ("data", "order", "dim")

    def __init__(self, data: dict, order: int, dim: int = 3):
        self.data = data
        self.order = order
        self.dim = dim

    @classmethod
    def constant(cls, value, npoints: int, order: int, dim: int = 3) -> "Jet":
        zero = np.zeros(npoints, dtype=np.result_type(value, float))
        data = {a: zero for a in multi_indices(order, dim)}
        data[(0,) * dim] = np.full(npoints, value)
        return cls(data, order, dim)

    @classmethod
    def coordinate(cls, points: np.ndarray, axis: int, order: int) -> "Jet":
        npts, dim = points.shape
        out = cls.constant(0.0, npts, order, dim)
        out.data[(0,) * dim] = np.array(points[:, axis], dtype=float)
        if order >= 1:
            out.data[unit_index(axis, dim)] = np.ones(npts)
        return out

    @property
    def value(self) -> np.ndarray:
        return self.data[(0,) * self.dim]

    @property
    def npoints(self) -> int:
        return len(self.value)

    def __getitem__(self, alpha) -> np.ndarray:
        return self.data[tuple(alpha)]

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError(f"jet of order {self.order} cannot supply order {order}")
        if order == self.order:
            return self
        return Jet({a: self.data[a] for a in multi_indices(order, self.dim)}, order, self.dim)

    def diff(self, gamma: MultiIndex) -> "Jet":
        """Partial derivative ``d^gamma`` of the field, as a lower-order jet."""
        k = sum(gamma)
        if k == 0:
            return self
        if k > self.order:
            raise ValueError(f"cannot differentiate order-{self.order} jet {k} times")
        new = self.order - k
        return Jet(
            {a: self.data[add_index(a, gamma)] for a in multi_indices(new, self.dim)},
            new,
            self.dim,
        )

    def _coerce(self, other):
        if isinstance(other, Jet):
            return other
        return Jet.constant(other, self.npoints, self.order, self.dim)

    def __add__(self, other):
        other = self._coerce(other)
        order = min(self.order, other.order)
        return Jet(
            {a: self.data[a] + other.data[a] for a in multi_indices(order, self.dim)},
            order,
            self.dim,
        )

    __radd__ = __add__

    def __neg__(self):
        return Jet({a: -v for a, v in self.data.items()}, self.order, self.dim)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet):
            if np.ndim(other) == 0:
                return Jet({a: v * other for a, v in self.data.items()}, self.order, self.dim)
            other = self._coerce(other)
        order = min(self.order, other.order)
        f, g = self.data, other.data
        out = {}
        for alpha, terms in _leibniz_table(order, self.dim):
            acc = 0
            for weight, gamma, rest in terms:
                term = f[gamma] * g[rest]
                acc = acc + (term if weight == 1 else weight * term)
            out[alpha] = acc
        return Jet(out, order, self.dim)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) if np.size(v) else 0.0 for v in self.data.values())

    def __repr__(self):
        return f"Jet(order={self.order}, dim={self.dim}, npoints={self.npoints})"
