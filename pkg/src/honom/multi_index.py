"""Derivative multi-indexes, scaled monomials and the diagonal scaling matrix.

A multi-index ``(n_1, ..., n_d)`` names the partial derivative
``d^(n_1+...+n_d) u / dx_1^n_1 ... dx_d^n_d``.  The set used throughout the
package holds every index with ``1 <= n_1 + ... + n_d <= n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb, factorial, prod

import numpy as np


@dataclass(frozen=True)
class MultiIndexSet:
    """Ordered set of derivative multi-indexes of total order ``1..max_order``."""

    dim: int
    max_order: int
    indexes: tuple[tuple[int, ...], ...]

    def __len__(self):
        return len(self.indexes)

    def __iter__(self):
        return iter(self.indexes)

    def __getitem__(self, k):
        return self.indexes[k]

    def position(self, index) -> int:
        """Row of ``index`` in derivative vectors built on this set."""
        index = tuple(int(v) for v in index)
        try:
            return self._lookup[index]
        except KeyError:
            raise KeyError(f"multi-index {index} not in order-{self.max_order} set") from None

    @property
    def _lookup(self):
        return _lookup_table(self.indexes)

    @property
    def orders(self) -> np.ndarray:
        """Total order ``|index|`` of each entry."""
        return np.array([sum(ix) for ix in self.indexes], dtype=int)

    def as_array(self) -> np.ndarray:
        return np.array(self.indexes, dtype=int).reshape(len(self.indexes), self.dim)


@lru_cache(maxsize=None)
def _lookup_table(indexes):
    return {ix: k for k, ix in enumerate(indexes)}


def _check_positive(name, value):
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")


@lru_cache(maxsize=None)
def enumerate_indexes(d: int, n: int) -> MultiIndexSet:
    """All indexes with ``1 <= sum <= n`` in subset-gap order.

    Each ``d``-subset ``c_1 < ... < c_d`` of ``{1, ..., d + n}`` (taken in
    lexicographic order) maps to the gaps ``(c_1 - 1, c_2 - c_1 - 1, ...)``;
    the first subset gives the all-zero tuple and is dropped.

    >>> enumerate_indexes(2, 2).indexes
    ((0, 1), (0, 2), (1, 0), (1, 1), (2, 0))
    """
    _check_positive("d", d)
    _check_positive("n", n)
    out = []
    for c in combinations(range(1, d + n + 1), d):
        gaps = (c[0] - 1,) + tuple(c[k] - c[k - 1] - 1 for k in range(1, d))
        out.append(gaps)
    return MultiIndexSet(int(d), int(n), tuple(out[1:]))


def count_indexes(d: int, n: int) -> int:
    """Number of derivatives up to order ``n`` in ``d`` dimensions, ``C(n+d, n) - 1``."""
    _check_positive("d", d)
    _check_positive("n", n)
    return comb(n + d, n) - 1


def monomial_vector(idxs: MultiIndexSet, r, h: float) -> np.ndarray:
    """Scaled monomials ``prod_k r_k^n_k / h^|n|`` in the order of ``idxs``.

    ``r`` may carry leading batch axes; the last axis is the spatial one.
    ``h`` broadcasts against the batch axes.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("characteristic length h must be positive")
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != idxs.dim:
        raise ValueError(f"expected {idxs.dim}-dimensional offsets, got shape {r.shape}")
    rs = r / h[..., None]
    exps = idxs.as_array()
    # powers[..., k, e] = rs[..., k] ** e for e <= max_order
    powers = rs[..., :, None] ** np.arange(idxs.max_order + 1)
    out = np.ones(r.shape[:-1] + (len(idxs),))
    for k in range(idxs.dim):
        out *= powers[..., k, exps[:, k]]
    return out


@lru_cache(maxsize=None)
def _factorial_products(idxs: MultiIndexSet):
    return np.array([float(prod(factorial(v) for v in ix)) for ix in idxs.indexes])


def scaling_matrix(idxs: MultiIndexSet, h) -> np.ndarray:
    """Diagonal of ``H``: ``h^|n| / prod(n_k!)`` per index.

    Returned as a 1-D array (or ``(..., n_p)`` when ``h`` is an array);
    ``derivatives = scaled_derivatives / scaling_matrix(idxs, h)``.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise ValueError("characteristic length h must be positive")
    return h[..., None] ** idxs.orders / _factorial_products(idxs)
