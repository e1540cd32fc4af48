"""Truncated tensor algebra over R^d and grid-based multiplicative functionals.

Level k of an element is stored as a flat block of length d**k, indexed by
multi-indices (i_1, ..., i_k) in C order, so the first slot is the most
significant one.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Sequence

import numpy as np

MAX_LEVEL = 3


class DimensionError(ValueError):
    pass


class IntervalError(ValueError):
    pass


def _check_level(N: int) -> None:
    if N not in (1, 2, 3):
        raise DimensionError(f"truncation level must be 1, 2 or 3, got {N}")


@dataclass(frozen=True)
class TensorElement:
    """Element of T^N(R^d) with dense per-level storage."""

    d: int
    N: int
    levels: tuple

    def __post_init__(self):
        _check_level(self.N)
        if len(self.levels) != self.N + 1:
            raise DimensionError("expected N+1 levels")
        for k, block in enumerate(self.levels):
            if np.shape(block) != (self.d**k,) and not (k == 0 and np.ndim(block) == 0):
                raise DimensionError(f"level {k} must have size {self.d**k}")

    def __getitem__(self, k: int) -> np.ndarray:
        return np.asarray(self.levels[k])

    def level_block(self, k: int) -> np.ndarray:
        """Level k reshaped to a (d,)*k array."""
        return np.asarray(self.levels[k]).reshape((self.d,) * k)

    def max_abs_diff(self, other: "TensorElement") -> float:
        return max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))
                   for a, b in zip(self.levels, other.levels))

    @staticmethod
    def unit(d: int, N: int) -> "TensorElement":
        return TensorElement(d, N, tuple([np.float64(1.0)] + [np.zeros(d**k) for k in range(1, N + 1)]))

    @staticmethod
    def from_levels(levels: Sequence, d: int) -> "TensorElement":
        levels = [np.asarray(levels[0], dtype=float).reshape(())] + \
                 [np.asarray(b, dtype=float).reshape(-1) for b in levels[1:]]
        return TensorElement(d, len(levels) - 1, tuple(levels))


def tensor_mul(a: TensorElement, b: TensorElement) -> TensorElement:
    """Truncated product: level k of the result is sum_{i+j=k} a_i (x) b_j."""
    if a.d != b.d or a.N != b.N:
        raise DimensionError(f"mismatched elements: (d={a.d}, N={a.N}) vs (d={b.d}, N={b.N})")
    return TensorElement(a.d, a.N, tuple(_mul_levels(a.levels, b.levels)))


def _mul_levels(a, b) -> list:
    out = [np.float64(a[0] * b[0])]
    for k in range(1, len(a)):
        acc = a[k] * b[0] + a[0] * b[k]
        for i in range(1, k):
            acc = acc + np.multiply.outer(a[i], b[k - i]).reshape(-1)
        out.append(acc)
    return out


def segment_exponential(v, N: int) -> TensorElement:
    """exp(v) truncated at level N: level k equals v^{(x)k}/k!."""
    _check_level(N)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    levels = [np.float64(1.0)]
    power = np.ones(1)
    for k in range(1, N + 1):
        power = np.multiply.outer(power, v).reshape(-1)
        levels.append(power / factorial(k))
    return TensorElement(v.size, N, tuple(levels))


# Batched helpers. A batch is a list of arrays, level k of shape (B, d**k).

def batch_exponential(increments: np.ndarray, N: int) -> list[np.ndarray]:
    increments = np.asarray(increments, dtype=float)
    B = increments.shape[0]
    levels = [np.ones(B)]
    power = np.ones((B, 1))
    for k in range(1, N + 1):
        power = (power[:, :, None] * increments[:, None, :]).reshape(B, -1)
        levels.append(power / factorial(k))
    return levels


def batch_mul(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    N = len(a) - 1
    out = [a[0] * b[0]]
    for k in range(1, N + 1):
        acc = a[k] * b[0][:, None] + a[0][:, None] * b[k]
        for i in range(1, k):
            acc = acc + (a[i][:, :, None] * b[k - i][:, None, :]).reshape(acc.shape)
        out.append(acc)
    return out


class RoughPathGrid:
    """Per-cell group increments of a multiplicative functional on a time grid.

    ``cells[k]`` has shape (m, d**k); the value over [t_i, t_k] is the ordered
    product of cells i..k-1.
    """

    def __init__(self, times, cells: Sequence[np.ndarray], d: int):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise IntervalError("grid times must be strictly increasing with at least two points")
        N = len(cells) - 1
        _check_level(N)
        m = times.size - 1
        cells = [np.array(c, dtype=float) for c in cells]
        for k, c in enumerate(cells):
            if c.shape != ((m,) if k == 0 else (m, d**k)):
                raise DimensionError(f"cell level {k} has shape {c.shape}")
        if not np.all(cells[0] == 1.0):
            raise DimensionError("cells must be group elements (level 0 equal to 1)")
        for c in cells:
            c.setflags(write=False)
        self.times = times
        self.times.setflags(write=False)
        self.cells = cells
        self.d = d
        self.N = N
        self._pairs = None

    @property
    def m(self) -> int:
        return self.times.size - 1

    def cell(self, k: int) -> TensorElement:
        return TensorElement(self.d, self.N, tuple(c[k] for c in self.cells))

    def query(self, i: int, k: int) -> TensorElement:
        if i > k:
            raise IntervalError(f"query({i}, {k}) needs i <= k")
        if i < 0 or k > self.m:
            raise IntervalError(f"query({i}, {k}) outside grid 0..{self.m}")
        acc = TensorElement.unit(self.d, self.N).levels
        for j in range(i, k):
            acc = _mul_levels(acc, [c[j] for c in self.cells])
        return TensorElement(self.d, self.N, tuple(acc))

    def all_pairs(self) -> list[np.ndarray]:
        """Values over every grid pair, level k of shape (m+1, m+1, d**k).

        Entries with i > k are zero. Built by extending all intervals by one
        cell at a time, batched over the left endpoint.
        """
        if self._pairs is not None:
            return self._pairs
        m, d, N = self.m, self.d, self.N
        pairs = [np.zeros((m + 1, m + 1))] + [np.zeros((m + 1, m + 1, d**k)) for k in range(1, N + 1)]
        idx = np.arange(m + 1)
        pairs[0][idx, idx] = 1.0
        current = [np.ones(m)] + [np.zeros((m, d**k)) for k in range(1, N + 1)]
        for off in range(1, m + 1):
            B = m + 1 - off
            current = [c[:B] for c in current]
            step = [c[off - 1:off - 1 + B] for c in self.cells]
            current = batch_mul(current, step)
            left = np.arange(B)
            for k in range(N + 1):
                pairs[k][left, left + off] = current[k]
        self._pairs = pairs
        return pairs

    def restrict(self, i0: int, i1: int) -> "RoughPathGrid":
        """The same functional on the sub-grid t_{i0} < ... < t_{i1}."""
        return RoughPathGrid(self.times[i0:i1 + 1], [c[i0:i1] for c in self.cells], self.d)

    def truncate(self, N: int) -> "RoughPathGrid":
        if N > self.N:
            raise DimensionError("cannot raise the truncation level")
        return RoughPathGrid(self.times, self.cells[:N + 1], self.d)


def chen_residual(X: RoughPathGrid, triples) -> float:
    """Largest max-norm of query(i,k) - query(i,j) (x) query(j,k) over triples."""
    worst = 0.0
    for i, j, k in triples:
        lhs = X.query(i, k)
        rhs = tensor_mul(X.query(i, j), X.query(j, k))
        worst = max(worst, lhs.max_abs_diff(rhs))
    return worst
