"""Partition-sup control functions on a grid and greedy partitions.

For a nonnegative germ f on grid pairs the control is

    W(t_i, t_k) = max over grid partitions of [t_i, t_k] of
                  sum f(u, v)^q / (v - u)^r,

computed exactly by dynamic programming over the first breakpoint.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tensor_algebra import RoughPathGrid


class ParameterError(ValueError):
    pass


class GridTooCoarse(RuntimeError):
    def __init__(self, cell: int, value: float, chi: float):
        super().__init__(f"cell {cell} alone has control power {value:.4g} > chi = {chi:.4g}; "
                         "grid too coarse for this threshold")
        self.cell = cell
        self.value = value


@dataclass
class ControlTable:
    times: np.ndarray
    W: np.ndarray  # (m+1, m+1), zero below the diagonal
    q: float
    r: float
    level: int | None = None

    @property
    def m(self) -> int:
        return self.times.size - 1

    def __call__(self, i: int, k: int) -> float:
        return float(self.W[i, k])

    def __add__(self, other: "ControlTable") -> "ControlTable":
        return ControlTable(self.times, self.W + other.W, float("nan"), float("nan"), None)

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i", "k", "t_i", "t_k", "W"])
            m = self.m
            for i in range(m + 1):
                for k in range(i, m + 1):
                    w.writerow([i, k, repr(float(self.times[i])), repr(float(self.times[k])),
                                repr(float(self.W[i, k]))])


def partition_terms(germ: np.ndarray, q: float, r: float, times) -> np.ndarray:
    germ = np.asarray(germ, dtype=float)
    if np.any(germ < 0) or np.any(np.isnan(germ)):
        bad = np.argwhere((germ < 0) | np.isnan(germ))[0]
        raise ValueError(f"germ must be nonnegative; pair {tuple(int(b) for b in bad)} has "
                         f"{germ[tuple(bad)]}")
    times = np.asarray(times, dtype=float)
    n = times.size
    iu = np.triu_indices(n, 1)
    term = np.zeros((n, n))
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        term[iu] = germ[iu] ** q / (times[iu[1]] - times[iu[0]]) ** r
    if not np.all(np.isfinite(term)):
        bad = np.argwhere(~np.isfinite(term))[0]
        raise OverflowError(f"term overflow at pair {tuple(int(b) for b in bad)} "
                            f"(germ {germ[tuple(bad)]:.3e}, q={q:.3g}, r={r:.3g})")
    return term


def partition_sup(term: np.ndarray) -> np.ndarray:
    """W[i, k] = max over j in (i, k] of term[i, j] + W[j, k], W[k, k] = 0."""
    n = term.shape[0]
    W = np.full((n, n), -np.inf)
    W[n - 1, n - 1] = 0.0
    for i in range(n - 2, -1, -1):
        cand = term[i, i + 1:, None] + W[i + 1:, :]
        row = cand.max(axis=0)
        row[i] = 0.0
        W[i] = row
    W[~np.isfinite(W)] = 0.0
    return W


def control_table(germ, q: float, r: float, times, level: int | None = None) -> ControlTable:
    """Exact grid partition-sup of germ^q / dt^r for every grid pair."""
    times = np.asarray(times, dtype=float)
    return ControlTable(times, partition_sup(partition_terms(germ, q, r, times)), q, r, level)


def control_power(germ, q: float, r: float, times, power: float) -> np.ndarray:
    """Table of W**power, computed after normalising the germ by its maximum.

    With power = 1/q the map germ -> W**power is 1-homogeneous, so the
    normalisation is exact and avoids overflow for large q.
    """
    germ = np.asarray(germ, dtype=float)
    if germ.shape == (2, 2):
        # one cell: the only partition is the cell itself
        g = germ[0, 1]
        if not g >= 0:
            raise ValueError(f"germ must be nonnegative; pair (0, 1) has {g}")
        out = np.zeros((2, 2))
        dt = float(times[1] - times[0])
        out[0, 1] = g ** (q * power) / dt ** (r * power)
        return out
    scale = float(germ.max(initial=0.0))
    if scale == 0.0:
        return np.zeros_like(germ)
    W = partition_sup(partition_terms(germ / scale, q, r, times))
    return scale ** (q * power) * W ** power


def level_norms(X: RoughPathGrid) -> list[np.ndarray]:
    """Euclidean norm of level j over every grid pair, index j = 1..N."""
    pairs = X.all_pairs()
    return [None] + [np.linalg.norm(pairs[j], axis=-1) for j in range(1, X.N + 1)]


@dataclass
class RoughPathControls:
    levels: list  # index j = 1..N, entry 0 unused
    total: ControlTable
    gamma: float
    p: float


def rough_path_controls(X: RoughPathGrid, gamma: float, p: float) -> RoughPathControls:
    if not 0 <= p < gamma:
        raise ParameterError(f"need 0 <= p < gamma, got p={p}, gamma={gamma}")
    norms = level_norms(X)
    tables = [None]
    total = np.zeros((X.m + 1, X.m + 1))
    for j in range(1, X.N + 1):
        t = control_table(norms[j], 1.0 / (j * (gamma - p)), p / (gamma - p), X.times, level=j)
        tables.append(t)
        total += t.W
    return RoughPathControls(tables, ControlTable(X.times, total, float("nan"), p / (gamma - p)), gamma, p)


def check_p_to_zero(X: RoughPathGrid, gamma: float, p: float, s: int = 0, t: int | None = None):
    """Compare W_{j,gamma,0}^gamma with (t-s)^p W_{j,gamma,p}^(gamma-p) level by level on [t_s, t_t].

    The comparison is done per level because the Hoelder argument behind it
    is per level; for the summed controls it can fail by a factor up to
    N^(p), since a sum of concave powers exceeds the power of the sum.
    Returns (holds, lhs, rhs) with lhs, rhs arrays indexed by level - 1.
    """
    t = X.m if t is None else t
    with_p = rough_path_controls(X, gamma, p).levels[1:]
    without = rough_path_controls(X, gamma, 0.0).levels[1:]
    lhs = np.array([w.W[s, t] ** gamma for w in without])
    rhs = np.array([(X.times[t] - X.times[s]) ** p * w.W[s, t] ** (gamma - p) for w in with_p])
    return bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-300)), lhs, rhs


@dataclass
class GreedySequence:
    chi: float
    interval: tuple
    indices: list
    times: list
    forced: list  # indices m whose step was a single blocking cell

    @property
    def count(self) -> int:
        return len(self.indices) - 1

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "tau_m"])
            for m, t in enumerate(self.times):
                w.writerow([m, repr(float(t))])


def greedy_points(W: np.ndarray, power: float, chi: float, interval=None, times=None,
                  on_block: str = "error", max_step: float | None = None) -> GreedySequence:
    """Greedy partition: each step goes to the last grid point with W**power <= chi.

    ``W`` is a raw control table (array or ControlTable). A single cell whose
    own control exceeds chi either raises GridTooCoarse (``on_block="error"``)
    or is taken as a forced one-cell step and recorded (``on_block="cell"``).
    ``max_step`` optionally caps the step length in time.
    """
    if chi <= 0:
        raise ParameterError("chi must be positive")
    if isinstance(W, ControlTable):
        times = W.times if times is None else times
        W = W.W
    n = W.shape[0]
    times = np.arange(n, dtype=float) if times is None else np.asarray(times, dtype=float)
    a, b = (0, n - 1) if interval is None else interval
    limit = chi * (1 + 1e-12)
    idx, forced = [a], []
    cur = a
    while cur < b:
        row = W[cur, cur + 1:b + 1] ** power
        # monotone slice: count of admissible right endpoints
        nxt = cur + int(np.searchsorted(row, limit, side="right"))
        if max_step is not None:
            cap = cur + int(np.searchsorted(times[cur + 1:b + 1] - times[cur], max_step * (1 + 1e-12),
                                            side="right"))
            nxt = min(nxt, max(cap, cur + 1))  # a cap below one cell still moves one cell
        if nxt == cur:
            if on_block == "error":
                raise GridTooCoarse(cur, float(row[0]), chi)
            forced.append(len(idx))
            nxt = cur + 1
        idx.append(nxt)
        cur = nxt
    return GreedySequence(chi, (a, b), idx, [float(times[i]) for i in idx], forced)
