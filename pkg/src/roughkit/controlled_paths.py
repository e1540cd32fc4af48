"""Controlled rough paths with values in the spectral scale.

Two variants are supported. In the ``D`` variant (base regularity alpha - sigma)
level j has j+1 tensor slots and lives in E_{alpha - j gamma - sigma}; in the
``Dt`` variant (base alpha) level j has j slots and lives in
E_{alpha - j gamma}. Level j is stored as an array of shape
(n_times, d**slots, K). Operator norms on tensor slots are Hilbert-Schmidt.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral_scale import scale_norm
from .tensor_algebra import RoughPathGrid
from .variation_controls import control_power, level_norms


@dataclass(frozen=True)
class ScaleParams:
    alpha: float
    sigma: float
    gamma: float
    p: float
    N: int


def slot_count(variant: str, j: int) -> int:
    return j + 1 if variant == "D" else j


def hs_norm(block: np.ndarray, lambdas, index: float) -> np.ndarray:
    """Hilbert-Schmidt norm over the slot axis (-2) of E_index values (axis -1)."""
    return np.sqrt(np.sum(scale_norm(block, lambdas, index) ** 2, axis=-1))


class ControlledPath:
    """Gubinelli levels of a controlled path on the grid points i0..i0+n-1 of X.

    ``X`` is the driving path restricted to those points, so local index a
    refers to X.times[a].
    """

    def __init__(self, variant: str, levels: list, X: RoughPathGrid, lambdas, params: ScaleParams):
        if variant not in ("D", "Dt"):
            raise ValueError("variant must be 'D' or 'Dt'")
        if len(levels) != params.N:
            raise ValueError(f"expected {params.N} levels, got {len(levels)}")
        n = X.m + 1
        K = len(lambdas)
        for j, lev in enumerate(levels):
            want = (n, X.d ** slot_count(variant, j), K)
            if lev.shape != want:
                raise ValueError(f"level {j} has shape {lev.shape}, expected {want}")
        self.variant = variant
        self.levels = levels
        self.X = X
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.params = params

    @property
    def n(self) -> int:
        return self.X.m + 1

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def d(self) -> int:
        return self.X.d

    def level_index(self, j: int) -> float:
        pr = self.params
        return pr.alpha - j * pr.gamma - (pr.sigma if self.variant == "D" else 0.0)

    def with_levels(self, levels) -> "ControlledPath":
        return ControlledPath(self.variant, levels, self.X, self.lambdas, self.params)

    def __sub__(self, other: "ControlledPath") -> "ControlledPath":
        return self.with_levels([a - b for a, b in zip(self.levels, other.levels)])

    def __add__(self, other: "ControlledPath") -> "ControlledPath":
        return self.with_levels([a + b for a, b in zip(self.levels, other.levels)])

    def scaled(self, c: float) -> "ControlledPath":
        return self.with_levels([c * a for a in self.levels])

    @staticmethod
    def zeros(variant, X, lambdas, params) -> "ControlledPath":
        n, K = X.m + 1, len(lambdas)
        levels = [np.zeros((n, X.d ** slot_count(variant, j), K)) for j in range(params.N)]
        return ControlledPath(variant, levels, X, lambdas, params)

    # remainders ---------------------------------------------------------

    def _check_pair(self, i, l):
        if not (0 <= i < self.N and i < l <= self.N):
            raise IndexError(f"remainder indices (i={i}, l={l}) out of range for N={self.N}")

    def remainder_rows(self, i: int, l: int, rows) -> np.ndarray:
        """R^{i,l} over (a, b) for a in ``rows`` and every b; shape (len(rows), n, slots_i, K).

        Entries with b < a are meaningless and left as computed.
        """
        self._check_pair(i, l)
        rows = np.atleast_1d(rows)
        xi = self.levels[i]
        out = xi[None, :, :, :] - xi[rows][:, None, :, :]
        pairs = self.X.all_pairs()
        for j in range(i + 1, l):
            lead = self.d ** (j - i)
            coef = self.levels[j][rows].reshape(len(rows), lead, xi.shape[1], -1)
            out -= np.einsum("abw,awvk->abvk", pairs[j - i][rows], coef)
        return out

    def remainder(self, i: int, l: int, a: int, b: int) -> np.ndarray:
        if not 0 <= a <= b < self.n:
            raise IndexError("interval outside the path's grid")
        return self.remainder_rows(i, l, [a])[0, b]

    def remainder_germ(self, i: int, l: int, index: float, chunk_floats: int = 2_000_000) -> np.ndarray:
        """|R^{i,l}_{a,b}|_index for all pairs a <= b (zero below the diagonal)."""
        n = self.n
        per_row = n * self.levels[i].shape[1] * len(self.lambdas)
        step = max(1, chunk_floats // max(per_row, 1))
        germ = np.zeros((n, n))
        for start in range(0, n, step):
            rows = np.arange(start, min(n, start + step))
            R = self.remainder_rows(i, l, rows)
            germ[rows] = hs_norm(R, self.lambdas, index)
        return np.triu(germ)

    def sup_norm(self, j: int) -> float:
        return float(np.max(hs_norm(self.levels[j], self.lambdas, self.level_index(j))))

    def restrict(self, a: int, b: int) -> "ControlledPath":
        return ControlledPath(self.variant, [lev[a:b + 1] for lev in self.levels],
                              self.X.restrict(a, b), self.lambdas, self.params)


def remainder(xi: ControlledPath, i: int, l: int, a: int, b: int) -> np.ndarray:
    return xi.remainder(i, l, a, b)


# norms ------------------------------------------------------------------

@dataclass
class ControlledNorm:
    parts: list = field(default_factory=list)  # (kind, i, l, value)

    @property
    def total(self) -> float:
        return float(sum(v for _, _, _, v in self.parts))

    def get(self, kind, i, l) -> float:
        for k, a, b, v in self.parts:
            if (k, a, b) == (kind, i, l):
                return v
        raise KeyError((kind, i, l))

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "i", "l", "value"])
            for kind, i, l, v in self.parts:
                w.writerow([kind, i, l, repr(float(v))])


def remainder_control(xi: ControlledPath, i: int, l: int, kind: int) -> np.ndarray:
    """Table of the powered remainder control W^{power} over all pairs.

    kind 0 is the consecutive control of delta xi^i (l = i+1); kinds 1 and 2
    are the two remainder controls for l - i > 1.
    """
    pr = xi.params
    gp = pr.gamma - pr.p
    if kind == 0:
        index, k = xi.level_index(i + 1), 1
    elif kind == 1:
        index, k = xi.level_index(l - 1), l - i - 1
    else:
        index, k = xi.level_index(l), l - i
    germ = xi.remainder_germ(i, l, index)
    if not np.all(np.isfinite(germ)):
        raise FloatingPointError(f"non-finite remainder germ for (i={i}, l={l})")
    return control_power(germ, 1.0 / (k * gp), pr.p / gp, xi.X.times, k * gp)


def controlled_norm(xi: ControlledPath, interval=None) -> ControlledNorm:
    """Itemised norm over [t_a, t_b] (the whole path by default).

    The Dt variant includes the i = 0 remainders, which control increments of
    the path component itself.
    """
    if interval is not None:
        xi = xi.restrict(*interval)
    N = xi.N
    out = ControlledNorm()
    last = xi.n - 1
    for i in range(N):
        out.parts.append(("sup", i, i, xi.sup_norm(i)))
    for i in range(N):
        out.parts.append(("consecutive", i, i + 1, float(remainder_control(xi, i, i + 1, 0)[0, last])))
    for i in range(N):
        for l in range(i + 2, N + 1):
            out.parts.append(("remainder1", i, l, float(remainder_control(xi, i, l, 1)[0, last])))
            out.parts.append(("remainder2", i, l, float(remainder_control(xi, i, l, 2)[0, last])))
    return out


# shift ------------------------------------------------------------------

@dataclass
class ShiftedTail:
    """Levels 1..N-1 of the Dt variant obtained from a D-variant path."""

    source: ControlledPath

    @property
    def levels(self) -> list:
        return self.source.levels[:self.source.N - 1]

    def level(self, i: int) -> np.ndarray:
        if not 1 <= i < self.source.N:
            raise IndexError("shifted level index must satisfy 1 <= i < N")
        return self.source.levels[i - 1]

    def remainder(self, i: int, l: int, a: int, b: int) -> np.ndarray:
        return self.source.remainder(i - 1, l - 1, a, b)


def shift(xi: ControlledPath) -> ShiftedTail:
    if xi.variant != "D":
        raise ValueError("shift applies to the D variant")
    return ShiftedTail(xi)


def shift_diagnostics(xi: ControlledPath, X_controls, interval=None) -> list:
    """Ratios LHS/RHS for the four estimates of the level shift, over an interval.

    Returns rows (item, i, l, lhs, rhs, ratio). The implicit constants are
    unknown, so only the ratios are reported.
    """
    if interval is not None:
        xi = xi.restrict(*interval)
    pr = xi.params
    gp = pr.gamma - pr.p
    N = xi.N
    last = xi.n - 1
    dt = xi.X.times[-1] - xi.X.times[0]
    lam = xi.lambdas
    expo = pr.p * (pr.gamma - pr.sigma) / pr.gamma
    a_, b_ = pr.sigma / pr.gamma, (pr.gamma - pr.sigma) / pr.gamma
    Wpi = [None] + [X_controls[j] for j in range(1, N + 1)]
    total = controlled_norm(xi).total
    cache = {}

    def W(i, l, kind):
        key = (i, l, kind)
        if key not in cache:
            cache[key] = float(remainder_control(xi, i, l, kind)[0, last])
        return cache[key]

    def tilde_control(i, l, index, k):
        germ = xi.remainder_germ(i - 1, l - 1, index)
        return float(control_power(germ, 1.0 / (k * gp), pr.p / gp, xi.X.times, k * gp)[0, last])

    rows = []

    def add(item, i, l, lhs, rhs):
        ratio = 0.0 if lhs == 0 else (lhs / rhs if rhs > 0 else np.inf)
        rows.append((item, i, l, lhs, rhs, ratio))

    for i in range(1, N):
        lhs = float(np.max(hs_norm(xi.levels[i - 1], lam, pr.alpha - i * pr.gamma)))
        rhs = float(hs_norm(xi.levels[i - 1][0], lam, xi.level_index(i - 1))) + \
            (Wpi[1] ** (pr.gamma - pr.sigma) + dt ** (pr.gamma - pr.sigma) + dt ** expo) * total
        add("I", i, i, lhs, rhs)
    for i in range(1, N + 1):
        for l in range(i + 2, N + 1):
            lhs = tilde_control(i, l, pr.alpha - (l - 1) * pr.gamma, l - i - 1)
            rhs = dt ** expo * W(i - 1, l - 1, 1) ** a_ * W(i - 1, l - 1, 2) ** b_ if l - 1 - (i - 1) > 1 else np.nan
            add("II", i, l, lhs, rhs)
            lhs = tilde_control(i, l, pr.alpha - l * pr.gamma, l - i)
            sup_l1 = float(np.max(hs_norm(xi.levels[l - 1], lam, xi.level_index(l - 1)))) if l - 1 < N else 0.0
            rhs = sup_l1 * Wpi[l - i] ** ((l - i) * gp) + dt ** expo * W(i - 1, l, 1) ** a_ * W(i - 1, l, 2) ** b_
            add("III", i, l, lhs, rhs)
    for i in range(1, N):
        lhs = tilde_control(i, i + 1, pr.alpha - (i + 1) * pr.gamma, 1)
        sup_i = float(np.max(hs_norm(xi.levels[i], lam, xi.level_index(i))))
        rhs = sup_i * Wpi[1] ** gp + dt ** expo * W(i - 1, i + 1, 1) ** a_ * W(i - 1, i + 1, 2) ** b_
        add("IV", i, i + 1, lhs, rhs)
    return rows


# the diffusion operator G ------------------------------------------------

class GOperator:
    """Linear diffusion G_t(z)(e_i) = c_i(t) * lambda^sigma z.

    The multiplier lambda_k^sigma has operator norm exactly 1 from E_beta to
    E_{beta - sigma} for every beta, so the spatial loss is sigma uniformly.
    """

    def __init__(self, d: int, sigma: float, lambdas, amplitude: float = 1.0,
                 coefficients: Callable | None = None, bound: float | None = None,
                 holder_constant: float | None = None):
        self.d = d
        self.sigma = sigma
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.amplitude = amplitude
        if coefficients is None:
            phases = np.arange(1, d + 1)
            coefficients = lambda t: amplitude * (1.0 + 0.25 * np.cos(2 * np.pi * np.asarray(t, dtype=float)[..., None] + phases))
            bound = amplitude * 1.25 * np.sqrt(d)
            holder_constant = amplitude * np.sqrt(d) * np.pi / 2
        self._c = coefficients
        self.multiplier = self.lambdas ** sigma
        self.C_G = bound
        self._holder = holder_constant

    @staticmethod
    def constant(d, sigma, lambdas, values) -> "GOperator":
        values = np.broadcast_to(np.asarray(values, dtype=float), (d,)).copy()
        return GOperator(d, sigma, lambdas, coefficients=lambda t: np.broadcast_to(
            values, np.shape(t) + (d,)), bound=float(np.linalg.norm(values)), holder_constant=0.0)

    def coefficients(self, t) -> np.ndarray:
        return np.asarray(self._c(t), dtype=float)

    def M_G(self) -> float:
        """Constant in |G_t z - G_s z| <= M_G |t-s|^{N gamma} |z| (|t-s| <= 1)."""
        return max(self.C_G, self._holder)

    def apply(self, t: float, z) -> np.ndarray:
        """G_t(z): array of shape (d, K), one row per direction."""
        return self.coefficients(t)[:, None] * (self.multiplier * np.asarray(z))[None, :]

    def compose_levels(self, times, level: np.ndarray) -> np.ndarray:
        """G^{o1} applied pointwise; the new slot is appended last.

        ``level`` has shape (n, S, K); the result has shape (n, S*d, K).
        """
        c = self.coefficients(times)  # (n, d)
        out = level[:, :, None, :] * c[:, None, :, None] * self.multiplier
        return out.reshape(level.shape[0], -1, level.shape[2])


def gk_iterate(G: GOperator, z, k: int, t: float, N: int = 3) -> np.ndarray:
    """G^{ok}_t(z) with slot order G^{o(k-1)}(G(z)(v_1))(v_2 ... v_k); shape (d**k, K)."""
    if not 1 <= k <= N:
        raise IndexError(f"k must lie in 1..{N}")
    first = G.apply(t, z)  # (d, K)
    if k == 1:
        return first
    return np.concatenate([gk_iterate(G, first[i], k - 1, t, N) for i in range(G.d)], axis=0)


def compose_linear_G(G: GOperator, xi_t: ControlledPath) -> ControlledPath:
    if xi_t.variant != "Dt":
        raise ValueError("composition takes a Dt-variant path")
    if G.d != xi_t.d:
        raise ValueError("noise dimension mismatch")
    times = xi_t.X.times
    levels = [G.compose_levels(times, lev) for lev in xi_t.levels]
    return ControlledPath("D", levels, xi_t.X, xi_t.lambdas, xi_t.params)


def composed_remainder_identity(G: GOperator, xi_t: ControlledPath, i: int, l: int, a: int, b: int):
    """Both sides of R^{G,i,l}_{u,v} = G_u(Rt^{i,l}_{u,v}) + (G_v - G_u)(xit^i_v)."""
    composed = compose_linear_G(G, xi_t)
    lhs = composed.remainder(i, l, a, b)
    u, v = xi_t.X.times[a], xi_t.X.times[b]
    Rt = xi_t.remainder(i, l, a, b)[None]
    xv = xi_t.levels[i][b][None]
    rhs = G.compose_levels(np.array([u]), Rt)[0] + \
        G.compose_levels(np.array([v]), xv)[0] - G.compose_levels(np.array([u]), xv)[0]
    return lhs, rhs


def solution_levels(G: GOperator, times, path_component: np.ndarray, N: int) -> list:
    """Levels G^{oi}(y) built by repeated composition, i = 0..N-1."""
    levels = [path_component[:, None, :]]
    for _ in range(1, N):
        levels.append(G.compose_levels(times, levels[-1]))
    return levels


def function_of_path(X: RoughPathGrid, lambdas, params: ScaleParams, freqs=None, phases=None) -> ControlledPath:
    """Dt path y_t = f(X_{0,t}) with f_k(x) = sin(a_k . x + b_k) / lambda_k.

    Levels are the derivatives Df and D^2 f read against the path; for a
    geometric lift the expansion error is of order three in the increment.
    ``freqs`` has shape (K, d), ``phases`` shape (K,); deterministic defaults.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    K, d = lambdas.size, X.d
    if params.N > 3:
        raise ValueError("at most three levels are supported")
    if freqs is None:
        freqs = np.cos(np.add.outer(np.arange(1, K + 1), 0.7 * np.arange(d)))
    if phases is None:
        phases = 0.3 * np.arange(K)
    freqs = np.asarray(freqs, dtype=float)
    x = X.all_pairs()[1][0]  # (n, d)
    arg = x @ freqs.T + phases  # (n, K)
    scale = 1.0 / np.maximum(lambdas, 1.0)
    derivs = [np.sin(arg) * scale, np.cos(arg) * scale, -np.sin(arg) * scale]
    n = x.shape[0]
    levels = []
    for j in range(params.N):
        coef = np.ones((1, K))
        for _ in range(j):
            coef = (coef[:, None, :] * freqs.T[None, :, :]).reshape(-1, K)  # slot order i1, i2
        levels.append(derivs[j][:, None, :] * coef[None, :, :])
    return ControlledPath("Dt", [lev.reshape(n, d**j, K) for j, lev in enumerate(levels)], X, lambdas, params)
