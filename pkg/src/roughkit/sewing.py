"""Sewing: dyadic Riemann-type sums for integrals against an evolution family,
their promotion to controlled paths, generic Young sewing, and the drift
convolution.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controlled_paths import ControlledPath, ScaleParams, hs_norm
from .spectral_scale import EvolutionFamily, scale_norm


class ParameterError(ValueError):
    pass


class SewingDivergence(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class SewingParams:
    gamma: float
    p: float
    sigma: float
    N: int
    alpha: float = 0.0

    @property
    def P(self) -> list:
        return [(i + 1) * self.p - i * self.gamma - self.sigma for i in range(self.N + 1)]

    @property
    def scale(self) -> ScaleParams:
        return ScaleParams(self.alpha, self.sigma, self.gamma, self.p, self.N)


def validate_params(gamma: float, p: float, sigma: float, N: int | None = None, alpha: float = 0.0) -> SewingParams:
    if not 0 < gamma < 1:
        raise ParameterError("gamma must lie in (0, 1)")
    inv = 1.0 / gamma
    if abs(inv - round(inv)) < 1e-12:
        raise ParameterError(f"1/gamma = {inv:g} is an integer; this case is excluded")
    floor = int(np.floor(inv))
    if N is None:
        N = floor
    if N != floor:
        raise ParameterError(f"N must equal floor(1/gamma) = {floor}, got {N}")
    if sigma < 0:
        raise ParameterError("sigma must be nonnegative")
    lower = (sigma + N * gamma) / (N + 1)
    if not lower < p:
        raise ParameterError(f"(sigma + N gamma)/(N + 1) = {lower:g} < p fails for p = {p:g}")
    if not p < gamma:
        raise ParameterError(f"p < gamma fails: p = {p:g}, gamma = {gamma:g}")
    if not sigma < p:
        raise ParameterError(f"sigma < p fails: sigma = {sigma:g}, p = {p:g}")
    params = SewingParams(gamma, p, sigma, N, alpha)
    if min(params.P) <= 0:
        raise ParameterError("some P_i is not positive")
    return params


# dyadic points --------------------------------------------------------------

def dyadic_indices(times, a: int, b: int, m: int) -> np.ndarray:
    """Dyadic points of level m in [t_a, t_b], snapped to the nearest grid point."""
    times = np.asarray(times)
    targets = times[a] + (times[b] - times[a]) * np.arange(2**m + 1) / 2**m
    pos = np.searchsorted(times, targets)
    pos = np.clip(pos, 1, len(times) - 1)
    left = times[pos - 1]
    right = times[pos]
    snapped = np.where(targets - left <= right - targets, pos - 1, pos)
    snapped = np.clip(snapped, a, b)
    return np.unique(snapped)


@dataclass
class DyadicRecord:
    interval: tuple
    values: list = field(default_factory=list)  # Gamma^m, each (K,)
    increments: list = field(default_factory=list)  # per m >= 1: list over l of norms
    converged: bool = False

    @property
    def value(self) -> np.ndarray:
        return self.values[-1]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "l", "increment_norm"])
            for m, incs in enumerate(self.increments, start=1):
                for l, v in enumerate(incs):
                    w.writerow([m, l, repr(float(v))])


def _germ_cells(xi: ControlledPath, U: EvolutionFamily, t_eval: float, idx: np.ndarray, germ: str) -> np.ndarray:
    """Sum over consecutive dyadic points of the germ, evaluated at time t_eval."""
    X = xi.X
    pairs = X.all_pairs()
    u, v = idx[:-1], idx[1:]
    times = X.times
    if germ == "left":
        weight = U.factor(t_eval, times[u])
    elif germ == "averaged":
        weight = U.averaged_factor(t_eval, times[u], times[v])
    else:
        raise ValueError("germ must be 'left' or 'averaged'")
    total = np.zeros(len(xi.lambdas))
    for j in range(xi.N):
        lev = pairs[j + 1][u, v]  # (n, d**(j+1))
        total += np.einsum("nw,nwk,nk->k", lev, xi.levels[j][u], weight)
    return total


def sewing_integral(xi: ControlledPath, U: EvolutionFamily, interval=None, params: SewingParams | None = None,
                    m_max: int = 14, tol: float = 1e-9, germ: str = "averaged") -> DyadicRecord:
    """Dyadic sums Gamma^m of U_{t,tau} xi^j_tau o Pi^{j+1}(X) over [t_a, t_b].

    Refinement continues until the dyadic points exhaust the grid of the
    interval (after which Gamma^m is constant), or m_max is reached. Reaching
    the grid counts as convergence; otherwise the last increment must be
    below ``tol``.
    """
    if xi.variant != "D":
        raise ValueError("the integrand must be a D-variant path")
    a, b = (0, xi.n - 1) if interval is None else interval
    times = xi.X.times
    alpha = xi.params.alpha if params is None else params.alpha
    gamma = xi.params.gamma
    rec = DyadicRecord((a, b))
    if a == b:
        rec.values.append(np.zeros(len(xi.lambdas)))
        rec.converged = True
        return rec
    t_eval = times[b]
    full = b - a + 1
    saturated = False
    for m in range(m_max + 1):
        idx = dyadic_indices(times, a, b, m)
        rec.values.append(_germ_cells(xi, U, t_eval, idx, germ))
        if m > 0:
            diff = rec.values[-1] - rec.values[-2]
            rec.increments.append([float(scale_norm(diff, xi.lambdas, alpha - l * gamma))
                                   for l in range(xi.N + 1)])
        if len(idx) == full:
            saturated = True
            break
    last = rec.increments[-1][0] if rec.increments else 0.0
    rec.converged = saturated or last < tol
    if not rec.converged:
        raise SewingDivergence(f"increment {last:.3e} above tolerance after m = {len(rec.values) - 1}",
                               rec.increments)
    return rec


def decay_exponent(record: DyadicRecord, skip: int = 1) -> float:
    """Fitted rate c in |Gamma^m - Gamma^{m-1}| ~ 2^{-c m} (E_alpha increments)."""
    inc = np.array([r[0] for r in record.increments])
    m = np.arange(1, len(inc) + 1)
    keep = (inc > 0) & (m > skip)
    if keep.sum() < 2:
        return np.inf
    slope = np.polyfit(m[keep], np.log2(inc[keep]), 1)[0]
    return float(-slope)


def cumulative_integral(xi: ControlledPath, U: EvolutionFamily, germ: str = "averaged") -> np.ndarray:
    """int_0^{t_a} U_{t_a, v} xi dX at every grid point a, by the cell recursion.

    Uses U_{a+1, r} = U_{a+1, a} U_{a, r}, which makes the values coincide with
    the finest dyadic sums of ``sewing_integral`` on [0, t_a].
    """
    X = xi.X
    times = X.times
    n = xi.n
    out = np.zeros((n, len(xi.lambdas)))
    if n == 1:
        return out
    u = np.arange(n - 1)
    v = u + 1
    if germ == "averaged":
        weight = U.averaged_factor(times[v], times[u], times[v])
    else:
        weight = U.factor(times[v], times[u])
    step = U.factor(times[v], times[u])
    incr = np.zeros((n - 1, len(xi.lambdas)))
    for j in range(xi.N):
        incr += np.einsum("nw,nwk->nk", X.cells[j + 1], xi.levels[j][:-1])
    incr *= weight
    for k in range(n - 1):
        out[k + 1] = step[k] * out[k] + incr[k]
    return out


def integral_as_controlled(xi: ControlledPath, U: EvolutionFamily, germ: str = "averaged") -> ControlledPath:
    """The integral as a Dt-variant path: path component from the cumulative
    sums, higher levels shifted from the integrand."""
    if xi.variant != "D":
        raise ValueError("the integrand must be a D-variant path")
    zero = cumulative_integral(xi, U, germ)[:, None, :]
    levels = [zero] + list(xi.levels[:xi.N - 1])
    return ControlledPath("Dt", levels, xi.X, xi.lambdas, xi.params)


@dataclass
class CertificateReport:
    l: int
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else np.inf


def error_certificate(record: DyadicRecord, xi: ControlledPath, U: EvolutionFamily, X_levels: list,
                      l: int) -> CertificateReport:
    """Compare |integral - Gamma^0| in E_{alpha - l gamma} with the sewing bound.

    ``X_levels[j]`` is W_{Pi^j(X), gamma, p}(s, t) over the record's interval.
    Gamma^0 is the one-interval left-point germ.
    """
    from .controlled_paths import remainder_control
    a, b = record.interval
    pr = xi.params
    gp = pr.gamma - pr.p
    local = xi.restrict(a, b)
    times = local.X.times
    dt = times[-1] - times[0]
    g0 = _germ_cells(local, U, times[-1], np.array([0, local.n - 1]), "left")
    lhs = float(scale_norm(record.value - g0, xi.lambdas, pr.alpha - l * pr.gamma))
    P = [(i + 1) * pr.p - i * pr.gamma - pr.sigma for i in range(pr.N + 1)]
    rhs = 0.0
    last = local.n - 1
    for j in range(pr.N):
        kind = 2 if pr.N - j > 1 else 0
        Wr = float(remainder_control(local, j, pr.N, kind)[0, last])
        sup = local.sup_norm(j)
        rhs += X_levels[j + 1] ** ((j + 1) * gp) * (dt ** (P[pr.N] + l * gp) * Wr +
                                                    dt ** (P[j] + l * gp) * sup)
    rhs *= dt ** (l * pr.p)
    return CertificateReport(l, lhs, rhs)


# Young sewing -----------------------------------------------------------------

@dataclass
class YoungResult:
    value: np.ndarray
    increments: list
    levels: int
    defects: list = field(default_factory=list)


def germ_defects(germ: Callable, s, t, levels: int, grid=None) -> list:
    """max |Xi_{u,w} - Xi_{u,v} - Xi_{v,w}| over dyadic triples, per level."""
    out = []
    for m in range(levels):
        if grid is None:
            pts = s + (t - s) * np.arange(2**(m + 1) + 1) / 2**(m + 1)
        else:
            pts = dyadic_indices(grid, s, t, m + 1)
        if len(pts) < 3:
            break
        u, v, w = pts[:-2:2], pts[1:-1:2], pts[2::2]
        d = np.asarray(germ(u, w)) - np.asarray(germ(u, v)) - np.asarray(germ(v, w))
        out.append(float(np.max(np.abs(d))))
    return out


def young_sewing(germ: Callable, s, t, tol: float = 1e-9, m_max: int = 30,
                 grid=None, chunk: int = 1 << 20, defect_check: bool = False) -> YoungResult:
    """Dyadic limit of sums of a two-parameter germ over [s, t].

    Without ``grid`` the germ receives arrays of real times (u, v). With a grid
    the dyadic points are snapped to it and the germ receives index arrays; the
    refinement then ends once every grid point is used. ``defect_check``
    attaches the per-level defects of the germ to the result.
    """
    def level_sum(m):
        if grid is None:
            total = None
            count = 2**m
            for start in range(0, count, chunk):
                k = np.arange(start, min(count, start + chunk))
                u = s + (t - s) * k / count
                v = s + (t - s) * (k + 1) / count
                part = np.sum(np.asarray(germ(u, v)), axis=0)
                total = part if total is None else total + part
            return total, None
        idx = dyadic_indices(grid, s, t, m)
        return np.sum(np.asarray(germ(idx[:-1], idx[1:])), axis=0), len(idx)

    def finish(val, increments, m):
        defects = germ_defects(germ, s, t, min(m, 12), grid) if defect_check else []
        return YoungResult(val, increments, m, defects)

    saturated = (lambda used: grid is not None and used == t - s + 1)
    increments = []
    prev = None
    for m in range(m_max + 1):
        val, used = level_sum(m)
        if prev is not None:
            increments.append(float(np.max(np.abs(val - prev))))
            if increments[-1] < tol or saturated(used):
                return finish(val, increments, m)
        elif saturated(used):
            return finish(val, increments, m)
        prev = val
    defects = germ_defects(germ, s, t, min(m_max, 12), grid)
    raise SewingDivergence(f"no convergence after {m_max} dyadic levels; germ defects by level "
                           f"{[f'{d:.2e}' for d in defects]}", increments)


# drift convolution -----------------------------------------------------------

class Drift:
    """F(t, z) = linear * z + nonlinear * tanh(z) + forcing, acting mode by mode.

    Lipschitz in every E_beta with constant max|linear| + |nonlinear|.
    """

    def __init__(self, K: int, linear=0.0, nonlinear: float = 0.0, forcing=None):
        self.linear = np.broadcast_to(np.asarray(linear, dtype=float), (K,)).copy()
        self.nonlinear = float(nonlinear)
        self.forcing = np.zeros(K) if forcing is None else np.asarray(forcing, dtype=float)

    @property
    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.linear)) + abs(self.nonlinear))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.linear) and self.nonlinear == 0 and not np.any(self.forcing)

    def __call__(self, t, z):
        z = np.asarray(z, dtype=float)
        out = self.linear * z + self.forcing
        if self.nonlinear:
            out = out + self.nonlinear * np.tanh(z)
        return out


def drift_values(F: Drift, U: EvolutionFamily, times, path_component: np.ndarray) -> np.ndarray:
    """Z at every grid point: exponential integrator with F linear on each cell."""
    times = np.asarray(times, dtype=float)
    n = times.size
    Fv = F(times[:, None], path_component)
    Z = np.zeros_like(path_component)
    if n == 1:
        return Z
    u, v = times[:-1], times[1:]
    left, right = U.cell_weights(u, v)
    step = U.factor(v, u)
    incr = left * Fv[:-1] + right * Fv[1:]
    if not np.all(np.isfinite(incr)):
        raise FloatingPointError("drift quadrature produced non-finite values; refine the cells")
    for k in range(n - 1):
        Z[k + 1] = step[k] * Z[k] + incr[k]
    return Z


def drift_convolution(F: Drift, yt: ControlledPath, U: EvolutionFamily) -> ControlledPath:
    """Z_tau = int_s^tau U_{tau,u} F(u, y_u) du as a Dt path with zero higher levels."""
    Z = drift_values(F, U, yt.X.times, yt.levels[0][:, 0, :])
    levels = [Z[:, None, :]] + [np.zeros_like(lev) for lev in yt.levels[1:]]
    return yt.with_levels(levels)


def free_path(y, U: EvolutionFamily, like: ControlledPath) -> ControlledPath:
    """tau -> U_{tau,s} y with zero higher levels."""
    times = like.X.times
    Y = U.factor(times, times[0]) * np.asarray(y)[None, :]
    levels = [Y[:, None, :]] + [np.zeros_like(lev) for lev in like.levels[1:]]
    return like.with_levels(levels)
