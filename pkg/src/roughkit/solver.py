"""Mild solutions of dy = A(t) y dt + F(t, y) dt + G(t, y) dX by Picard iteration
in the controlled-path norm, with greedy-interval concatenation and the
Gronwall-type a-priori bound.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .controlled_paths import (ControlledPath, GOperator, compose_linear_G, controlled_norm,
                               solution_levels, hs_norm)
from .sewing import (Drift, SewingParams, drift_convolution, free_path, integral_as_controlled)
from .spectral_scale import EvolutionFamily, scale_norm
from .tensor_algebra import RoughPathGrid
from .variation_controls import greedy_points, rough_path_controls


class PicardDivergence(RuntimeError):
    def __init__(self, message, history, location=None):
        super().__init__(message)
        self.history = history
        self.location = location


@dataclass
class SolveConfig:
    params: SewingParams
    U: EvolutionFamily
    F: Drift
    G: GOperator
    chi: float
    L: float = 1.0
    delta: float = 0.0  # F maps E_alpha into E_{alpha - delta}
    beta: float = 1.0  # third term of delta_2; not determined by theory
    tol: float = 1e-7
    max_iter: int = 60
    on_block: str = "cell"
    enforce_chi: bool = False  # chi <= L2 is usually far below one grid cell

    @property
    def delta2(self) -> float:
        pr = self.params
        return min(1 - self.delta, 1 - pr.N * pr.gamma, self.beta)

    @property
    def L2(self) -> float:
        """Step cap from L (step)^{delta_2} <= 1/3."""
        return (1.0 / (3.0 * self.L)) ** (1.0 / self.delta2)

    def validate(self):
        if self.L < 1:
            raise ValueError("L must be at least 1")
        if self.enforce_chi and not 0 < self.chi <= self.L2:
            raise ValueError(f"chi = {self.chi:g} must lie in (0, L2 = {self.L2:g}]")


@dataclass
class IntervalSolution:
    path: ControlledPath
    iterations: int
    history: list


@dataclass
class SolutionPath:
    times: np.ndarray
    values: np.ndarray  # (n, K)
    levels: list  # Dt levels on the full grid
    partition: list  # grid indices of the subintervals
    iterations: list
    lambdas: np.ndarray

    def sup_norm(self, alpha: float) -> float:
        return float(np.max(scale_norm(self.values, self.lambdas, alpha)))

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau", "mode", "coef"])
            for t, row in zip(self.times, self.values):
                for k, c in enumerate(row, start=1):
                    w.writerow([repr(float(t)), k, repr(float(c))])


def initial_guess(y, X: RoughPathGrid, config: SolveConfig) -> ControlledPath:
    pr = config.params
    lam = config.U.lambdas
    Y = config.U.factor(X.times, X.times[0]) * np.asarray(y)[None, :]
    levels = solution_levels(config.G, X.times, Y, pr.N)
    return ControlledPath("Dt", levels, X, lam, pr.scale)


def picard_step(current: ControlledPath, y, config: SolveConfig) -> ControlledPath:
    """One application of the mild-solution map on the current interval."""
    integrand = compose_linear_G(config.G, current)
    rough = integral_as_controlled(integrand, config.U)
    free = free_path(y, config.U, current)
    if config.F.is_zero:
        return free + rough
    return free + drift_convolution(config.F, current, config.U) + rough


def solve_interval(y, X: RoughPathGrid, config: SolveConfig, start: ControlledPath | None = None) -> IntervalSolution:
    """Iterate the mild-solution map to a fixed point in the controlled norm.

    ``X`` is the driving path restricted to the interval.
    """
    current = initial_guess(y, X, config) if start is None else start
    history = []
    for it in range(1, config.max_iter + 1):
        new = picard_step(current, y, config)
        diff = controlled_norm(new - current).total
        history.append(diff)
        current = new
        if diff < config.tol:
            return IntervalSolution(current, it, history)
    raise PicardDivergence(f"no fixed point after {config.max_iter} iterations "
                           f"(last difference {history[-1]:.3e})", history)


def solve_global(y, X: RoughPathGrid, config: SolveConfig, partition=None, T_index: int | None = None,
                 start_index: int = 0) -> SolutionPath:
    """Solve on [t_start, t_T] by greedy subintervals and the flow property."""
    config.validate()
    pr = config.params
    last = X.m if T_index is None else T_index
    if partition is None:
        partition = greedy_partition(X, config, start_index, last).indices
    lam = config.U.lambdas
    n = X.m + 1
    values = np.zeros((n, len(lam)))
    levels = [np.zeros((n, X.d**j, len(lam))) for j in range(pr.N)]
    iterations = []
    state = np.asarray(y, dtype=float)
    for a, b in zip(partition[:-1], partition[1:]):
        try:
            sol = solve_interval(state, X.restrict(a, b), config)
        except PicardDivergence as exc:
            exc.location = (a, b)
            raise
        for j in range(pr.N):
            levels[j][a:b + 1] = sol.path.levels[j]
        values[a:b + 1] = sol.path.levels[0][:, 0, :]
        iterations.append(sol.iterations)
        state = sol.path.levels[0][-1, 0, :]
    sl = slice(start_index, last + 1)
    return SolutionPath(X.times[sl], values[sl], [lev[sl] for lev in levels], list(partition), iterations, lam)


def greedy_partition(X: RoughPathGrid, config: SolveConfig, a: int = 0, b: int | None = None):
    pr = config.params
    b = X.m if b is None else b
    controls = rough_path_controls(X, pr.gamma, pr.p)
    return greedy_points(controls.total.W, pr.gamma - pr.p, config.chi, (a, b), X.times,
                         on_block=config.on_block, max_step=config.L2)


def consistency_residual(sol: SolutionPath, G: GOperator, alpha: float, gamma: float) -> float:
    """max over grid and levels of |xi^i - G^{oi}(xi^0)| in E_{alpha - i gamma}."""
    N = len(sol.levels)
    expected = solution_levels(G, sol.times, sol.values, N)
    worst = 0.0
    for i in range(1, N):
        err = hs_norm(sol.levels[i] - expected[i], sol.lambdas, alpha - i * gamma)
        worst = max(worst, float(np.max(err)))
    return worst


# a-priori bound ---------------------------------------------------------------

@dataclass
class AprioriBound:
    P0: float
    P1: float
    P2: float
    N_greedy: int


def gronwall_factors(N_greedy: int, L: float) -> AprioriBound:
    P1 = float(np.exp(N_greedy * np.log(3 * L)))
    P0 = (P1 - 1.0) / (3 * L - 1.0)
    P2 = 1.0 + P0 + P1
    return AprioriBound(P0, P1, P2, N_greedy)


def a_priori_bound(total_W, power: float, interval, chi: float, L: float, times=None,
                   on_block: str = "cell") -> AprioriBound:
    seq = greedy_points(total_W, power, chi, interval, times, on_block=on_block)
    return gronwall_factors(seq.count, L)


def one_step_L(sol: SolutionPath, X: RoughPathGrid, config: SolveConfig) -> float:
    """Smallest L making the one-step inequality hold on every solved subinterval.

    The inequality reads
    ||phi||_[a,b] <= L [1 + |phi_a| + (dt^{delta_2} + W_1^{gamma-sigma}
                                       + sum_j W_j^{j(gamma-p)}) ||phi||_[a,b]].
    """
    pr = config.params
    gp = pr.gamma - pr.p
    best = 1.0
    part = sol.partition
    offset = part[0]
    for a, b in zip(part[:-1], part[1:]):
        Xab = X.restrict(a, b)
        ctr = rough_path_controls(Xab, pr.gamma, pr.p)
        last = Xab.m
        bracket = (X.times[b] - X.times[a]) ** config.delta2 + ctr.levels[1].W[0, last] ** (pr.gamma - pr.sigma)
        bracket += sum(ctr.levels[j].W[0, last] ** (j * gp) for j in range(1, pr.N + 1))
        path = ControlledPath("Dt", [lev[a - offset:b - offset + 1] for lev in sol.levels], Xab,
                              sol.lambdas, pr.scale)
        norm = controlled_norm(path).total
        start = float(scale_norm(sol.values[a - offset], sol.lambdas, pr.alpha))
        best = max(best, norm / (1.0 + start + bracket * norm))
    return best
