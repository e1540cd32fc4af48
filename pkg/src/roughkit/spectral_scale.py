"""Diagonal spectral scale E_alpha and a non-autonomous heat-type evolution family.

Elements are coefficient vectors on a truncated eigenbasis with eigenvalues
lambda_k (k^2 by default). All operators act mode by mode; the last array
axis is always the mode axis.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np


def default_eigenvalues(K: int = 64) -> np.ndarray:
    return np.arange(1, K + 1, dtype=float) ** 2


def scale_norm(coefs, lambdas, alpha: float) -> np.ndarray:
    """|x|_alpha = (sum lambda_k^{2 alpha} x_k^2)^{1/2} over the last axis."""
    coefs = np.asarray(coefs, dtype=float)
    return np.sqrt(np.sum((np.asarray(lambdas) ** alpha * coefs) ** 2, axis=-1))


@dataclass
class SpectralElement:
    coefs: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        self.coefs = np.asarray(self.coefs, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self.coefs.shape[-1] != self.lambdas.size:
            raise ValueError("coefficient and eigenvalue counts differ")

    @property
    def K(self) -> int:
        return self.lambdas.size

    def norm(self, alpha: float) -> float:
        return float(scale_norm(self.coefs, self.lambdas, alpha))

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "lambda", "coef"])
            for k, (lam, c) in enumerate(zip(self.lambdas, self.coefs), start=1):
                w.writerow([k, repr(float(lam)), repr(float(c))])


def alpha_norm(x: SpectralElement, alpha: float) -> float:
    return x.norm(alpha)


def fractional_power(x, beta: float, lambdas=None):
    """Multiply mode k by lambda_k^beta."""
    if isinstance(x, SpectralElement):
        return SpectralElement(x.lambdas ** beta * x.coefs, x.lambdas)
    return np.asarray(lambdas) ** beta * np.asarray(x)


def phi1(z):
    """(1 - e^{-z})/z with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z / 2, -np.expm1(-zs) / zs)


def psi1(z):
    """int_0^1 x e^{-z x} dx = (1 - e^{-z}(1+z))/z^2."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-4
    zs = np.where(small, 1.0, z)
    exact = (-np.expm1(-zs) - zs * np.exp(-zs)) / zs**2
    series = 0.5 - z / 3 + z**2 / 8 - z**3 / 30
    return np.where(small, series, exact)


class EvolutionFamily:
    """U_{t,s} = diag exp(-lambda_k (A(t) - A(s))) with A' = a > 0."""

    def __init__(self, lambdas, a: Callable | None = None, A: Callable | None = None,
                 holder: float = 1.0, name: str = "default"):
        self.lambdas = np.asarray(lambdas, dtype=float)
        if np.any(self.lambdas < 0):
            raise ValueError("eigenvalues must be nonnegative")
        if a is None:
            a = lambda t: 1.0 + 0.5 * np.sin(2 * np.pi * np.asarray(t, dtype=float))
            A = lambda t: np.asarray(t, dtype=float) + (1.0 - np.cos(2 * np.pi * np.asarray(t, dtype=float))) / (4 * np.pi)
        elif A is None:
            raise ValueError("a custom coefficient needs its primitive A")
        self.a = a
        self.A = A
        self.holder = holder
        self.name = name

    @staticmethod
    def constant(lambdas, c: float = 1.0) -> "EvolutionFamily":
        return EvolutionFamily(lambdas, a=lambda t: c + 0.0 * np.asarray(t, dtype=float),
                               A=lambda t: c * np.asarray(t, dtype=float), name=f"constant({c})")

    @property
    def K(self) -> int:
        return self.lambdas.size

    def factor(self, t, s) -> np.ndarray:
        """Diagonal of U_{t,s}; broadcasts over t, s with the mode axis appended."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if np.any(t < s):
            raise ValueError("U_{t,s} needs s <= t")
        dA = self.A(t) - self.A(s)
        return np.exp(-np.multiply.outer(dA, self.lambdas))

    def apply(self, t, s, x):
        if isinstance(x, SpectralElement):
            return SpectralElement(self.factor(t, s) * x.coefs, x.lambdas)
        return self.factor(t, s) * np.asarray(x)

    def averaged_factor(self, t, u, v) -> np.ndarray:
        """Mean of U_{t,r} over r in [u, v], with A linear inside [u, v].

        Exact when a is constant on the cell.
        """
        dA = np.multiply.outer(np.asarray(self.A(v) - self.A(u), dtype=float), self.lambdas)
        return self.factor(t, v) * phi1(dA)

    def cell_weights(self, u, v):
        """Weights (w_left, w_right) with int_u^v U_{v,r} f(r) dr for f linear on [u, v].

        Diagonal exponential integrated exactly, A linearised on the cell.
        """
        h = np.asarray(v, dtype=float) - np.asarray(u, dtype=float)
        z = np.multiply.outer(np.asarray(self.A(v) - self.A(u), dtype=float), self.lambdas)
        hh = h[..., None] if np.ndim(h) else h
        right = hh * (phi1(z) - psi1(z))
        left = hh * psi1(z)
        return left, right


def apply_U(U: EvolutionFamily, t, s, x):
    return U.apply(t, s, x)


@dataclass
class SmoothingReport:
    C1: float
    C2: float
    bound2: float | None


def smoothing_check(U: EvolutionFamily, alpha: float, sigma1: float, sigma2: float, xs, times) -> SmoothingReport:
    """Empirical constants of the two smoothing estimates over samples and time pairs.

    C1 = sup |(U_{t,s} - I)x|_alpha / (|t-s|^sigma1 |x|_{alpha+sigma1}),
    C2 = sup |U_{t,s} x|_{alpha+sigma2} |t-s|^sigma2 / |x|_alpha.
    Pairs with t = s contribute 0.
    """
    lam = U.lambdas
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    times = np.asarray(times, dtype=float)
    C1 = C2 = 0.0
    for i, s in enumerate(times):
        for t in times[i + 1:]:
            f = U.factor(t, s)
            dt = t - s
            num1 = scale_norm((f - 1.0) * xs, lam, alpha)
            den1 = dt**sigma1 * scale_norm(xs, lam, alpha + sigma1)
            num2 = scale_norm(f * xs, lam, alpha + sigma2) * dt**sigma2
            den2 = scale_norm(xs, lam, alpha)
            ok1 = den1 > 0
            ok2 = den2 > 0
            if np.any(ok1):
                C1 = max(C1, float(np.max(num1[ok1] / den1[ok1])))
            if np.any(ok2):
                C2 = max(C2, float(np.max(num2[ok2] / den2[ok2])))
    bound = (sigma2 / np.e) ** sigma2 if sigma2 > 0 else 1.0
    return SmoothingReport(C1, C2, bound)
