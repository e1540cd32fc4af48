"""Fractional Brownian motion on a grid, piecewise-linear lifts, and
Cameron-Martin elements from the reproducing-kernel span."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .tensor_algebra import RoughPathGrid, batch_exponential

CM_EPSILON = 0.01


class SamplingError(RuntimeError):
    pass


def fbm_covariance(s, t, H: float) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (np.abs(s) ** (2 * H) + np.abs(t) ** (2 * H) - np.abs(t - s) ** (2 * H))


def cm_exponent(H: float, eps: float = CM_EPSILON) -> float:
    """Variation exponent gamma' = H + 1/2 - eps of the Cameron-Martin space."""
    return H + 0.5 - eps


def sample_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Generator for sample ``index`` of a run with base ``seed``.

    Splitting rule: the pair (seed, index) is hashed by numpy's SeedSequence,
    so samples are independent of how they are distributed over workers.
    """
    if index is None:
        return np.random.default_rng(seed)
    return np.random.default_rng([seed, index])


@dataclass
class PathSamples:
    times: np.ndarray
    values: np.ndarray  # shape (m+1, d)
    H: float | None = None
    seed: int | None = None

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(self.d)])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @staticmethod
    def from_csv(path) -> "PathSamples":
        rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        data = np.array([[float(x) for x in ln.split(",")] for ln in rows[1:]])
        return PathSamples(data[:, 0], data[:, 1:])


class FBMSampler:
    """Exact fBm sampler on a fixed grid; the Cholesky factor is built once."""

    def __init__(self, H: float, times, jitter: float = 1e-13):
        if not 0.25 < H <= 0.5:
            raise ValueError(f"Hurst index must lie in (1/4, 1/2], got {H}")
        times = np.asarray(times, dtype=float)
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("grid must start at 0 and increase strictly")
        self.H = H
        self.times = times
        inner = times[1:]
        cov = fbm_covariance(inner[:, None], inner[None, :], H)
        try:
            self.factor = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError:
            try:
                self.factor = linalg.cholesky(cov + jitter * np.trace(cov) / len(inner) * np.eye(len(inner)),
                                              lower=True)
            except linalg.LinAlgError:
                smallest = float(np.linalg.eigvalsh(cov)[0])
                raise SamplingError(f"covariance not positive definite; smallest eigenvalue {smallest:.3e}")

    def sample(self, d: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.times.size - 1, d))
        return np.vstack([np.zeros((1, d)), self.factor @ z])


def sample_fbm(H: float, grid, d: int, seed: int, index: int | None = None) -> PathSamples:
    sampler = FBMSampler(H, grid)
    return PathSamples(sampler.times, sampler.sample(d, sample_rng(seed, index)), H, seed)


def lift_values(times, values, N: int) -> RoughPathGrid:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    cells = batch_exponential(np.diff(values, axis=0), N)
    return RoughPathGrid(times, cells, values.shape[1])


def lift_path(path, N: int, times=None) -> RoughPathGrid:
    """Canonical lift of the piecewise-linear interpolation.

    Accepts PathSamples, or a CMElement together with the grid ``times``.
    """
    if isinstance(path, CMElement):
        if times is None:
            raise ValueError("a CMElement needs a grid to be lifted")
        return lift_values(times, path(times), N)
    return lift_values(path.times, path.values, N)


@dataclass
class CMElement:
    """h(t) = sum_i c_i R(s_i, t), one coefficient column per component."""

    knots: np.ndarray
    coefs: np.ndarray  # shape (r, d)
    H: float
    _gram: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        self.coefs = np.asarray(self.coefs, dtype=float).reshape(self.knots.size, -1)
        self._gram = fbm_covariance(self.knots[:, None], self.knots[None, :], self.H)

    @property
    def d(self) -> int:
        return self.coefs.shape[1]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return fbm_covariance(t[:, None], self.knots[None, :], self.H) @ self.coefs

    def __add__(self, other: "CMElement") -> "CMElement":
        if other.H != self.H:
            raise ValueError("Hurst indices differ")
        return CMElement(np.concatenate([self.knots, other.knots]),
                         np.vstack([self.coefs, other.coefs]), self.H)

    def scaled(self, c: float) -> "CMElement":
        return CMElement(self.knots, c * self.coefs, self.H)

    def sampled(self, times) -> PathSamples:
        return PathSamples(np.asarray(times, dtype=float), self(times), self.H)


def cm_norm(h: CMElement) -> float:
    """Cameron-Martin norm, exact on the kernel span."""
    q = float(np.einsum("id,ij,jd->", h.coefs, h._gram, h.coefs))
    if q < -1e-10:
        raise ArithmeticError(f"negative Gram quadratic form {q:.3e}")
    return float(np.sqrt(max(q, 0.0)))
