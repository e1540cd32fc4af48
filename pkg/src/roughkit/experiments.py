"""Configuration, Monte Carlo tail and moment experiments, CSV and SVG output."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .controlled_paths import GOperator
from .gaussian_paths import CM_EPSILON, FBMSampler, lift_values, sample_rng
from .sewing import Drift, ParameterError, validate_params
from .solver import PicardDivergence, SolveConfig, gronwall_factors, solve_global
from .spectral_scale import EvolutionFamily, default_eigenvalues, scale_norm
from .variation_controls import greedy_points, rough_path_controls

log = logging.getLogger(__name__)

# key -> (type, meaning)
CONFIG_KEYS = {
    "hurst": (float, "H, Hurst index of the driving fBm"),
    "gamma": (float, "gamma, regularity of the rough path"),
    "p": (float, "p, time weight of the controls"),
    "sigma": (float, "sigma, spatial loss of the diffusion"),
    "gamma_h": (float, "gamma', regularity of Cameron-Martin directions (default H + 1/2 - eps)"),
    "N": (int, "N, truncation level (default floor(1/gamma))"),
    "d": (int, "d, noise dimension"),
    "T": (float, "T, time horizon"),
    "grid": (int, "m, number of grid cells"),
    "modes": (int, "K, number of spectral modes"),
    "chi": (float, "chi, greedy threshold"),
    "rho": (float, "rho, E_alpha norm of the initial data"),
    "samples": (int, "M, Monte Carlo sample count"),
    "seed": (int, "base seed; sample i uses the stream (seed, i)"),
    "out": (str, "output directory"),
    "alpha": (float, "alpha, base index of the scale"),
    "amplitude": (float, "amplitude of the diffusion coefficients c_i(t)"),
    "drift_linear": (float, "linear part of the drift"),
    "drift_nonlinear": (float, "tanh part of the drift"),
    "L": (float, "L, one-step constant of the a-priori bound"),
    "q": (str, "comma-separated moment orders"),
    "workers": (int, "worker processes"),
    "path": (str, "input path CSV for single-stage commands"),
    "h_scale": (float, "size of the single-knot translation direction h = c R(T/2, .)"),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    hurst: float = 0.4
    gamma: float = 0.35
    p: float = 0.28
    sigma: float = 0.05
    gamma_h: float | None = None
    N: int | None = None
    d: int = 2
    T: float = 1.0
    grid: int = 256
    modes: int = 64
    chi: float = 0.2
    rho: float = 1.0
    samples: int = 2000
    seed: int = 0
    out: str = "out"
    alpha: float = 0.0
    amplitude: float = 0.5
    drift_linear: float = 0.0
    drift_nonlinear: float = 0.0
    L: float = 1.0
    q: str = "1,2,4,8"
    workers: int = 1
    path: str | None = None
    h_scale: float = 1.0

    def __post_init__(self):
        if self.gamma_h is None:
            self.gamma_h = self.hurst + 0.5 - CM_EPSILON
        if self.N is None:
            self.N = int(np.floor(1.0 / self.gamma))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.grid + 1)

    @property
    def q_list(self) -> list:
        return [float(v) for v in str(self.q).split(",") if v.strip()]

    @property
    def target_slope(self) -> float:
        return 2 * (self.gamma_h - self.p)

    def validate(self, moments: bool = False):
        try:
            validate_params(self.gamma, self.p, self.sigma, self.N, self.alpha)
        except ParameterError as exc:
            raise ConfigError(f"gamma/p/sigma/N: {exc}") from exc
        if not self.gamma < self.hurst:
            raise ConfigError(f"gamma: need gamma < hurst, got {self.gamma} >= {self.hurst}")
        if abs(self.gamma_h - (self.hurst + 0.5 - CM_EPSILON)) > 1e-12:
            raise ConfigError(f"gamma_h: must equal hurst + 1/2 - {CM_EPSILON}")
        for key in ("grid", "modes", "samples", "d"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be positive")
        if self.chi <= 0:
            raise ConfigError("chi: must be positive")
        if moments:
            if not 2 * (self.gamma_h - self.p) > 1:
                raise ConfigError(f"gamma_h/p: moment experiments need 2(gamma_h - p) > 1, "
                                  f"got {2 * (self.gamma_h - self.p):g}")
            if any(q > 10 for q in self.q_list):
                raise ConfigError("q: orders above 10 are not supported")
        return self

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()

    def header(self) -> list:
        return [f"config {json.dumps(asdict(self), sort_keys=True)}", f"sha1 {self.digest()}"]


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        kind = CONFIG_KEYS[key][0]
        try:
            out[key] = kind(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot read '{value}' as {kind.__name__}") from exc
    return out


def load_config(config_file=None, **overrides) -> ExperimentConfig:
    values = {}
    if config_file is not None:
        with open(config_file) as fh:
            values.update(parse_config_text(fh.read()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentConfig)}
    bad = set(values) - known
    if bad:
        raise ConfigError(f"unknown keys: {sorted(bad)}")
    return ExperimentConfig(**values)


# tail estimation ----------------------------------------------------------------

@dataclass
class TailReport:
    thresholds: np.ndarray
    p_hat: np.ndarray
    se: np.ndarray
    exceedances: np.ndarray
    slope: float
    intercept: float
    ci: tuple
    target: float
    bins_used: int
    degenerate: bool
    samples: int
    extra: dict = field(default_factory=dict)

    @property
    def within(self) -> float:
        return abs(self.slope - self.target)

    def covers_target(self) -> bool:
        return bool(self.ci[0] <= self.target <= self.ci[1])

    def write(self, out_dir, prefix="", header=()):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{prefix}tail.csv"), "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            fh.write("n,p_hat,se\n")
            for n, p, s in zip(self.thresholds, self.p_hat, self.se):
                fh.write(f"{float(n)!r},{float(p)!r},{float(s)!r}\n")
        with open(os.path.join(out_dir, f"{prefix}fit.csv"), "w") as fh:
            for line in header:
                fh.write(f"# {line}\n")
            if self.degenerate:
                fh.write("# degenerate fit: fewer than 3 usable bins\n")
            fh.write("slope,intercept,ci_lo,ci_hi,target\n")
            fh.write(f"{self.slope!r},{self.intercept!r},{self.ci[0]!r},{self.ci[1]!r},{self.target!r}\n")
        write_tail_svg(self, os.path.join(out_dir, f"{prefix}tail.svg"))


def empirical_tail(values, thresholds):
    values = np.asarray(values, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    counts = (values[None, :] > thresholds[:, None]).sum(axis=1)
    p = counts / values.size
    se = np.sqrt(p * (1 - p) / values.size)
    return p, se, counts


def fit_bins(thresholds, p, counts, min_count: int = 20):
    return (counts >= min_count) & (p < 1) & (p > 0) & (np.asarray(thresholds) > 0)


def stretched_fit(thresholds, p, counts, min_count: int = 20):
    """OLS of log(-log p) on log n over bins with enough exceedances."""
    keep = fit_bins(thresholds, p, counts, min_count)
    if keep.sum() < 3:
        return np.nan, np.nan, int(keep.sum())
    x = np.log(np.asarray(thresholds)[keep])
    y = np.log(-np.log(p[keep]))
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept), int(keep.sum())


def tail_report(values, thresholds, target: float, rng: np.random.Generator,
                resamples: int = 200, min_count: int = 20) -> TailReport:
    values = np.asarray(values, dtype=float)
    p, se, counts = empirical_tail(values, thresholds)
    slope, intercept, used = stretched_fit(thresholds, p, counts, min_count)
    degenerate = used < 3
    if degenerate:
        warnings.warn(f"tail fit degenerate: only {used} usable bins", RuntimeWarning)
        ci = (np.nan, np.nan)
    else:
        boot = []
        for _ in range(resamples):
            sample = rng.choice(values, size=values.size, replace=True)
            pb, _, cb = empirical_tail(sample, thresholds)
            s, _, u = stretched_fit(thresholds, pb, cb, min_count)
            if u >= 3:
                boot.append(s)
        ci = tuple(np.percentile(boot, [2.5, 97.5])) if boot else (np.nan, np.nan)
    return TailReport(np.asarray(thresholds, dtype=float), p, se, counts, slope, intercept,
                      (float(ci[0]), float(ci[1])), target, used, degenerate, values.size)


def integer_thresholds(values):
    values = np.asarray(values)
    return np.arange(max(1, int(values.min()) - 1), int(values.max()) + 1, dtype=float)


def quantile_thresholds(values, count: int = 40):
    values = np.asarray(values, dtype=float)
    return np.unique(np.quantile(values, np.linspace(0.0, 0.99, count)))


# greedy tail ---------------------------------------------------------------------

def greedy_count(config: ExperimentConfig, index: int, sampler: FBMSampler | None = None):
    """(N-tilde, number of forced one-cell steps) for sample ``index``."""
    sampler = sampler or FBMSampler(config.hurst, config.times)
    X = lift_values(config.times, sampler.sample(config.d, sample_rng(config.seed, index)), config.N)
    controls = rough_path_controls(X, config.gamma, config.p)
    seq = greedy_points(controls.total.W, config.gamma - config.p, config.chi, on_block="cell")
    return seq.count, len(seq.forced)


def _map(func, config, indices):
    if config.workers <= 1:
        return [func(config, i) for i in indices]
    with ProcessPoolExecutor(config.workers) as pool:
        return list(pool.map(func, [config] * len(indices), indices, chunksize=16))


def _greedy_worker(config, index):
    return greedy_count(config, index, _sampler_cache(config.hurst, config.T, config.grid))


_SAMPLERS = {}


def _sampler_cache(H, T, m):
    key = (H, T, m)
    if key not in _SAMPLERS:
        _SAMPLERS[key] = FBMSampler(H, np.linspace(0.0, T, m + 1))
    return _SAMPLERS[key]


def run_mc_greedy_tail(config: ExperimentConfig, write: bool = True) -> TailReport:
    config.validate()
    if config.samples < 500:
        raise ConfigError("samples: the tail experiment needs at least 500 samples")
    results = _map(_greedy_worker, config, range(config.samples))
    counts = np.array([r[0] for r in results])
    forced = np.array([r[1] for r in results])
    report = tail_report(counts, integer_thresholds(counts), config.target_slope,
                         np.random.default_rng([config.seed, 10**6]))
    report.extra = {"N_greedy": counts, "forced": forced,
                    "forced_fraction": float(forced.sum() / max(counts.sum(), 1))}
    if write:
        report.write(config.out, "greedy_", config.header())
    return report


# solution moments ------------------------------------------------------------------

def initial_directions(lambdas, alpha: float, rho: float) -> np.ndarray:
    """Four fixed directions on the sphere |y|_alpha = rho."""
    K = lambdas.size
    k = np.arange(1, K + 1, dtype=float)
    dirs = np.zeros((4, K))
    dirs[0, 0] = 1.0
    dirs[1, min(1, K - 1)] = 1.0
    dirs[2] = 1.0 / k**2
    dirs[3] = np.random.default_rng(12345).normal(size=K) / k**2
    norms = scale_norm(dirs, lambdas, alpha)
    return rho * dirs / norms[:, None]


def build_problem(config: ExperimentConfig):
    lam = default_eigenvalues(config.modes)
    params = validate_params(config.gamma, config.p, config.sigma, config.N, config.alpha)
    U = EvolutionFamily(lam)
    F = Drift(config.modes, config.drift_linear, config.drift_nonlinear)
    G = GOperator(config.d, config.sigma, lam, config.amplitude)
    return SolveConfig(params, U, F, G, chi=config.chi, L=config.L)


@dataclass
class SampleResult:
    index: int
    sup_norm: float
    N_greedy: int
    P1: float
    P2: float
    iters: int
    failed: bool = False


def solve_sample(config: ExperimentConfig, index: int) -> SampleResult:
    solve_cfg = build_problem(config)
    sampler = _sampler_cache(config.hurst, config.T, config.grid)
    X = lift_values(config.times, sampler.sample(config.d, sample_rng(config.seed, index)), config.N)
    y = initial_directions(solve_cfg.U.lambdas, config.alpha, config.rho)[index % 4]
    controls = rough_path_controls(X, config.gamma, config.p)
    seq = greedy_points(controls.total.W, config.gamma - config.p, config.chi, on_block="cell")
    bound = gronwall_factors(seq.count, config.L)
    try:
        sol = solve_global(y, X, solve_cfg)
    except (PicardDivergence, FloatingPointError) as exc:
        log.warning("sample %d failed: %s", index, exc)
        return SampleResult(index, np.nan, seq.count, bound.P1, bound.P2, 0, True)
    return SampleResult(index, sol.sup_norm(config.alpha), seq.count, bound.P1, bound.P2,
                        int(sum(sol.iterations)))


def jackknife_moment(values, q: float):
    """q-th moment and its jackknife standard error."""
    x = np.asarray(values, dtype=float) ** q
    n = x.size
    loo = (x.sum() - x) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return float(x.mean()), float(se)


@dataclass
class MomentReport:
    qs: list
    moments: list  # (moment, se) on all samples
    half: list  # (moment, se) on the first half
    tail: TailReport
    results: list
    failures: int

    def stable(self, q_max: float = 8, k: float = 3.0) -> list:
        """Per order: |m(M) - m(M/2)| <= k * se(M/2)."""
        out = []
        for q, (m, _), (mh, seh) in zip(self.qs, self.moments, self.half):
            if q <= q_max:
                out.append((q, abs(m - mh), k * seh, abs(m - mh) <= k * seh))
        return out


class ExperimentAborted(RuntimeError):
    pass


def run_mc_solution_moments(config: ExperimentConfig, qs=None, write: bool = True) -> MomentReport:
    config.validate(moments=True)
    qs = config.q_list if qs is None else list(qs)
    results = _map(solve_sample, config, range(config.samples))
    failures = sum(r.failed for r in results)
    if failures > 0.01 * config.samples:
        raise ExperimentAborted(f"{failures} of {config.samples} solves failed")
    sup = np.array([r.sup_norm for r in results if not r.failed])
    half = sup[:sup.size // 2]
    moments = [jackknife_moment(sup, q) for q in qs]
    halves = [jackknife_moment(half, q) for q in qs]
    tail = tail_report(sup, quantile_thresholds(sup), config.target_slope,
                       np.random.default_rng([config.seed, 10**6 + 1]))
    report = MomentReport(qs, moments, halves, tail, results, failures)
    if write:
        write_moments(report, config)
    return report


def write_moments(report: MomentReport, config: ExperimentConfig):
    os.makedirs(config.out, exist_ok=True)
    header = config.header()
    with open(os.path.join(config.out, "moments.csv"), "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("q,moment,jackknife_se\n")
        for q, (m, se) in zip(report.qs, report.moments):
            fh.write(f"{q!r},{m!r},{se!r}\n")
    with open(os.path.join(config.out, "summary.csv"), "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("sample,sup_norm,N_greedy,P1,P2,iters\n")
        for r in report.results:
            fh.write(f"{r.index},{r.sup_norm!r},{r.N_greedy},{r.P1!r},{r.P2!r},{r.iters}\n")
    report.tail.write(config.out, "solution_", header)


# svg ------------------------------------------------------------------------------

def write_tail_svg(report: TailReport, path, width: int = 480, height: int = 360):
    """log(-log p) against log n with the fitted line."""
    keep = (report.p_hat > 0) & (report.p_hat < 1) & (report.thresholds > 0)
    x = np.log(report.thresholds[keep])
    y = np.log(-np.log(report.p_hat[keep]))
    pad = 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if x.size >= 2 and np.ptp(x) > 0:
        lo_y, hi_y = float(y.min()), float(y.max())
        if hi_y == lo_y:
            hi_y = lo_y + 1.0

        def sx(v):
            return pad + (v - x.min()) / np.ptp(x) * (width - 2 * pad)

        def sy(v):
            return height - pad - (v - lo_y) / (hi_y - lo_y) * (height - 2 * pad)

        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="black"/>')
        if not report.degenerate:
            x0, x1 = float(x.min()), float(x.max())
            y0 = report.intercept + report.slope * x0
            y1 = report.intercept + report.slope * x1
            parts.append(f'<line x1="{sx(x0):.2f}" y1="{sy(y0):.2f}" x2="{sx(x1):.2f}" '
                         f'y2="{sy(y1):.2f}" stroke="red"/>')
    parts.append(f'<text x="{pad}" y="20" font-size="12">slope {report.slope:.3f}, '
                 f'target {report.target:.3f}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
