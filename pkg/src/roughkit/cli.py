"""roughkit command line: single pipeline stages and Monte Carlo experiments."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .experiments import (ConfigError, ExperimentAborted, build_problem, initial_directions,
                          load_config, run_mc_greedy_tail, run_mc_solution_moments)
from .gaussian_paths import CMElement, FBMSampler, PathSamples, lift_path, sample_rng
from .controlled_paths import compose_linear_G, function_of_path
from .sewing import SewingDivergence, sewing_integral
from .solver import gronwall_factors, solve_global
from .spectral_scale import SpectralElement
from .translation import translate
from .variation_controls import greedy_points, rough_path_controls

COMMANDS = ("lift", "control", "integrate", "solve", "translate", "tail", "moments")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--samples", type=int)
        p.add_argument("--hurst", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--p", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--chi", type=float)
        p.add_argument("--modes", type=int)
        p.add_argument("--grid", type=int)
        p.add_argument("--path", help="path CSV (t,x1..xd) instead of a fresh sample")
        p.add_argument("--amplitude", type=float)
        p.add_argument("--h-scale", dest="h_scale", type=float)
        p.add_argument("--workers", type=int)
    return parser


def _path(config) -> PathSamples:
    if config.path:
        return PathSamples.from_csv(config.path)
    sampler = FBMSampler(config.hurst, config.times)
    return PathSamples(sampler.times, sampler.sample(config.d, sample_rng(config.seed)), config.hurst,
                       config.seed)


def _write_signature(path, X, header):
    with open(path, "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("level,index,value\n")
        total = X.all_pairs()
        for k in range(1, X.N + 1):
            for i, v in enumerate(total[k][0, X.m]):
                fh.write(f"{k},{i},{float(v)!r}\n")


def cmd_lift(config):
    path = _path(config)
    header = config.header()
    path.to_csv(os.path.join(config.out, "path.csv"), header)
    _write_signature(os.path.join(config.out, "signature.csv"), lift_path(path, config.N), header)


def cmd_control(config):
    path = _path(config)
    X = lift_path(path, config.N)
    controls = rough_path_controls(X, config.gamma, config.p)
    header = config.header()
    controls.total.to_csv(os.path.join(config.out, "control.csv"), header)
    seq = greedy_points(controls.total.W, config.gamma - config.p, config.chi, times=X.times,
                        on_block="cell")
    seq.to_csv(os.path.join(config.out, "greedy.csv"), header + [f"forced {len(seq.forced)}"])


def cmd_integrate(config):
    path = _path(config)
    X = lift_path(path, config.N)
    solve_cfg = build_problem(config)
    # a genuinely controlled integrand: G applied to a smooth function of the path
    yt = function_of_path(X, solve_cfg.U.lambdas, solve_cfg.params.scale)
    integrand = compose_linear_G(solve_cfg.G, yt)
    rec = sewing_integral(integrand, solve_cfg.U, params=solve_cfg.params)
    header = config.header()
    rec.to_csv(os.path.join(config.out, "dyadic.csv"), header)
    SpectralElement(rec.value, solve_cfg.U.lambdas).to_csv(os.path.join(config.out, "integral.csv"), header)


def cmd_solve(config):
    path = _path(config)
    X = lift_path(path, config.N)
    solve_cfg = build_problem(config)
    y = initial_directions(solve_cfg.U.lambdas, config.alpha, config.rho)[0]
    sol = solve_global(y, X, solve_cfg)
    controls = rough_path_controls(X, config.gamma, config.p)
    seq = greedy_points(controls.total.W, config.gamma - config.p, config.chi, on_block="cell")
    bound = gronwall_factors(seq.count, config.L)
    header = config.header()
    sol.to_csv(os.path.join(config.out, "solution.csv"), header)
    with open(os.path.join(config.out, "summary.csv"), "w") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write("sample,sup_norm,N_greedy,P1,P2,iters\n")
        fh.write(f"0,{sol.sup_norm(config.alpha)!r},{seq.count},{bound.P1!r},{bound.P2!r},"
                 f"{int(sum(sol.iterations))}\n")


def cmd_translate(config):
    path = _path(config)
    X = lift_path(path, config.N)
    h = CMElement([config.T / 2], np.full((1, config.d), config.h_scale), config.hurst)
    tp = translate(X, h)
    header = config.header()
    level1 = path.values + (tp.h_values - tp.h_values[0])
    PathSamples(X.times, level1, config.hurst, config.seed).to_csv(
        os.path.join(config.out, "translated_path.csv"), header)
    _write_signature(os.path.join(config.out, "translated_signature.csv"), tp.path, header)
    tp.to_csv(os.path.join(config.out, "trees.csv"), [(0, X.m), (0, X.m // 2), (X.m // 2, X.m)], header)


def cmd_tail(config):
    report = run_mc_greedy_tail(config)
    print(f"slope {report.slope:.4f} band [{report.ci[0]:.4f}, {report.ci[1]:.4f}] "
          f"target {report.target:.4f} bins {report.bins_used} "
          f"forced-step fraction {report.extra['forced_fraction']:.3f}")


def cmd_moments(config):
    report = run_mc_solution_moments(config)
    for q, (m, se) in zip(report.qs, report.moments):
        print(f"q={q:g} moment {m:.6g} jackknife se {se:.3g}")
    print(f"tail slope {report.tail.slope:.4f} target {report.tail.target:.4f} failures {report.failures}")


HANDLERS = {"lift": cmd_lift, "control": cmd_control, "integrate": cmd_integrate, "solve": cmd_solve,
            "translate": cmd_translate, "tail": cmd_tail, "moments": cmd_moments}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        config = load_config(args.config, **overrides)
        config.validate(moments=args.command == "moments")
        os.makedirs(config.out, exist_ok=True)
        HANDLERS[args.command](config)
    except (ConfigError, ExperimentAborted, SewingDivergence) as exc:
        print(f"roughkit {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
