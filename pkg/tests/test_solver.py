import numpy as np
import pytest

from roughkit.controlled_paths import GOperator
from roughkit.gaussian_paths import lift_path, sample_fbm
from roughkit.sewing import Drift, validate_params
from roughkit.solver import (PicardDivergence, SolveConfig, a_priori_bound, consistency_residual,
                             gronwall_factors, initial_guess, one_step_L, picard_step, solve_global,
                             solve_interval)
from roughkit.spectral_scale import EvolutionFamily, default_eigenvalues, scale_norm
from roughkit.variation_controls import rough_path_controls

PARAMS = validate_params(0.3, 0.25, 0.05)
K = 8
LAM = default_eigenvalues(K)
Y0 = 1.0 / np.arange(1, K + 1) ** 2


def config(amplitude=0.5, F=None, constant_a=False, **kw):
    U = EvolutionFamily.constant(LAM) if constant_a else EvolutionFamily(LAM)
    G = GOperator(2, PARAMS.sigma, LAM, amplitude=amplitude)
    return SolveConfig(PARAMS, U, Drift(K) if F is None else F, G, chi=0.2, **kw)


def driver(seed, m=32):
    return lift_path(sample_fbm(0.4, np.linspace(0, 1, m + 1), 2, seed=seed), 3)


def linear_recursion(cfg, X, y, c):
    """The cell recursion of the exponential integrator for F(z) = c z, solved exactly."""
    t = X.times
    left, right = cfg.U.cell_weights(t[:-1], t[1:])
    step = cfg.U.factor(t[1:], t[:-1])
    out = [np.asarray(y, dtype=float)]
    for k in range(X.m):
        out.append((step[k] * out[-1] + c * left[k] * out[-1]) / (1 - c * right[k]))
    return np.array(out)


def test_heat_flow_without_noise():
    X = driver(0)
    cfg = config(amplitude=0.0)
    sol = solve_global(Y0, X, cfg)
    exact = cfg.U.factor(X.times, 0.0) * Y0
    assert np.max(scale_norm(sol.values - exact, LAM, 0.0)) < 1e-9


def test_free_term_is_fixed_point_after_one_step():
    X = driver(1, m=8)
    cfg = config(amplitude=0.0)
    res = solve_interval(Y0, X, cfg)
    assert res.iterations <= 2 and res.history[-1] == 0


def test_linear_drift_matches_integrator_and_ode():
    c = -0.7
    X = driver(2, m=64)
    cfg = config(amplitude=0.0, F=Drift(K, linear=c), constant_a=True)
    sol = solve_global(Y0, X, cfg)
    assert np.max(np.abs(sol.values - linear_recursion(cfg, X, Y0, c))) < 1e-7
    ode = Y0 * np.exp(np.outer(X.times, c - LAM))
    assert np.max(np.abs(sol.values - ode)) < 0.05 * (1 / 64) ** 2


def test_zero_datum_stays_zero():
    X = driver(3)
    sol = solve_global(np.zeros(K), X, config(amplitude=1.0))
    assert np.all(sol.values == 0)


def test_consistency_and_flow():
    X = driver(4)
    cfg = config()
    sol = solve_global(Y0, X, cfg)
    assert consistency_residual(sol, cfg.G, PARAMS.alpha, PARAMS.gamma) < 10 * cfg.tol
    for t1 in (5, 16, 27):
        tail = solve_global(sol.values[t1], X, cfg, start_index=t1)
        assert np.max(scale_norm(tail.values - sol.values[t1:], LAM, 0.0)) < 10 * cfg.tol


def test_linearity_in_the_datum():
    X = driver(5)
    cfg = config(amplitude=0.0, F=Drift(K, linear=-0.3))
    base = solve_global(Y0, X, cfg).values
    assert np.allclose(solve_global(2.5 * Y0, X, cfg).values, 2.5 * base, rtol=1e-12, atol=0)
    noisy = config()
    a = solve_global(Y0, X, noisy).values
    b = solve_global(-0.4 * Y0, X, noisy).values
    assert np.max(np.abs(b + 0.4 * a)) < 10 * noisy.tol


def test_picard_differences_decrease():
    X = driver(6, m=64)
    cfg = config()
    for a, b in [(0, 1), (10, 12), (30, 34), (60, 64)]:
        res = solve_interval(Y0, X.restrict(a, b), cfg)
        h = res.history
        assert all(later < earlier for earlier, later in zip(h[1:], h[2:]))


def test_first_steps_contract():
    X = driver(7, m=64).restrict(0, 2)
    cfg = config()
    p0 = initial_guess(Y0, X, cfg)
    p1 = picard_step(p0, Y0, cfg)
    p2 = picard_step(p1, Y0, cfg)
    from roughkit.controlled_paths import controlled_norm
    assert controlled_norm(p2 - p1).total < controlled_norm(p1 - p0).total


def test_halving_interval_does_not_increase_iterations():
    cfg = config()
    for seed in range(20):
        X = driver(100 + seed, m=64)
        full = solve_interval(Y0, X.restrict(0, 4), cfg).iterations
        half = solve_interval(Y0, X.restrict(0, 2), cfg).iterations
        assert half <= full


def test_small_noise_keeps_norm():
    X = driver(8)
    cfg = config(amplitude=0.02, constant_a=True)
    sol = solve_global(Y0, X, cfg)
    assert scale_norm(sol.values[-1], LAM, 0.0) <= scale_norm(Y0, LAM, 0.0)


def test_gronwall_factors():
    b = gronwall_factors(1, 1.0)
    assert (b.P1, b.P0, b.P2) == pytest.approx((3.0, 1.0, 5.0), rel=1e-15)
    b = gronwall_factors(4, 2.0)
    assert b.P1 == pytest.approx(6.0**4) and b.P0 == pytest.approx((6.0**4 - 1) / 5)
    X = driver(9)
    W = rough_path_controls(X, PARAMS.gamma, PARAMS.p).total
    assert a_priori_bound(W.W, PARAMS.gamma - PARAMS.p, None, 1e6, 1.0).N_greedy == 1


def test_a_priori_domination_over_samples():
    cfg = config()
    ratios = []
    for seed in range(50):
        X = driver(200 + seed, m=16)
        W = rough_path_controls(X, PARAMS.gamma, PARAMS.p).total
        bound = a_priori_bound(W.W, PARAMS.gamma - PARAMS.p, None, cfg.chi, cfg.L)
        sol = solve_global(Y0, X, cfg)
        y_norm = float(scale_norm(Y0, LAM, PARAMS.alpha))
        ratios.append(sol.sup_norm(PARAMS.alpha) / (y_norm * bound.P1 + bound.P2))
    assert np.all(np.isfinite(ratios)) and max(ratios) <= 1.0


def test_one_step_constant():
    X = driver(10)
    cfg = config()
    sol = solve_global(Y0, X, cfg)
    L = one_step_L(sol, X, cfg)
    assert 1.0 <= L < np.inf


def test_config_validation():
    cfg = config(L=0.5)
    with pytest.raises(ValueError, match="at least 1"):
        cfg.validate()
    strict = config(enforce_chi=True)
    assert strict.L2 == pytest.approx((1 / 3) ** (1 / min(1.0, 1 - 3 * 0.3, 1.0)))
    with pytest.raises(ValueError, match="L2"):
        strict.validate()


def test_divergence_reports_location():
    X = driver(11)
    cfg = config(max_iter=1, tol=1e-30)
    with pytest.raises(PicardDivergence) as err:
        solve_global(Y0, X, cfg)
    assert err.value.location == (0, 1) and len(err.value.history) == 1


def test_solution_csv(tmp_path):
    X = driver(12, m=4)
    sol = solve_global(Y0, X, config())
    sol.to_csv(tmp_path / "s.csv", ["x"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[:2] == ["# x", "tau,mode,coef"] and len(lines) == 2 + 5 * K
