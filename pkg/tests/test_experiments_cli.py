import os

import numpy as np
import pytest

from roughkit.cli import main
from roughkit.experiments import (CONFIG_KEYS, ConfigError, ExperimentConfig, MomentReport, empirical_tail,
                                  greedy_count, initial_directions, jackknife_moment, load_config,
                                  parse_config_text, run_mc_greedy_tail, run_mc_solution_moments,
                                  stretched_fit, tail_report)
from roughkit.gaussian_paths import PathSamples
from roughkit.spectral_scale import EvolutionFamily, default_eigenvalues, scale_norm

SMALL = ["--grid", "16", "--modes", "8"]


def read_rows(path):
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh if not line.startswith("#")]


def test_config_parsing():
    text = "hurst = 0.45  # comment\n\ngamma=0.3\nN = 3\nout = results\n"
    assert parse_config_text(text) == {"hurst": 0.45, "gamma": 0.3, "N": 3, "out": "results"}
    with pytest.raises(ConfigError, match="line 1: unknown key 'bogus'"):
        parse_config_text("bogus = 1")
    with pytest.raises(ConfigError, match="grid"):
        parse_config_text("grid = 2.5")
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\njust words")
    assert all(isinstance(meaning, str) and meaning for _, meaning in CONFIG_KEYS.values())


def test_config_defaults_and_overrides(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.N == 2 and cfg.gamma_h == pytest.approx(0.89)
    assert cfg.target_slope == pytest.approx(1.22)
    f = tmp_path / "c.txt"
    f.write_text("seed = 4\nchi = 0.5\n")
    cfg = load_config(str(f), chi=0.3, samples=None)
    assert (cfg.seed, cfg.chi) == (4, 0.3)
    assert cfg.digest() == load_config(str(f), chi=0.3).digest()
    assert cfg.digest() != load_config(str(f)).digest()


def test_config_validation_names_the_field():
    with pytest.raises(ConfigError, match="^gamma: need gamma < hurst"):
        ExperimentConfig(hurst=0.3, gamma=0.35).validate()
    with pytest.raises(ConfigError, match="^gamma/p/sigma/N"):
        ExperimentConfig(p=0.2).validate()
    with pytest.raises(ConfigError, match="^gamma_h"):
        ExperimentConfig(gamma_h=0.7).validate()
    with pytest.raises(ConfigError, match="^chi"):
        ExperimentConfig(chi=0).validate()
    with pytest.raises(ConfigError, match="2\\(gamma_h - p\\) > 1"):
        ExperimentConfig(hurst=0.3, gamma=0.299, p=0.295, sigma=0.0).validate(moments=True)
    with pytest.raises(ConfigError, match="^q"):
        ExperimentConfig(q="1,12").validate(moments=True)


def test_initial_directions_on_sphere():
    lam = default_eigenvalues(8)
    dirs = initial_directions(lam, 0.25, 2.0)
    assert np.allclose(scale_norm(dirs, lam, 0.25), 2.0, rtol=1e-14)


def test_jackknife_matches_standard_error():
    x = np.random.default_rng(0).exponential(size=200)
    m, se = jackknife_moment(x, 1.0)
    assert m == pytest.approx(x.mean(), rel=1e-14)
    assert se == pytest.approx(x.std(ddof=1) / np.sqrt(x.size), rel=1e-10)
    m2, _ = jackknife_moment(x, 2.0)
    assert m2 == pytest.approx(np.mean(x**2), rel=1e-14)


def test_stability_rule():
    rep = MomentReport([1.0, 2.0, 16.0], [(1.0, 0.1), (2.0, 0.1), (9.0, 1.0)],
                       [(1.2, 0.1), (2.5, 0.1), (1.0, 0.1)], None, [], 0)
    rows = rep.stable()
    assert [r[0] for r in rows] == [1.0, 2.0]
    assert rows[0][3] and not rows[1][3]


def test_empirical_tail_and_fit():
    rng = np.random.default_rng(1)
    # P(V > n) = exp(-n^1.5) exactly for V = E^(1/1.5)
    v = rng.exponential(size=20000) ** (1 / 1.5)
    thr = np.linspace(0.2, 1.6, 15)
    p, se, counts = empirical_tail(v, thr)
    assert np.all(np.diff(p) <= 0)
    slope, _, used = stretched_fit(thr, p, counts)
    assert used >= 3 and slope == pytest.approx(1.5, abs=0.1)
    p2, se2, _ = empirical_tail(np.concatenate([v, v]), thr)
    assert np.allclose(p2, p) and np.allclose(se2 * np.sqrt(2), se)


def test_fit_uses_only_bins_with_twenty_exceedances():
    v = np.arange(1.0, 101.0)
    rep = tail_report(v, np.array([10.0, 50.0, 70.0, 85.0, 95.0]), 1.0, np.random.default_rng(0))
    assert rep.bins_used == 3  # exceedances 90, 50, 30 kept; 15 and 5 dropped


def test_greedy_tail_degenerate_for_huge_chi(tmp_path):
    cfg = ExperimentConfig(grid=16, samples=500, chi=1e6, out=str(tmp_path))
    with pytest.warns(RuntimeWarning, match="degenerate"):
        rep = run_mc_greedy_tail(cfg)
    assert rep.degenerate and np.all(rep.extra["N_greedy"] == 1)
    for name in ("greedy_tail.csv", "greedy_fit.csv", "greedy_tail.svg"):
        assert os.path.exists(tmp_path / name)
    assert read_rows(tmp_path / "greedy_tail.csv")[0] == "n,p_hat,se"
    with pytest.raises(ConfigError, match="500"):
        run_mc_greedy_tail(ExperimentConfig(grid=16, samples=100))


@pytest.mark.filterwarnings("ignore:tail fit degenerate")
def test_greedy_tail_is_deterministic_and_worker_independent(tmp_path):
    a = ExperimentConfig(grid=16, samples=500, chi=0.3, out=str(tmp_path / "a"))
    b = ExperimentConfig(grid=16, samples=500, chi=0.3, out=str(tmp_path / "b"), workers=2)
    ra, rb = run_mc_greedy_tail(a), run_mc_greedy_tail(b)
    assert np.array_equal(ra.extra["N_greedy"], rb.extra["N_greedy"])
    assert (tmp_path / "a" / "greedy_tail.csv").read_bytes().split(b"\n")[2:] == \
        (tmp_path / "b" / "greedy_tail.csv").read_bytes().split(b"\n")[2:]
    assert greedy_count(a, 7) == greedy_count(a, 7)


def test_moments_without_noise_are_deterministic(tmp_path):
    cfg = ExperimentConfig(grid=16, modes=8, samples=8, amplitude=0.0, out=str(tmp_path), rho=1.5)
    with pytest.warns(RuntimeWarning):
        rep = run_mc_solution_moments(cfg)
    for q, (m, se) in zip(rep.qs, rep.moments):
        assert m == pytest.approx(1.5**q, rel=1e-12) and se < 1e-12
    rows = read_rows(tmp_path / "moments.csv")
    assert rows[0] == "q,moment,jackknife_se" and len(rows) == 5
    assert read_rows(tmp_path / "summary.csv")[0] == "sample,sup_norm,N_greedy,P1,P2,iters"


def test_cli_stages_and_determinism(tmp_path):
    for stage, files in [("lift", ["path.csv", "signature.csv"]),
                         ("control", ["control.csv", "greedy.csv"]),
                         ("integrate", ["dyadic.csv", "integral.csv"]),
                         ("solve", ["solution.csv", "summary.csv"]),
                         ("translate", ["translated_path.csv", "translated_signature.csv", "trees.csv"])]:
        out = tmp_path / stage
        runs = []
        for _ in range(2):
            assert main([stage, "--out", str(out), "--seed", "3"] + SMALL) == 0
            runs.append({name: (out / name).read_bytes() for name in files})
        for name in files:
            assert runs[0][name].startswith(b"# config ")
            assert b"\r" not in runs[0][name]
            assert runs[0][name] == runs[1][name]


def test_cli_translate_with_zero_h(tmp_path):
    assert main(["translate", "--out", str(tmp_path), "--h-scale", "0"] + SMALL) == 0
    assert main(["lift", "--out", str(tmp_path)] + SMALL) == 0
    assert read_rows(tmp_path / "translated_path.csv") == read_rows(tmp_path / "path.csv")
    assert read_rows(tmp_path / "translated_signature.csv") == read_rows(tmp_path / "signature.csv")


def test_cli_control_on_stored_linear_path(tmp_path):
    t = np.linspace(0, 1, 6)
    PathSamples(t, t[:, None].copy(), 0.45).to_csv(tmp_path / "line.csv")
    args = ["control", "--out", str(tmp_path), "--path", str(tmp_path / "line.csv"),
            "--hurst", "0.45", "--gamma", "0.4", "--p", "0.3", "--sigma", "0"]
    assert main(args) == 0
    rows = read_rows(tmp_path / "control.csv")
    last = [r for r in rows[1:] if r.startswith("0,5,")][0]
    assert float(last.split(",")[-1]) == pytest.approx(1.0 + 0.5**5, rel=1e-10)


def test_cli_solve_without_noise_is_heat_flow(tmp_path):
    assert main(["solve", "--out", str(tmp_path), "--amplitude", "0"] + SMALL) == 0
    rows = [r.split(",") for r in read_rows(tmp_path / "solution.csv")[1:]]
    tau = np.array([float(r[0]) for r in rows]).reshape(17, 8)[:, 0]
    coef = np.array([float(r[2]) for r in rows]).reshape(17, 8)
    lam = default_eigenvalues(8)
    y = initial_directions(lam, 0.0, 1.0)[0]
    assert np.max(np.abs(coef - EvolutionFamily(lam).factor(tau, 0.0) * y)) < 1e-9


def test_cli_reports_config_errors(tmp_path, capsys):
    assert main(["lift", "--out", str(tmp_path), "--gamma", "0.45"]) == 2
    assert "gamma" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("colour = red\n")
    assert main(["lift", "--config", str(bad)]) == 2
    assert "unknown key 'colour'" in capsys.readouterr().err
