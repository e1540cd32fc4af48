import numpy as np
import pytest

from roughkit.gaussian_paths import CMElement, cm_exponent, lift_path, lift_values, sample_fbm
from roughkit.tensor_algebra import chen_residual
from roughkit.translation import (LEVEL2_TERMS, LEVEL3_TERMS, hnorm_control_check, mixed_control,
                                  path_from_trees, refinement_constants, translate,
                                  translated_control_check)

T64 = np.linspace(0, 1, 65)


def pair(seed, m=64, d=2, N=3, H=0.4):
    t = np.linspace(0, 1, m + 1)
    x = sample_fbm(H, t, d, seed=seed).values
    rng = np.random.default_rng(seed)
    h = CMElement(rng.uniform(0.1, 1, 2), rng.normal(size=(2, d)), H)
    return t, x, h


def max_level_diff(A, B):
    pa, pb = A.all_pairs(), B.all_pairs()
    return max(float(np.max(np.abs(pa[k] - pb[k]))) for k in range(1, A.N + 1))


def test_identity_cell_route():
    for seed in range(20):
        t, x, h = pair(seed)
        tp = translate(lift_values(t, x, 3), h)
        assert max_level_diff(tp.path, lift_values(t, x + h(t), 3)) < 1e-10


def test_identity_tree_route():
    t, x, h = pair(3)
    X = lift_values(t, x, 3)
    tp = translate(X, h)
    ref = lift_values(t, x + h(t), 3)
    for s, u in [(0, 64), (5, 40), (17, 18), (30, 33)]:
        levels = path_from_trees(tp, s, u)
        q = ref.query(s, u)
        for k in range(1, 4):
            assert np.max(np.abs(levels[k - 1] - q[k])) < 1e-10


def test_tree_names_and_degenerate_levels():
    t, x, h = pair(4)
    tp3 = translate(lift_values(t, x, 3), h)
    assert list(tp3.tree_terms(0, 64)) == list(LEVEL2_TERMS + LEVEL3_TERMS)
    tp2 = translate(lift_values(t, x, 2), h)
    assert list(tp2.tree_terms(0, 64)) == list(LEVEL2_TERMS)


def test_zero_h_is_bit_exact():
    t, x, _ = pair(5)
    X = lift_values(t, x, 3)
    tp = translate(X, np.zeros_like(x))
    for a, b in zip(tp.path.cells, X.cells):
        assert np.array_equal(a, b)


def test_zero_path_gives_lift_of_h():
    t, _, h = pair(6)
    X = lift_values(t, np.zeros((65, 2)), 3)
    assert max_level_diff(translate(X, h).path, lift_values(t, h(t), 3)) < 1e-10


def test_chen_and_group_action():
    t, x, h1 = pair(7)
    h2 = CMElement([0.3, 0.8], [[0.4, -1.0], [0.2, 0.5]], 0.4)
    X = lift_values(t, x, 3)
    once = translate(X, h1)
    rng = np.random.default_rng(0)
    triples = [tuple(sorted(rng.integers(0, 65, 3))) for _ in range(100)]
    assert chen_residual(once.path, triples) < 1e-10
    twice = translate(once.path, h2)
    assert max_level_diff(twice.path, translate(X, h1 + h2).path) < 1e-9


def test_level_mismatch_errors():
    t, x, h = pair(8)
    with pytest.raises(ValueError):
        translate(lift_values(t, x, 2), h, N=3)
    with pytest.raises(ValueError):
        translate(lift_values(t, x, 3), np.zeros((10, 2)))


def test_control_check_degenerate():
    t, x, h = pair(9)
    X = lift_values(t, x, 2)
    chk = translated_control_check(X, np.zeros_like(x), 0.35, 0.28, 0.89)
    assert chk.constant == pytest.approx(1.0, rel=1e-12)
    Z = lift_values(t, np.zeros_like(x), 2)
    chk = translated_control_check(Z, h, 0.35, 0.28, 0.89)
    assert np.isfinite(chk.constant) and chk.lhs > 0


def test_control_constant_over_samples():
    gh = cm_exponent(0.4)
    consts = []
    for seed in range(20):
        t, x, _ = pair(100 + seed, d=2)
        h = CMElement([0.5], [[1.0, 1.0]], 0.4)
        consts.append(translated_control_check(lift_values(t, x, 2), h, 0.35, 0.28, gh).constant)
    assert np.all(np.isfinite(consts)) and max(consts) < 10


def test_control_constant_refinement():
    t, x, _ = pair(11, m=256)
    h = CMElement([0.5], [[1.0, 1.0]], 0.4)
    c = refinement_constants(t, x, h, 0.35, 0.28, cm_exponent(0.4), 2, levels=2)
    assert abs(c[1] - c[0]) / c[0] < 0.2


def test_mixed_control_finite_and_stable():
    t, x, h = pair(12, m=256)
    vals = []
    for step in (2, 1):
        tt = t[::step]
        tp = translate(lift_values(tt, x[::step], 2), h)
        vals.append(mixed_control(tp, "[h[X]]", 0.28, 0.35, cm_exponent(0.4)))
    assert np.all(np.isfinite(vals)) and abs(vals[1] - vals[0]) / vals[0] < 0.25


def test_hnorm_check():
    gh, p = cm_exponent(0.4), 0.25
    zero = CMElement([0.5], [[0.0]], 0.4)
    chk = hnorm_control_check(zero, gh, p, T64)
    assert chk.lhs == 0 and chk.rhs == 0 and chk.ratio == 0
    h = CMElement([0.5], [[1.0]], 0.4)
    one, two = hnorm_control_check(h, gh, p, T64), hnorm_control_check(h.scaled(2.0), gh, p, T64)
    factor = 2 ** (1 / (gh - p))
    assert two.rhs == pytest.approx(factor * one.rhs, rel=1e-12)
    assert two.lhs == pytest.approx(factor * one.lhs, rel=1e-9)
    assert one.holds and one.ratio < 10


def test_rs_defect_small_and_csv(tmp_path):
    t, x, h = pair(13)
    tp = translate(lift_values(t, x, 3), h)
    assert tp.rs_defect < 1.0
    tp.to_csv(tmp_path / "trees.csv", [(0, 64), (0, 32)])
    lines = (tmp_path / "trees.csv").read_text().splitlines()
    assert lines[0] == "term,s,t,frobenius_norm" and len(lines) == 1 + 2 * 12
    assert lines[1].startswith("[X[X]],0.0,1.0,")
