"""Translation of a rough path by a Cameron-Martin direction, through level 3.

Trees are written [a[b]] for int b_{s,u} (x) d a_u (the root is the last
integrator) and [a[b[c]]] for int [b[c]]_{s,u} (x) d a_u. Pure-X trees are read
off the driving path, pure-h trees off the lift of h, and mixed trees are
Riemann-Stieltjes sums (level 2) or dyadic sewing sums (level 3) on the grid.
Inside one grid cell every path is read as a straight segment.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .gaussian_paths import CMElement, cm_norm, lift_values
from .sewing import SewingDivergence, young_sewing
from .tensor_algebra import RoughPathGrid
from .variation_controls import control_table, level_norms, rough_path_controls

LEVEL2_TERMS = ("[X[X]]", "[h[X]]", "[X[h]]", "[h[h]]")
LEVEL3_TERMS = ("[X[X[X]]]", "[X[X[h]]]", "[X[h[X]]]", "[h[X[X]]]",
                "[X[h[h]]]", "[h[X[h]]]", "[h[h[X]]]", "[h[h[h]]]")


class TranslationError(RuntimeError):
    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


def _letters(name: str) -> list:
    """Integration order of a ladder tree: innermost first, root last."""
    return [c for c in name if c in "Xh"][::-1]


def _outer(*vs):
    out = vs[0]
    for v in vs[1:]:
        prod = out[..., :, None] * v[..., None, :]
        out = prod.reshape(prod.shape[:-2] + (-1,))
    return out


@dataclass
class TranslatedPath:
    X: RoughPathGrid
    h_values: np.ndarray  # (m+1, d)
    path: RoughPathGrid
    _mixed2: dict = field(default_factory=dict, repr=False)
    rs_defect: float = 0.0  # change of the level-2 sums under one halving of the grid

    @property
    def times(self):
        return self.X.times

    @property
    def N(self) -> int:
        return self.path.N

    def _level1(self, letter):
        if letter == "X":
            return self.X.all_pairs()[1]
        return self.h_values[None, :, :] - self.h_values[:, None, :]

    def _level2(self, name):
        if name == "[X[X]]":
            return self.X.all_pairs()[2]
        if name == "[h[h]]":
            return _h_lift(self).all_pairs()[2]
        return self._mixed2[name]

    def _increments(self, letter):
        if letter == "X":
            return self.X.cells[1]
        return np.diff(self.h_values, axis=0)

    def tree_terms(self, s: int, t: int, tol: float = 1e-12) -> dict:
        """Each tree of levels 2 (and 3 when N = 3) over [t_s, t_t]."""
        out = {}
        for name in LEVEL2_TERMS:
            out[name] = self._level2(name)[s, t].copy()
        if self.N < 3:
            return out
        for name in LEVEL3_TERMS:
            if name == "[X[X[X]]]":
                out[name] = self.X.all_pairs()[3][s, t].copy()
            elif name == "[h[h[h]]]":
                out[name] = _h_lift(self).all_pairs()[3][s, t].copy()
            else:
                out[name] = self._sew3(name, s, t, tol)
        return out

    def _sew3(self, name, s, t, tol):
        c, b, a = _letters(name)
        inner = self._level2(f"[{b}[{c}]]")
        outer = self._level2(f"[{a}[{b}]]")
        lev_c = self._level1(c)
        lev_a = self._level1(a)
        lev_b = self._level1(b)
        d = self.X.d
        if s == t:
            return np.zeros(d**3)

        def germ(u, v):
            local = _outer(lev_c[u, v], lev_b[u, v], lev_a[u, v]) / 6.0
            return _outer(inner[s, u], lev_a[u, v]) + _outer(lev_c[s, u], outer[u, v]) + local

        try:
            res = young_sewing(germ, s, t, tol=tol, grid=self.times)
        except SewingDivergence as exc:
            raise TranslationError(f"sewing of {name} on [{s}, {t}] did not converge",
                                   exc.history) from exc
        return res.value

    def tree_table(self, pairs) -> list:
        rows = []
        for s, t in pairs:
            for name, val in self.tree_terms(s, t).items():
                rows.append((name, s, t, float(np.linalg.norm(val))))
        return rows

    def to_csv(self, path, pairs, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["term", "s", "t", "frobenius_norm"])
            for name, s, t, v in self.tree_table(pairs):
                w.writerow([name, repr(float(self.times[s])), repr(float(self.times[t])), repr(v)])


def _h_lift(tp: TranslatedPath) -> RoughPathGrid:
    if "_hlift" not in tp._mixed2:
        tp._mixed2["_hlift"] = lift_values(tp.times, tp.h_values, tp.N)
    return tp._mixed2["_hlift"]


def _mixed_level2(inc_b, inc_a, b_values_from_zero):
    """All-pairs table of int b_{s,u} (x) d a_u by the trapezoid sum.

    Exact for piecewise-linear paths; uses the additivity
    [a[b]]_{i,k} = C_k - C_i - b_{0,i} (x) a_{i,k} with C_k the sum from 0.
    """
    terms = _outer(b_values_from_zero[:-1], inc_a) + 0.5 * _outer(inc_b, inc_a)
    C = np.vstack([np.zeros((1, terms.shape[1])), np.cumsum(terms, axis=0)])
    a_vals = np.vstack([np.zeros((1, inc_a.shape[1])), np.cumsum(inc_a, axis=0)])
    a_pairs = a_vals[None, :, :] - a_vals[:, None, :]
    table = C[None, :, :] - C[:, None, :] - _outer(b_values_from_zero[:, None, :], a_pairs)
    n = table.shape[0]
    table[np.tril_indices(n, -1)] = 0.0
    return table


def _halving_defect(inc_b, inc_a):
    """Change of the level-2 sum over the whole grid when every other point is dropped."""
    b = np.vstack([np.zeros((1, inc_b.shape[1])), np.cumsum(inc_b, axis=0)])
    a = np.vstack([np.zeros((1, inc_a.shape[1])), np.cumsum(inc_a, axis=0)])
    def total(idx):
        db, da = np.diff(b[idx], axis=0), np.diff(a[idx], axis=0)
        return np.sum(_outer(b[idx][:-1], da) + 0.5 * _outer(db, da), axis=0)
    n = b.shape[0]
    coarse = np.unique(np.r_[np.arange(0, n, 2), n - 1])
    return float(np.max(np.abs(total(np.arange(n)) - total(coarse))))


def translate(X: RoughPathGrid, h, N: int | None = None) -> TranslatedPath:
    """T_h(X) through level N (2 or 3) on the grid of X.

    ``h`` is a CMElement or an array of its values on the grid (h(0) = 0 is
    not required; only increments enter).
    """
    N = X.N if N is None else N
    if N not in (1, 2, 3) or N > X.N:
        raise ValueError(f"translation is defined through level 3 and at most X's level; got N={N}")
    times = X.times
    hv = h(times) if isinstance(h, CMElement) else np.asarray(h, dtype=float)
    if hv.ndim == 1:
        hv = hv[:, None]
    if hv.shape != (X.m + 1, X.d):
        raise ValueError(f"h values have shape {hv.shape}, expected {(X.m + 1, X.d)}")
    dX = X.cells[1]
    dh = np.diff(hv, axis=0)
    Hlift = lift_values(times, hv, N)
    cells = [X.cells[0].copy(), dX + dh]
    tp = TranslatedPath(X, hv, None)
    tp._mixed2["_hlift"] = Hlift
    if N >= 2:
        x_vals = np.vstack([np.zeros((1, X.d)), np.cumsum(dX, axis=0)])
        h_vals = hv - hv[0]
        tp._mixed2["[h[X]]"] = _mixed_level2(dX, dh, x_vals)
        tp._mixed2["[X[h]]"] = _mixed_level2(dh, dX, h_vals)
        tp.rs_defect = max(_halving_defect(dX, dh), _halving_defect(dh, dX))
        cells.append(X.cells[2] + 0.5 * _outer(dX, dh) + 0.5 * _outer(dh, dX) + Hlift.cells[2])
    if N >= 3:
        inc = {"X": dX, "h": dh}
        lev3 = X.cells[3] + Hlift.cells[3]
        for name in LEVEL3_TERMS[1:-1]:
            c, b, a = _letters(name)
            lev3 = lev3 + _outer(inc[c], inc[b], inc[a]) / 6.0
        cells.append(lev3)
    tp.path = RoughPathGrid(times, cells, X.d)
    return tp


def path_from_trees(tp: TranslatedPath, s: int, t: int) -> list:
    """Levels 1..N of T_h(X) over [t_s, t_t] assembled from the tree terms."""
    terms = tp.tree_terms(s, t)
    out = [tp.X.all_pairs()[1][s, t] + tp.h_values[t] - tp.h_values[s]]
    out.append(sum(terms[n] for n in LEVEL2_TERMS))
    if tp.N >= 3:
        out.append(sum(terms[n] for n in LEVEL3_TERMS))
    return out


# control checks ---------------------------------------------------------------

@dataclass
class ControlCheck:
    lhs: float
    rhs: float
    per_level: list  # (j, lhs_j, rhs_j)

    @property
    def constant(self) -> float:
        if self.lhs == 0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else np.inf


def translated_control_check(X: RoughPathGrid, h, gamma: float, p: float, gamma_h: float,
                             interval=None) -> ControlCheck:
    """W_{T_h X}^{gamma-p} against W_X^{gamma-p} + W_h^{gamma_h-p} over one interval.

    Per level j the comparison is W_{Pi^j T_h X, gamma, p} against
    W_{Pi^j X, gamma, p} + W_{Pi^j h, gamma_h, p}^{(gamma_h-p)/(gamma-p)}.
    """
    tp = translate(X, h)
    a, b = (0, X.m) if interval is None else interval
    Y = tp.path.restrict(a, b)
    Xr = X.restrict(a, b)
    Hr = lift_values(Xr.times, tp.h_values[a:b + 1], X.N)
    cy = rough_path_controls(Y, gamma, p)
    cx = rough_path_controls(Xr, gamma, p)
    ch = rough_path_controls(Hr, gamma_h, p)
    last = Y.m
    gp, hp = gamma - p, gamma_h - p
    per = []
    for j in range(1, X.N + 1):
        per.append((j, float(cy.levels[j].W[0, last]),
                    float(cx.levels[j].W[0, last] + ch.levels[j].W[0, last] ** (hp / gp))))
    lhs = float(cy.total.W[0, last] ** gp)
    rhs = float(cx.total.W[0, last] ** gp + ch.total.W[0, last] ** hp)
    return ControlCheck(lhs, rhs, per)


def refinement_constants(times, values, h: CMElement, gamma: float, p: float, gamma_h: float,
                         N: int, levels: int = 2) -> list:
    """Empirical constant on the given grid and on ``levels - 1`` successive halvings."""
    out = []
    times = np.asarray(times)
    values = np.asarray(values)
    for r in range(levels):
        step = 2**r
        t = times[::step]
        X = lift_values(t, values[::step], N)
        out.append(translated_control_check(X, h(t), gamma, p, gamma_h).constant)
    return out[::-1]


def mixed_control(tp: TranslatedPath, name: str, p: float, gamma: float, gamma_h: float) -> float:
    """W over the whole grid of a level-2 mixed tree at exponent pair ((gamma+gamma_h)/2, p)."""
    g = 0.5 * (gamma + gamma_h)
    germ = np.linalg.norm(tp._level2(name), axis=-1)
    return float(control_table(germ, 1.0 / (2 * (g - p)), p / (g - p), tp.times).W[0, -1])


@dataclass
class HNormCheck:
    lhs: float
    rhs: float

    @property
    def ratio(self) -> float:
        if self.lhs == 0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else np.inf

    @property
    def holds(self) -> bool:
        return np.isfinite(self.ratio)


def hnorm_control_check(h: CMElement, gamma_h: float, p: float, times) -> HNormCheck:
    """W_{h, gamma_h, p}(0, T) from the lift of h against |h|_H^{1/(gamma_h - p)}."""
    lift = lift_values(times, h(times), 1)
    germ = level_norms(lift)[1]
    hp = gamma_h - p
    W = control_table(germ, 1.0 / hp, p / hp, lift.times).W[0, -1]
    return HNormCheck(float(W), cm_norm(h) ** (1.0 / hp))
