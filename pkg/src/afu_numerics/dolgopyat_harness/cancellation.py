"""Cancellation layouts, the damping function ``chi`` and cone iteration.

On every atom ``p`` the two UNI branches ``h1, h2`` of ``F^{n0}`` are used to
lay out short typed intervals.  A type-``h_m`` interval is one on which

    |A1(v) + A2(v)| <= eta A_m(u) + A_other(u),

where ``A_m(w) = lambda^{-n0} e^{s phi_{n0} o h_m} |h_m'| (f_sigma w) o h_m / f_sigma``.
The function ``chi`` equals ``eta`` on the middle third of a type-``h_m``
interval pulled back by ``h_m`` and ``1`` away from typed intervals, so that
``|L~_s^{n0} v| <= L~_sigma^{n0}(chi u)`` pointwise.

Intervals are chosen by the two-case rule: a ball where ``|v o h_m|`` is
small against ``u o h_m`` is typed directly, otherwise a phase search over a
uniform net moves the ball so that the two branch terms point in nearly
opposite directions.  Every accepted interval is certified by evaluating the
typed inequality on a fine grid; when no candidate certifies, the region is
left untyped (``chi = 1`` there) and recorded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..bv_space import ConePair, GridFunction, as_callable, cone_check, grid_jump
from ..interval_map import WorkingSystem, discontinuity_catalog
from ..operator_core import BranchTree, Leaves, NormalizedOperator, SpectralData, follow_word
from .ledger import ETA0, ConstantLedger

#: Candidates of the phase search per ball.
N_CANDIDATES = 256
#: Points on which a typed interval is certified.
N_CERTIFY = 65


def _wrap(a):
    """Angle in ``(-pi, pi]``."""
    return np.angle(np.exp(1j * np.asarray(a)))


def smoothstep(t):
    """``C^1`` ramp: 0 for ``t <= 0``, 1 for ``t >= 1``, slope at most ``3/2``."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def smoothstep_slope(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 6.0 * t * (1.0 - t), 0.0)


def bump(y, intervals: np.ndarray):
    """Sum of plateau bumps: 1 on middle thirds, 0 off the intervals, smoothstep ramps."""
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape)
    for a, c in intervals:
        third = (c - a) / 3.0
        t = (y - a) / third
        out += np.where(t < 1.5, smoothstep(t), smoothstep(3.0 - t)) * ((t > 0) & (t < 3))
    return out


def bump_slope(y, intervals: np.ndarray):
    y = np.asarray(y, dtype=float)
    out = np.zeros(y.shape)
    for a, c in intervals:
        third = (c - a) / 3.0
        t = (y - a) / third
        out += np.where(t < 1.5, smoothstep_slope(t), -smoothstep_slope(3.0 - t)) / third
    return out


# ---------------------------------------------------------------------------
# branch terms
# ---------------------------------------------------------------------------


@dataclass
class BranchTerms:
    """``A_m(u)`` and ``A_m(v)`` for the two UNI branches at points ``y``."""

    y: np.ndarray
    Au: np.ndarray  # shape (2, n)
    Av: np.ndarray  # shape (2, n), complex
    u_h: np.ndarray  # u o h_m
    v_h: np.ndarray  # v o h_m
    psi: np.ndarray  # phi_{n0} o h1 - phi_{n0} o h2
    logw: np.ndarray  # log |h_m'|


def branch_terms(spectral: SpectralData, b: float, digits: tuple, pair: ConePair, y) -> BranchTerms:
    """Evaluate the two branch terms of ``L~_s^{n0}`` along the words ``digits = (h1, h2)``."""
    system = spectral.system
    y = np.atleast_1d(np.asarray(y, dtype=float))
    uf, vf = as_callable(pair.u), as_callable(pair.v)
    n0 = len(digits[0])
    f_y = spectral.f_eval(y)
    Au, Av, uh, vh, phis, logws = [], [], [], [], [], []
    for word in digits:
        fw = follow_word(system.fmap, system.roof, word, y)
        base = np.exp(fw["logw"] + spectral.sigma * fw["phi"] - n0 * math.log(spectral.lam))
        base = base * spectral.f_eval(fw["x"]) / f_y
        u_x = np.real(uf(fw["x"]))
        v_x = vf(fw["x"])
        Au.append(base * u_x)
        Av.append(base * np.exp(1j * b * fw["phi"]) * v_x)
        uh.append(u_x)
        vh.append(v_x)
        phis.append(fw["phi"])
        logws.append(fw["logw"])
    return BranchTerms(y, np.array(Au), np.array(Av), np.array(uh), np.array(vh), phis[0] - phis[1],
                       np.array(logws))


def typed_margin(terms: BranchTerms, m: int, eta: float) -> np.ndarray:
    """``eta A_m(u) + A_other(u) - |A1(v) + A2(v)|`` at the sample points (``m`` is 1 or 2)."""
    lhs = np.abs(terms.Av[0] + terms.Av[1])
    other = 2 - m
    rhs = eta * terms.Au[m - 1] + terms.Au[other]
    return rhs - lhs


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass
class CancellationLayout:
    """Typed intervals on one atom together with the damping level.

    ``intervals[j] = (a_j, c_j)`` has type ``types[j]`` (1 or 2); ``cases[j]``
    records which case of the selection rule produced it and
    ``phase_error[j]`` the angle ``|theta(y1) - pi|`` for phase-searched
    intervals (NaN otherwise).  ``untyped`` lists windows where no candidate
    certified.
    """

    atom: tuple[float, float]
    b: float
    sigma: float
    n0: int
    h1: list
    h2: list
    code1: int
    code2: int
    delta: float
    Delta: float
    delta_p: float
    eta: float
    P: float
    intervals: np.ndarray
    types: np.ndarray
    cases: list = field(default_factory=list)
    phase_error: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    untyped: list = field(default_factory=list)
    fallbacks: int = 0

    @property
    def radius(self) -> float:
        return self.delta / abs(self.b)

    def typed(self, m: int) -> np.ndarray:
        return self.intervals[self.types == m] if self.intervals.size else np.zeros((0, 2))

    def gaps(self) -> np.ndarray:
        """Gaps ``J_j`` between consecutive intervals, including both ends of the atom."""
        lo, hi = self.atom
        if not self.intervals.size:
            return np.array([[lo, hi]])
        starts = np.concatenate([[lo], self.intervals[:, 1]])
        stops = np.concatenate([self.intervals[:, 0], [hi]])
        return np.stack([starts, stops], axis=1)

    def middle_thirds(self) -> np.ndarray:
        if not self.intervals.size:
            return np.zeros((0, 2))
        a, c = self.intervals[:, 0], self.intervals[:, 1]
        t = (c - a) / 3.0
        return np.stack([a + t, c - t], axis=1)

    def hat_J(self) -> np.ndarray:
        """Each gap widened by the adjacent outer thirds."""
        g = self.gaps()
        if not self.intervals.size:
            return g
        t = (self.intervals[:, 1] - self.intervals[:, 0]) / 3.0
        out = g.copy()
        out[1:, 0] -= t
        out[:-1, 1] += t
        return out

    def chi_on_branch(self, m: int, y) -> np.ndarray:
        """``chi(h_m(y))`` for ``y`` in the atom."""
        return 1.0 - (1.0 - self.eta) * bump(y, self.typed(m))

    def chi_slope_bound(self) -> float:
        """``3 (1 - eta) |b| / (delta P)``."""
        return 3.0 * (1.0 - self.eta) * abs(self.b) / (self.delta * self.P)

    def chi_slope(self, n_per_interval: int = 64) -> float:
        """Largest ``|chi'|`` over the pulled-back intervals, from the chain rule."""
        best = 0.0
        for m, word in ((1, self.h1), (2, self.h2)):
            for a, c in self.typed(m):
                y = np.linspace(a, c, n_per_interval)
                dh = np.exp(self._logw(word, y))
                best = max(best, float(np.max((1.0 - self.eta) * np.abs(bump_slope(y, [[a, c]])) / dh)))
        return best

    def _logw(self, word, y):
        system = self._system
        return follow_word(system.fmap, system.roof, word, y)["logw"]

    def invariants(self) -> dict:
        """Diameter, gap and third-ratio checks for the layout."""
        r = self.radius
        diam = self.intervals[:, 1] - self.intervals[:, 0] if self.intervals.size else np.zeros(0)
        gaps = self.gaps()
        gl = gaps[:, 1] - gaps[:, 0]
        hI = self.middle_thirds()
        hJ = self.hat_J()
        ratio_ok = True
        if hI.size:
            dI = hI[:, 1] - hI[:, 0]
            dJ = hJ[:, 1] - hJ[:, 0]
            ratio_ok = bool(np.all(dI >= self.delta_p * dJ[:-1] - 1e-15) and
                            np.all(dI >= self.delta_p * dJ[1:] - 1e-15))
        return {"diam_ok": bool(np.all((diam >= r * (1 - 1e-12)) & (diam <= 2 * r * (1 + 1e-12)))),
                "gap_ok": bool(np.all(gl <= 2 * self.Delta / abs(self.b) * (1 + 1e-12))),
                "thirds_ok": ratio_ok, "n_intervals": int(diam.size),
                "max_gap": float(gl.max()) if gl.size else 0.0, "untyped": len(self.untyped)}

    def summary(self) -> dict:
        pe = [x for x in self.phase_error if np.isfinite(x)]
        return {"atom": list(self.atom), "b": self.b, "sigma": self.sigma, "eta": self.eta,
                "n_intervals": int(len(self.types)), "n_case1": self.cases.count("case1"),
                "n_case2": self.cases.count("case2"), "max_phase_error": max(pe) if pe else None,
                "fallbacks": self.fallbacks, "chi_slope_bound": self.chi_slope_bound(),
                **self.invariants()}


def _uni_entry(ledger: ConstantLedger, atom) -> dict:
    for entry in ledger.uni.get("atoms", []):
        lo, hi = entry["atom"]
        if abs(lo - atom[0]) < 1e-12 and abs(hi - atom[1]) < 1e-12:
            return entry
    raise KeyError(f"atom {atom} has no UNI pair in the ledger")


def _check_b(ledger: ConstantLedger, b: float) -> None:
    if not ledger.uni.get("holds"):
        raise ValueError("UNI failed: no cancellation available")
    if abs(b) <= 2 * ledger.Delta:
        raise ValueError(f"|b| = {abs(b):.4g} must exceed 2 Delta = {2 * ledger.Delta:.4g}")


def _certify(spectral, b, digits, pair, lo, hi, eta, extra_pts):
    """Best type on ``[lo, hi]`` and its minimal margin over a fine grid plus ``extra_pts``."""
    pts = np.linspace(lo, hi, N_CERTIFY)
    if extra_pts is not None and extra_pts.size:
        pts = np.concatenate([pts, extra_pts[(extra_pts >= lo) & (extra_pts <= hi)]])
    terms = branch_terms(spectral, b, digits, pair, pts)
    scale = terms.Au.sum(axis=0)
    best_m, best = 0, -np.inf
    for m in (1, 2):
        mg = float(np.min(typed_margin(terms, m, eta) / scale))
        if mg > best:
            best_m, best = m, mg
    return best_m, best


def build_cancellation(pair: ConePair, spectral: SpectralData, ledger: ConstantLedger, p,
                       eval_points: np.ndarray | None = None, n_candidates: int = N_CANDIDATES,
                       tol: float = 0.0) -> CancellationLayout:
    """Typed intervals and damping level on one atom.

    Parameters
    ----------
    pair : ConePair
        ``(u, v)`` at frequency ``b = pair.b``.
    spectral : SpectralData
        Eigendata at ``sigma``; the twist is ``s = sigma + i b``.
    ledger : ConstantLedger
        Supplies ``n0``, ``delta``, ``Delta``, ``delta'`` and the UNI pair of ``p``.
    p : (float, float)
        Atom of the image partition.
    eval_points : ndarray, optional
        Points where the pointwise inequality will later be evaluated; they
        are added to every certification grid.
    n_candidates : int
        Size of the phase-search net.
    tol : float
        Relative slack tolerated when certifying.

    Returns
    -------
    CancellationLayout
    """
    b = float(pair.b)
    _check_b(ledger, b)
    entry = _uni_entry(ledger, p)
    digits = (tuple(entry["h1"]), tuple(entry["h2"]))
    lo, hi = float(p[0]), float(p[1])
    ab = abs(b)
    r = ledger.delta / ab
    step = ledger.Delta / ab
    # P = min over the atom of |h_m'|
    yy = np.linspace(lo, hi, 257)
    terms_grid = branch_terms(spectral, b, digits, pair, yy)
    P = float(np.exp(np.min(terms_grid.logw)))
    eta = max(ETA0, 1.0 - ledger.delta * P / 3.0)
    pts = None if eval_points is None else np.asarray(eval_points, dtype=float)

    intervals, types, cases, perr, margins, untyped = [], [], [], [], [], []
    fallbacks = 0
    cursor = lo
    while hi - cursor > 2 * step:
        y0 = cursor + r
        placed = None
        # case 1 on the ball around y0
        ball = np.linspace(y0 - r, y0 + r, 17)
        t0 = branch_terms(spectral, b, digits, pair, ball)
        small = [float(np.min(np.abs(t0.v_h[m])) - 0.5 * np.max(t0.u_h[m])) for m in (0, 1)]
        if min(small) <= 0:
            m_sel, mg = _certify(spectral, b, digits, pair, y0 - r, y0 + r, eta, pts)
            if mg >= -tol:
                placed = (y0, m_sel, "case1", float("nan"), mg)
        if placed is None:
            # case 2: phase search over y1 in [y0, y0 + Delta/|b|]
            cand = y0 + np.linspace(0.0, step, n_candidates)
            cand = cand[cand + r <= hi]
            if cand.size:
                tc = branch_terms(spectral, b, digits, pair, np.concatenate([[y0], cand]))
                theta = np.angle(tc.Av[0]) - np.angle(tc.Av[1])
                target = math.pi - theta[0]
                miss = np.abs(_wrap(b * (tc.psi[1:] - tc.psi[0]) - target))
                for idx in np.argsort(miss)[:8]:
                    y1 = float(cand[idx])
                    m_sel, mg = _certify(spectral, b, digits, pair, y1 - r, y1 + r, eta, pts)
                    if mg >= -tol:
                        placed = (y1, m_sel, "case2", float(abs(_wrap(theta[idx + 1] - math.pi))), mg)
                        break
        if placed is None:
            # any certified ball whose gap stays within 2 Delta/|b|
            cand = cursor + r + np.linspace(0.0, 2 * step, n_candidates)
            cand = cand[cand + r <= hi]
            for y1 in cand[::4]:
                m_sel, mg = _certify(spectral, b, digits, pair, y1 - r, y1 + r, eta, pts)
                if mg >= -tol:
                    placed = (float(y1), m_sel, "fallback", float("nan"), mg)
                    fallbacks += 1
                    break
        if placed is None:
            untyped.append((cursor, min(hi, cursor + 2 * step)))
            cursor += step
            continue
        y1, m_sel, case, pe, mg = placed
        intervals.append((y1 - r, y1 + r))
        types.append(m_sel)
        cases.append(case)
        perr.append(pe)
        margins.append(mg)
        cursor = y1 + r
    layout = CancellationLayout(
        atom=(lo, hi), b=b, sigma=spectral.sigma, n0=int(ledger.n0), h1=list(digits[0]), h2=list(digits[1]),
        code1=int(entry["code1"]), code2=int(entry["code2"]), delta=ledger.delta, Delta=ledger.Delta,
        delta_p=ledger.delta_p, eta=eta, P=P,
        intervals=np.array(intervals, dtype=float).reshape(-1, 2), types=np.array(types, dtype=int),
        cases=cases, phase_error=perr, margins=margins, untyped=untyped, fallbacks=fallbacks)
    layout._system = spectral.system
    return layout


# ---------------------------------------------------------------------------
# chi on the whole of Y
# ---------------------------------------------------------------------------


class ChiFunction:
    """The damping function assembled from the layouts of all atoms."""

    def __init__(self, layouts: list[CancellationLayout], system: WorkingSystem):
        self.layouts = layouts
        self.system = system
        self.n0 = layouts[0].n0 if layouts else 0

    def on_leaves(self, lv: Leaves, points: np.ndarray) -> np.ndarray:
        """``chi(h(y))`` for every leaf of a branch tree of depth ``n0`` over ``points``."""
        out = np.ones(lv.x.size)
        y = points[lv.point]
        for lay in self.layouts:
            lo, hi = lay.atom
            in_p = (y >= lo) & (y <= hi)
            for m, code in ((1, lay.code1), (2, lay.code2)):
                sel = in_p & (lv.word == code)
                if np.any(sel):
                    out[sel] = lay.chi_on_branch(m, y[sel])
        return out

    def evaluate(self, x) -> np.ndarray:
        """``chi(x)`` by following the forward orbit of ``x`` for ``n0`` steps."""
        fmap = self.system.fmap
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nb = fmap.n_branches
        code = np.zeros(x.size, dtype=np.int64)
        z = x.copy()
        ok = np.ones(x.size, dtype=bool)
        for j in range(self.n0):
            idx = fmap.branch_index(z)
            ok &= idx >= 0
            code += np.where(idx >= 0, idx, 0).astype(np.int64) * nb**j
            z = np.where(idx >= 0, fmap.forward(np.where(idx >= 0, z, fmap.y_lo)), fmap.y_lo)
        out = np.ones(x.size)
        for lay in self.layouts:
            lo, hi = lay.atom
            in_p = ok & (z >= lo) & (z <= hi)
            for m, c in ((1, lay.code1), (2, lay.code2)):
                sel = in_p & (code == c)
                if np.any(sel):
                    out[sel] = lay.chi_on_branch(m, z[sel])
        return out

    def slope(self) -> float:
        return max((lay.chi_slope() for lay in self.layouts), default=0.0)

    @property
    def eta(self) -> float:
        return min((lay.eta for lay in self.layouts), default=1.0)


def build_chi(pair: ConePair, spectral: SpectralData, ledger: ConstantLedger,
              eval_points: np.ndarray | None = None, **kw) -> ChiFunction:
    """Layouts on every atom of the ledger partition, combined into ``chi``."""
    layouts = [build_cancellation(pair, spectral, ledger, p, eval_points=eval_points, **kw)
               for p in ledger.atoms]
    return ChiFunction(layouts, spectral.system)


# ---------------------------------------------------------------------------
# pointwise cancellation check
# ---------------------------------------------------------------------------


def grid_operator(spectral: SpectralData, n: int, points, tree: BranchTree | None = None) -> NormalizedOperator:
    """Normalized operator at ``points``, reusing a branch tree when given."""
    if tree is None:
        tree = BranchTree(spectral.system, n, points)
    return NormalizedOperator(spectral, tree)


def verify_cor_5_2(pair: ConePair, chi: ChiFunction, spectral: SpectralData, s, grid=None,
                   op: NormalizedOperator | None = None) -> dict:
    """Compare ``|L~_s^{n0} v|`` with ``L~_sigma^{n0}(chi u)`` pointwise.

    Parameters
    ----------
    pair : ConePair
    chi : ChiFunction
    spectral : SpectralData
        Eigendata at ``Re s``.
    s : complex
        Twist ``sigma + i b``.
    grid : array_like, optional
        Evaluation points; defaults to the cell centres of ``pair.u``.
    op : NormalizedOperator, optional
        Prebuilt operator of depth ``n0`` over ``grid``.

    Returns
    -------
    dict
        ``max_violation`` (absolute), ``max_rel_violation``, ``n_points``,
        ``min_slack_middle`` (smallest ``rhs - lhs`` over points whose typed
        branch sits in a middle third) and ``holds``.
    """
    s = complex(s)
    pts = pair.u.centers if grid is None else np.asarray(grid, dtype=float)
    if op is None:
        op = grid_operator(spectral, chi.n0, pts)
    pts = op.points
    lhs = np.abs(op.apply(s, pair.v))
    rhs = np.real(op.apply(spectral.sigma, pair.u, leaf_factor=lambda lv: chi.on_leaves(lv, pts)))
    diff = lhs - rhs
    viol = float(max(0.0, np.max(diff)))
    rel = float(max(0.0, np.max(diff / np.maximum(rhs, 1e-300))))
    middle = np.zeros(pts.size, dtype=bool)
    for lay in chi.layouts:
        for a, c in lay.middle_thirds():
            middle |= (pts >= a) & (pts <= c)
    slack = float(np.min(rhs[middle] - lhs[middle])) if np.any(middle) else None
    return {"max_violation": viol, "max_rel_violation": rel, "n_points": int(pts.size),
            "min_slack_middle": slack, "holds": bool(viol <= 1e-8), "lhs": lhs, "rhs": rhs}


# ---------------------------------------------------------------------------
# iteration of cone pairs
# ---------------------------------------------------------------------------


def random_cone_pair(ledger: ConstantLedger, b: float, rng: np.random.Generator, N: int = 2048,
                     catalog=None, r_min: float = 0.55) -> ConePair:
    """A random smooth pair in the cone, with catalog jumps inside the allowance.

    ``u = (1 + a sin(2 pi m y + c)) * jumps`` and ``v = r u e^{i(w y + c')}``
    with ``|w| <= C10 |b| / 4``; jumps of relative size ``C7 rho^{-j} / 4`` are
    placed at catalog points of depth ``j > k``.
    """
    system = ledger.system
    y_lo, y_hi = system.fmap.y_lo, system.fmap.y_hi
    L = y_hi - y_lo
    c = y_lo + (np.arange(N) + 0.5) * L / N
    t = (c - y_lo) / L
    amp = rng.uniform(0.0, 0.2)
    freq = int(rng.integers(1, 4))
    u = 1.0 + amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    if catalog is not None:
        for x, j in catalog.tagged_points(j_min=ledger.k + 1):
            u = u * (1.0 + 0.25 * ledger.C7 * ledger.rho ** (-j) * rng.uniform(0, 1) * (c >= x))
    w = rng.uniform(-1.0, 1.0) * min(ledger.C10 * abs(b) / 4.0, 4.0 * abs(b))
    r = rng.uniform(r_min, 1.0)
    v = r * u * np.exp(1j * (w * t + rng.uniform(0, 2 * np.pi)))
    return ConePair(GridFunction(u, y_lo, y_hi), GridFunction(v, y_lo, y_hi), b, ledger)


def atom_ratios(u: GridFunction, atoms) -> list[float]:
    """``sup u|_p / inf u|_p`` for each atom."""
    vals = np.real(u.values)
    out = []
    for lo, hi in atoms:
        sel = (u.centers >= lo) & (u.centers <= hi)
        if np.any(sel):
            out.append(float(vals[sel].max() / vals[sel].min()))
    return out


def jump_bound_check(u_in: GridFunction, u_out: GridFunction, v_out: GridFunction, ledger: ConstantLedger,
                     catalog, slack: float = 1.1) -> dict:
    """Per-point jump bounds after one step at every catalog point of depth ``> k``.

    ``Size w(x) <= (1/4) max_p (sup u/inf u) C7 rho^{-j} L~u(x)`` for ``w``
    the new ``u`` and the new ``v``.
    """
    ratio = max(atom_ratios(u_in, ledger.atoms), default=1.0)
    worst, fails, checked = 0.0, [], 0
    uo = np.real(u_out.values)
    for x, j in catalog.tagged_points(j_min=ledger.k + 1):
        allow = 0.25 * ratio * ledger.C7 * ledger.rho ** (-j) * uo[u_out.cell(np.array([x]))][0]
        for name, g in (("u", uo), ("v", v_out.values)):
            size = float(grid_jump(g, np.array([x]), u_out.y_lo, u_out.h)[0])
            checked += 1
            rr = size / max(allow, 1e-300)
            worst = max(worst, rr)
            if size > slack * allow + 1e-12:
                fails.append({"x": float(x), "depth": int(j), "which": name, "size": size, "allow": allow})
    return {"holds": not fails, "worst_ratio": worst, "n_checked": checked, "failures": fails[:20],
            "atom_ratio": ratio}


@dataclass
class IterationReport:
    chi_eta: float
    chi_slope: float
    cancellation: dict
    cone: dict
    jump_bounds: dict
    atom_ratios: list
    layouts: list


def iterate_pair(pair: ConePair, spectral: SpectralData, s, ledger: ConstantLedger, catalog=None,
                 op: NormalizedOperator | None = None) -> tuple[ConePair, IterationReport]:
    """One step ``(u, v) -> (L~_sigma^{n0}(chi u), L~_s^{n0} v)`` on the grid of the pair.

    Parameters
    ----------
    pair : ConePair
        Input pair; ``|pair.b| >= 2`` and ``|b| > 2 Delta``.
    spectral : SpectralData
        Eigendata at ``Re s``.
    s : complex
        ``sigma + i b`` with ``b = pair.b``.
    ledger : ConstantLedger
    catalog : DiscontinuityCatalog, optional
        Allowed jump locations; defaults to depth ``k + 12``.
    op : NormalizedOperator, optional
        Prebuilt operator of depth ``n0`` over the pair's cell centres.

    Returns
    -------
    (ConePair, IterationReport)
        The new pair, and the cancellation, cone and jump-bound reports.
    """
    s = complex(s)
    if abs(s.imag - pair.b) > 1e-12:
        raise ValueError("Im s must equal the frequency of the pair")
    if abs(pair.b) < 2:
        raise ValueError("iteration needs |b| >= 2")
    if catalog is None:
        catalog = discontinuity_catalog(ledger.system.fmap, ledger.k + 12)
    pts = pair.u.centers
    if op is None:
        op = grid_operator(spectral, ledger.n0, pts)
    chi = build_chi(pair, spectral, ledger, eval_points=pts)
    rep = verify_cor_5_2(pair, chi, spectral, s, op=op)
    u_new = GridFunction(np.maximum(rep["rhs"], 0.0), pair.u.y_lo, pair.u.y_hi)
    v_new = GridFunction(op.apply(s, pair.v), pair.u.y_lo, pair.u.y_hi)
    new = ConePair(u_new, v_new, pair.b, ledger)
    cone = cone_check(new, catalog, ledger, breakpoints=ledger.breakpoints)
    jumps = jump_bound_check(pair.u, u_new, v_new, ledger, catalog)
    report = IterationReport(chi_eta=chi.eta, chi_slope=chi.slope(),
                             cancellation={k: v for k, v in rep.items() if k not in ("lhs", "rhs")},
                             cone=cone, jump_bounds=jumps, atom_ratios=atom_ratios(pair.u, ledger.atoms),
                             layouts=[lay.summary() for lay in chi.layouts])
    return new, report


# ---------------------------------------------------------------------------
# middle thirds versus the rest
# ---------------------------------------------------------------------------


def _integral(w, lo: float, hi: float, n: int = 64) -> float:
    if hi <= lo:
        return 0.0
    x, wt = np.polynomial.legendre.leggauss(n)
    xx = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    return float(0.5 * (hi - lo) * np.sum(wt * np.real(as_callable(w)(xx))))


def middle_third_check(layout: CancellationLayout, w, M: float | None = None, n_sample: int = 2049) -> dict:
    """``int over middle thirds of w >= delta'' int over the widened gaps of w``.

    ``M`` defaults to the sampled ``sup_p w / inf_p w``; ``delta'' = delta' / (2M)``.
    """
    lo, hi = layout.atom
    wf = as_callable(w)
    ys = np.linspace(lo, hi, n_sample)
    vals = np.real(wf(ys))
    if np.any(vals <= 0):
        raise ValueError("w must be positive on the atom")
    M_meas = float(vals.max() / vals.min())
    M = M_meas if M is None else float(M)
    dpp = layout.delta_p / (2.0 * M)
    I_int = sum(_integral(wf, a, c) for a, c in layout.middle_thirds())
    J_int = sum(_integral(wf, max(a, lo), min(c, hi)) for a, c in layout.hat_J())
    return {"I": I_int, "J": J_int, "delta_pp": dpp, "M": M, "M_measured": M_meas,
            "holds": bool(I_int >= dpp * J_int), "ratio": I_int / J_int if J_int > 0 else math.inf}


__all__ = ["N_CANDIDATES", "BranchTerms", "branch_terms", "typed_margin", "CancellationLayout",
           "build_cancellation", "ChiFunction", "build_chi", "grid_operator", "verify_cor_5_2",
           "random_cone_pair", "atom_ratios", "jump_bound_check", "IterationReport", "iterate_pair",
           "middle_third_check", "smoothstep", "bump"]
