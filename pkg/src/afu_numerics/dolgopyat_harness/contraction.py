"""Lasota-Yorke fits, L2 decay, the (H) hypothesis and the contraction scan.

Operator norms in the ``b``-norm ``Var / (1 + |b|) + L1`` are estimated as
suprema over finite test families, so every reported norm is a lower bound
for the true BV operator norm.  Long iterations (the scan and the resolvent)
use the Ulam discretisation; short ones use exact branch sums on a grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from ..bv_space import ConePair, GridFunction, var
from ..interval_map import WorkingSystem, image_partition
from ..operator_core import NormalizedOperator, SpectralData, assemble_ulam
from .cancellation import grid_operator, iterate_pair
from .ledger import ConstantLedger, set_ly_constant


class UniFailure(RuntimeError):
    """Raised when a step needs the cancellation mechanism but UNI does not hold."""


class SingularSolve(RuntimeError):
    def __init__(self, msg: str, condition: float):
        super().__init__(msg)
        self.condition = condition


# ---------------------------------------------------------------------------
# test families
# ---------------------------------------------------------------------------


@dataclass
class TestFamily:
    """Grid functions used to estimate operator norms, with their kinds."""

    __test__ = False

    functions: list
    kinds: list
    N: int
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.functions)

    def matrix(self) -> np.ndarray:
        """Cell values as an array of shape ``(N, size)``."""
        return np.column_stack([f.values for f in self.functions]).astype(complex)

    def meta(self) -> dict:
        kinds, counts = np.unique(self.kinds, return_counts=True)
        return {"size": len(self), "N": self.N, "seed": self.seed,
                "kinds": {str(k): int(c) for k, c in zip(kinds, counts)}}


def bv_test_family(system: WorkingSystem, N: int, rng: np.random.Generator | int | None = None,
                   size: int = 32, jump_points=None, max_freq: int | None = None) -> TestFamily:
    """Mixed BV test functions on a uniform grid of ``N`` cells.

    The family holds the constant ``1``, smooth random trigonometric sums
    (real and complex), adversarial sawtooth waves of increasing frequency and
    random step functions with jumps at ``jump_points`` (uniform random
    points when none are given).
    """
    seed = rng if isinstance(rng, (int, type(None))) else None
    rng = np.random.default_rng(rng)
    lo, hi = system.fmap.y_lo, system.fmap.y_hi
    t = (np.arange(N) + 0.5) / N
    max_freq = max_freq or max(4, N // 32)
    funcs, kinds = [np.ones(N)], ["constant"]
    n_rest = size - 1
    n_smooth = n_rest // 3
    n_saw = n_rest // 3
    n_step = n_rest - n_smooth - n_saw
    for i in range(n_smooth):
        modes = np.arange(1, 6)
        a = rng.normal(size=5) / modes
        c = rng.normal(size=5) / modes
        val = 1.0 + 0.5 * (np.sin(2 * np.pi * np.outer(t, modes)) @ a + np.cos(2 * np.pi * np.outer(t, modes)) @ c)
        if i % 2:
            val = val * np.exp(2j * np.pi * rng.integers(1, 4) * t)
        funcs.append(val)
        kinds.append("smooth")
    freqs = np.unique(np.geomspace(2, max_freq, max(n_saw, 1)).astype(int))
    for i in range(n_saw):
        q = int(freqs[i % freqs.size])
        funcs.append(((q * t + rng.uniform()) % 1.0) - 0.5 + rng.uniform(0.0, 0.5))
        kinds.append("sawtooth")
    pts = None if jump_points is None else np.asarray(jump_points, dtype=float)
    if pts is not None:
        pts = pts[(pts > lo) & (pts < hi)]
    for _ in range(n_step):
        n_j = int(rng.integers(1, 9))
        if pts is not None and pts.size:
            where = rng.choice(pts, size=min(n_j, pts.size), replace=False)
        else:
            where = rng.uniform(lo, hi, size=n_j)
        xs = lo + (hi - lo) * t
        val = np.full(N, rng.normal())
        for x0 in where:
            val = val + rng.normal() * (xs >= x0)
        funcs.append(val)
        kinds.append("step")
    gfs = [GridFunction(np.asarray(f), lo, hi) for f in funcs[:size]]
    return TestFamily(gfs, kinds[:size], N, seed)


def _batch_apply(op: NormalizedOperator, sigma: float, b_list, funcs) -> np.ndarray:
    """``L~_{sigma + i b}^n f`` at the operator points for every ``b`` and ``f``.

    Returns an array of shape ``(len(b_list), len(funcs), n_points)``.
    """
    npts = op.points.size
    out = np.zeros((len(b_list), len(funcs), npts), dtype=complex)
    for lv, fl in op.blocks():
        base = op.weights(lv, fl, sigma)
        vals = np.stack([np.asarray(f.evaluate(lv.x), dtype=complex) for f in funcs])
        S = sp.csr_matrix((np.ones(len(lv)), (lv.point, np.arange(len(lv)))), shape=(npts, len(lv)))
        for i, b in enumerate(b_list):
            w = base * np.exp(1j * b * lv.phi) if b != 0 else base
            out[i] += (S @ (vals * w).T).T
    return out / op._f_at


# ---------------------------------------------------------------------------
# Lasota-Yorke
# ---------------------------------------------------------------------------


def ly_fit(v_out, v_in, remainder) -> dict:
    """Tightest upper envelope ``v_out <= a v_in + c remainder`` by linear programming.

    Minimizes the total relative slack ``sum (a v_in + c r - v_out) / (v_in + r)``
    subject to the envelope constraints and ``a, c >= 0``.
    """
    v_out, v_in, r = (np.asarray(x, dtype=float) for x in (v_out, v_in, remainder))
    scale = np.maximum(v_in + r, 1e-300)
    cost = np.array([np.sum(v_in / scale), np.sum(r / scale)])
    res = linprog(cost, A_ub=-np.column_stack([v_in, r]), b_ub=-v_out, bounds=[(0, None), (0, None)],
                  method="highs")
    if not res.success:
        raise RuntimeError(f"LY fit failed: {res.message}")
    a, c = res.x
    resid = a * v_in + c * r - v_out
    return {"a": float(a), "c": float(c), "residuals": resid, "min_residual": float(resid.min())}


def verify_ly(ledger: ConstantLedger, n: int, b_list, test_set: TestFamily, sigma: float = 0.0,
              k: int | None = None, N_out: int = 2048) -> dict:
    """Fit ``Var L~_s^{nk} v <= a Var v + c (1 + |b|) Lambda^{nk} (|v|_inf |v|_1)^{1/2}``.

    Parameters
    ----------
    ledger : ConstantLedger
    n : int
        Multiplier of ``k``.
    b_list : sequence of float
        Frequencies; one ``(a, c)`` pair is fitted per frequency.
    test_set : TestFamily
        Input functions (their grid may be finer than the output grid).
    sigma : float
        Real part of ``s``; eigendata must be available in the ledger.
    k : int, optional
        Block length; defaults to ``ledger.k_ly``.
    N_out : int
        Output grid on which ``Var L~ v`` is measured.

    Returns
    -------
    dict
        ``per_b`` with ``a``, ``c``, ``holds`` (``a <= rho^{-nk}``) and the
        envelope residuals; ``c_max``; ``remainder_slope`` of
        ``log(c (1 + |b|))`` against ``log(1 + |b|)``.
    """
    k = ledger.k_ly if k is None else int(k)
    depth = n * k
    spectral = ledger.spectral(sigma)
    lo, hi = ledger.system.fmap.y_lo, ledger.system.fmap.y_hi
    pts = lo + (hi - lo) * (np.arange(N_out) + 0.5) / N_out
    op = grid_operator(spectral, depth, pts)
    b_list = [float(b) for b in b_list]
    outs = _batch_apply(op, sigma, b_list, test_set.functions)
    v_in = np.array([var(f) for f in test_set.functions])
    size = np.array([math.sqrt(f.sup() * f.l1()) for f in test_set.functions])
    target = ledger.rho ** (-depth)
    per_b = {}
    for i, b in enumerate(b_list):
        v_out = np.array([var(GridFunction(o, lo, hi)) for o in outs[i]])
        rem = (1.0 + abs(b)) * spectral.Lam**depth * size
        fit = ly_fit(v_out, v_in, rem)
        per_b[b] = {"a": fit["a"], "c": fit["c"], "target": target, "holds": bool(fit["a"] <= target),
                    "ratio_to_target": fit["a"] / target, "min_residual": fit["min_residual"],
                    "var_out": v_out.tolist()}
    c_vals = np.array([per_b[b]["c"] for b in b_list])
    slope = None
    if len(b_list) > 1 and np.all(c_vals > 0):
        x = np.log1p(np.abs(b_list))
        slope = float(np.polyfit(x, np.log(c_vals * (1.0 + np.abs(b_list))), 1)[0])
    return {"n": n, "k": k, "depth": depth, "sigma": sigma, "rho": ledger.rho, "per_b": per_b,
            "c_max": float(c_vals.max()), "remainder_slope": slope, "family": test_set.meta()}


def calibrate_ly(ledger: ConstantLedger, test_set: TestFamily, b_list=(2.0, 8.0, 32.0), n_list=(1, 2)) -> dict:
    """Run :func:`verify_ly` for several ``n`` and record ``c`` and ``C11`` in the ledger."""
    reports = {n: verify_ly(ledger, n, b_list, test_set) for n in n_list}
    c = max(r["c_max"] for r in reports.values())
    set_ly_constant(ledger, c)
    return {"c": c, "C11": ledger.C11, "reports": reports}


# ---------------------------------------------------------------------------
# L2 decay
# ---------------------------------------------------------------------------


def _uni_holds(ledger: ConstantLedger) -> bool:
    return bool(ledger.status.get("uni")) and ledger.n0 is not None


def l2_contraction(ledger: ConstantLedger, b: float, m_max: int, v: GridFunction, sigma: float = 0.0,
                   allow_uni_failure: bool = False, op: NormalizedOperator | None = None) -> dict:
    """Decay of ``int |L~_s^{m n0} v|^2`` along the cancellation-driven iteration.

    Starting from ``u_0 = |v|_inf`` the pair is updated by
    ``u_{m+1} = L~_sigma^{n0}(chi_m u_m)`` and ``v_{m+1} = L~_s^{n0} v_m``.

    Parameters
    ----------
    ledger : ConstantLedger
    b : float
        Imaginary part of ``s``.
    m_max : int
        Number of blocks of length ``n0``.
    v : GridFunction
        Initial function; the pair ``(|v|_inf, v)`` must lie in the cone.
    sigma : float
    allow_uni_failure : bool
        When UNI fails, run with ``chi = 1`` and flag the failure instead of
        raising (used for controls).

    Returns
    -------
    dict
        ``table`` rows ``(m, int |v_m|^2, int u_m^2)``; ``beta`` is the
        geometric rate fitted to ``int |v_m|^2`` and ``beta_bound`` the rate
        of the dominating sequence ``int u_m^2``; ``monotone`` (of
        ``int |v_m|^2``), ``dominated`` and ``uni_failed``.
    """
    s = complex(sigma, b)
    spectral = ledger.spectral(sigma)
    uni_ok = _uni_holds(ledger)
    if not uni_ok and not allow_uni_failure:
        raise UniFailure("UNI failed: no cancellation available for the L2 iteration")
    n0 = ledger.n0 if ledger.n0 is not None else ledger.k
    lo, hi = v.y_lo, v.y_hi
    if op is None:
        op = grid_operator(spectral, n0, v.centers)
    u = GridFunction(np.full(v.N, float(np.max(np.abs(v.values)))), lo, hi)
    length = hi - lo
    rows = [(0, float(np.mean(np.abs(v.values) ** 2) * length), float(np.mean(u.values**2) * length))]
    cone_ok = []
    pair = ConePair(u, v, b, ledger)
    for m in range(1, m_max + 1):
        if uni_ok:
            pair, rep = iterate_pair(pair, spectral, s, ledger, op=op)
            cone_ok.append(bool(rep.cone["in_cone"]))
            u_m, v_m = pair.u, pair.v
        else:
            u_m = GridFunction(np.real(op.apply(sigma, pair.u)), lo, hi)
            v_m = GridFunction(op.apply(s, pair.v), lo, hi)
            pair = ConePair(u_m, v_m, b, ledger)
        rows.append((m, float(np.mean(np.abs(v_m.values) ** 2) * length),
                     float(np.mean(u_m.values**2) * length)))
    tab = np.array(rows)
    ms = tab[:, 0]
    beta = float(np.exp(np.polyfit(ms, np.log(np.maximum(tab[:, 1], 1e-300)), 1)[0]))
    beta_bound = float(np.exp(np.polyfit(ms, np.log(np.maximum(tab[:, 2], 1e-300)), 1)[0]))
    return {"b": b, "sigma": sigma, "n0": n0, "table": tab.tolist(), "beta": beta, "beta_bound": beta_bound,
            "monotone": bool(np.all(np.diff(tab[:, 1]) <= 1e-12 * tab[0, 1])),
            "dominated": bool(np.all(tab[:, 1] <= tab[:, 2] * (1 + 1e-9) + 1e-15)),
            "cone_ok": cone_ok, "uni_failed": not uni_ok,
            "flags": [] if uni_ok else ["UNI failed: chi = 1 control run"]}


def l2_beta(ledger: ConstantLedger, b: float, sigma: float = 0.0, m_max: int = 4, N: int = 2048) -> float:
    """Largest fitted L2 rate over ``v = 1`` and a smooth twisted ``v``."""
    lo, hi = ledger.system.fmap.y_lo, ledger.system.fmap.y_hi
    t = (np.arange(N) + 0.5) / N
    op = grid_operator(ledger.spectral(sigma), ledger.n0, lo + (hi - lo) * t)
    vs = [np.ones(N, dtype=complex), (1 + 0.3 * np.sin(2 * np.pi * t)) * np.exp(2j * np.pi * t) / 1.3]
    return max(l2_contraction(ledger, b, m_max, GridFunction(v, lo, hi), sigma, op=op)["beta"] for v in vs)


# ---------------------------------------------------------------------------
# hypothesis (H)
# ---------------------------------------------------------------------------


def birkhoff_roof(system: WorkingSystem, y, n: int) -> np.ndarray:
    """Forward Birkhoff sum ``phi_n(y) = sum_{j<n} phi(F^j y)``; NaN once the orbit leaves ``Y``."""
    x = np.asarray(y, dtype=float).copy()
    total = np.zeros_like(x)
    for _ in range(n):
        total += system.roof.phi(np.nan_to_num(x, nan=system.fmap.y_lo))
        x = system.fmap.forward(x)
        total[np.isnan(x)] = np.nan
    return total


def classify_H(v: GridFunction, sigma: float, m: int, ledger: ConstantLedger, b: float) -> bool:
    """Evaluate the hypothesis ``(H_{sigma,m})`` for ``v`` at frequency ``b``.

    For ``sigma >= 0`` it reads ``Var v <= C11 |b|^2 rho^{m n0} |v|_1``; for
    ``sigma < 0`` the same with ``e^{sigma phi_{m n0}} v`` on both sides.
    Cells whose forward orbit falls into a hole carry weight zero.
    """
    if ledger.C11 is None:
        raise ValueError("ledger has no C11; run calibrate_ly or set_ly_constant first")
    n0 = ledger.n0 if ledger.n0 is not None else ledger.k
    r = m * n0
    w = v
    if sigma < 0:
        phi = birkhoff_roof(ledger.system, v.centers, r)
        weight = np.where(np.isnan(phi), 0.0, np.exp(sigma * np.nan_to_num(phi)))
        w = GridFunction(v.values * weight, v.y_lo, v.y_hi)
    log_rhs = math.log(ledger.C11) + 2 * math.log(abs(b)) + r * math.log(ledger.rho)
    lhs, l1 = var(w), w.l1()
    if lhs == 0.0:
        return True
    if l1 == 0.0:
        return False
    return bool(math.log(lhs) <= log_rhs + math.log(l1))


def schedule(n: int, n0: int, threshold: float, is_H) -> dict:
    """Run the four-step block schedule on one function.

    Parameters
    ----------
    n : int
        Total number of steps.
    n0 : int
        Block length.
    threshold : float
        ``A log(1 + |b|)``; blocks of fewer than this many ``n0``-steps stop the schedule.
    is_H : callable
        ``is_H(consumed, m)`` tells whether the function after ``consumed``
        steps satisfies ``(H_{sigma,m})``.

    Returns
    -------
    dict
        The sequence ``m_i``, the verdicts, ``M_p``, the steps consumed, the
        remainders and ``shrink_ok`` (each pass leaves at most ``2/3`` of
        the remainder up to one block of rounding).
    """
    ms, verdicts, remainders = [], [], [n]
    consumed = 0
    M = 0
    shrink_ok = True
    while True:
        rem = n - consumed
        m = rem // (3 * n0)
        if m < threshold or m == 0:
            break
        ms.append(int(m))
        h = bool(is_H(consumed, m))
        verdicts.append(h)
        if h:
            M += 3 * m
            consumed += 3 * m * n0
            remainders.append(n - consumed)
            break
        M += m
        consumed += m * n0
        remainders.append(n - consumed)
        if remainders[-1] > (2.0 / 3.0) * remainders[-2] + n0:
            shrink_ok = False
    return {"m": ms, "H": verdicts, "M_p": M, "consumed": consumed, "remainders": remainders,
            "passes": max(len(ms) - 1, 0), "shrink_ok": shrink_ok}


# ---------------------------------------------------------------------------
# Ulam-level operators
# ---------------------------------------------------------------------------


def normalized_ulam(spectral: SpectralData, b: float, N: int) -> tuple[sp.csr_matrix, np.ndarray]:
    """Ulam matrix of ``L~_{sigma + i b}`` on ``N`` cells and the cell values of ``f_sigma``."""
    system = spectral.system
    U = assemble_ulam(system.fmap, system.roof, complex(spectral.sigma, b), N)
    centers = system.fmap.y_lo + (np.arange(N) + 0.5) * U.h
    f = spectral.f_eval(centers)
    mat = sp.diags(1.0 / (spectral.lam * f)) @ U.matrix @ sp.diags(f)
    return sp.csr_matrix(mat), f


def _b_norms(values: np.ndarray, b: float, h: float) -> np.ndarray:
    """Column-wise ``Var / (1 + |b|) + L1`` for cell values of shape ``(N, m)``."""
    v = np.sum(np.abs(np.diff(values, axis=0)), axis=0)
    return v / (1.0 + abs(b)) + np.sum(np.abs(values), axis=0) * h


def derive_A(ledger: ConstantLedger, beta: float, c: float, sigma: float = 0.0, margin: float = 1.05) -> dict:
    """Smallest ``A`` making ``gamma_1 < 1`` from measured ``beta`` and ``c``.

    ``gamma_1 = max{Lambda^{2 n0} rho^{-1}, Lambda^{n0} beta^{1/2}} exp(6 log(2 C10 + c) / A)``.
    """
    n0 = ledger.n0
    Lam = ledger.spectral(sigma).Lam
    g0 = max(Lam ** (2 * n0) / ledger.rho, Lam**n0 * math.sqrt(beta))
    if not g0 < 1:
        raise ValueError(f"no admissible A: base rate {g0:.6g} >= 1")
    A_min = 6.0 * math.log(2.0 * ledger.C10 + c) / (-math.log(g0))
    A = margin * A_min
    gamma1 = g0 * math.exp(6.0 * math.log(2.0 * ledger.C10 + c) / A)
    gamma2 = Lam**n0 * ledger.rho ** (-n0 / 2.0)
    return {"A": A, "A_min": A_min, "base": g0, "gamma1": gamma1, "gamma2": gamma2, "beta": beta, "c": c}


@dataclass
class ScanResult:
    sigma: float
    A: dict
    A_prime: float
    per_b: dict
    family: dict
    uni_failed: bool
    flags: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (not self.uni_failed) and all(r["gamma_fit"] < 1 for r in self.per_b.values())

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "A": self.A, "A_prime": self.A_prime, "per_b": self.per_b,
                "family": self.family, "uni_failed": self.uni_failed, "flags": self.flags,
                "passed": self.passed}


def n_schedule(A: float, n0: int, b: float, Lam: float, sup_inf: float, A_prime: float) -> int:
    """Number of steps for frequency ``b``.

    The displayed minimum ``2 max{(A / n0) log(1 + |b|), log(Lam^{-1} K A'(1 + |b|))}``
    is raised to ``3 n0 ceil(A log(1 + |b|))`` so that the block schedule
    takes at least one contraction block.
    """
    lb = math.log1p(abs(b))
    shown = 2.0 * max(A / n0 * lb, math.log(max(sup_inf * A_prime * (1 + abs(b)) / Lam, 1.0)))
    return int(max(math.ceil(shown), 3 * n0 * math.ceil(A * lb)))


def contraction_scan(ledger: ConstantLedger, b_list, test_set: TestFamily | None = None, sigma: float = 0.0,
                     beta: float | None = None, c: float | None = None, N: int = 4096, window: int | None = None,
                     rng: int = 0, n_cap: int = 200_000) -> ScanResult:
    """Estimate ``||L~_s^n||_b`` along the block schedule and fit ``gamma``.

    Parameters
    ----------
    ledger : ConstantLedger
        Needs ``C11`` (see :func:`calibrate_ly`) unless UNI fails.
    b_list : sequence of float
        Frequencies; each must satisfy ``|b| >= max{4 pi / D, 2}``.
    test_set : TestFamily, optional
        Functions on ``N`` cells; a default mixed family is drawn otherwise.
    sigma : float
    beta : float, optional
        L2 decay rate; measured with :func:`l2_contraction` at the smallest ``b`` when absent.
    c : float, optional
        LY remainder constant; defaults to ``ledger.c_ly``.
    N : int
        Ulam resolution.
    window : int, optional
        Fit window beyond ``n_used``; defaults to ``3 n0``.

    Returns
    -------
    ScanResult
        Per ``b``: ``n_used``, the schedule of every test function, the
        logarithms of the norm ratios at ``n_used .. n_used + window`` and
        ``gamma_fit``, the largest ``ratio^{1/n}`` over the window.
    """
    b_list = [float(b) for b in b_list]
    uni_failed = not _uni_holds(ledger)
    flags = []
    spectral = ledger.spectral(sigma)
    if test_set is None:
        test_set = bv_test_family(ledger.system, N, rng)
    if test_set.N != N:
        raise ValueError("test family grid must match the Ulam resolution")
    n0 = ledger.n0 if ledger.n0 is not None else ledger.k
    window = 3 * n0 if window is None else int(window)
    if uni_failed:
        flags.append("UNI failed: no cancellation, schedule uses the LY block only")
        A = {"A": None}
    else:
        threshold = max(4 * math.pi / ledger.D, 2.0)
        for b in b_list:
            if abs(b) < threshold:
                raise ValueError(f"|b| = {abs(b)} is below the scan hypothesis |b| > max{{4 pi / D, 2}} = {threshold:.6g}")
        if c is None:
            if ledger.c_ly is None:
                raise ValueError("ledger has no LY constant; run calibrate_ly first")
            c = ledger.c_ly
        if beta is None:
            beta = l2_beta(ledger, min(b_list, key=abs), sigma)
        A = derive_A(ledger, beta, c, sigma)
    h = (ledger.system.fmap.y_hi - ledger.system.fmap.y_lo) / N
    V0 = test_set.matrix()
    norm0 = _b_norms(V0, 0.0, h)
    per_b = {}
    A_prime = 0.0
    for b in b_list:
        mat, _ = normalized_ulam(spectral, b, N)
        base = _b_norms(V0, b, h)
        # probe for A' over short times
        V = V0.copy()
        for n in range(1, 2 * n0 + 1):
            V = mat @ V
            A_prime = max(A_prime, float(np.max(_b_norms(V, b, h) / base)) / (1 + abs(b)))
        if uni_failed:
            n_used = 3 * n0 * max(1, math.ceil(math.log1p(abs(b))))
            thr = math.inf
        else:
            n_used = n_schedule(A["A"], n0, b, spectral.Lam, spectral.sup_inf, A_prime)
            thr = A["A"] * math.log1p(abs(b))
        if n_used + window > n_cap:
            raise ValueError(f"schedule needs {n_used + window} steps, above the cap {n_cap}")
        # the schedule can only query H after the steps it consumes when every
        # earlier verdict fails, so those iterates are the only ones kept
        probe = schedule(n_used, n0, thr, lambda *_: False)
        stops = set(np.cumsum([0] + [mi * n0 for mi in probe["m"]]).tolist())
        stored = {0: V0}
        V = V0.copy()
        logscale = np.zeros(V.shape[1])
        log_ratios = []
        for n in range(1, n_used + window + 1):
            V = mat @ V
            if n in stops:
                stored[n] = V * np.exp(logscale)
            peak = np.max(np.abs(V), axis=0)
            small = (peak > 0) & (peak < 1e-100)
            if np.any(small):
                V[:, small] /= peak[small]
                logscale[small] += np.log(peak[small])
            if n >= n_used:
                with np.errstate(divide="ignore"):
                    lr = np.log(_b_norms(V, b, h)) + logscale - np.log(base)
                log_ratios.append(float(np.max(lr)))
        scheds = []
        for j, f in enumerate(test_set.functions):
            def is_H(consumed, m, j=j, f=f):
                g = GridFunction(stored[consumed][:, j], f.y_lo, f.y_hi)
                return classify_H(g, sigma, m, ledger, b)
            scheds.append(schedule(n_used, n0, thr, (lambda *_: False) if uni_failed else is_H))
        del stored
        ns = np.arange(n_used, n_used + window + 1)
        lr = np.array(log_ratios)
        gamma_fit = float(np.exp(np.max(lr / ns)))
        slope = float(np.polyfit(ns, lr, 1)[0]) if ns.size > 1 and np.all(np.isfinite(lr)) else None
        per_b[b] = {"n_used": n_used, "threshold_blocks": thr, "log_ratios": lr.tolist(),
                    "gamma_fit": gamma_fit, "log_slope": slope,
                    "schedule": {"M_p": [s["M_p"] for s in scheds], "passes": [s["passes"] for s in scheds],
                                 "first_H": [s["H"][0] if s["H"] else None for s in scheds],
                                 "shrink_ok": all(s["shrink_ok"] for s in scheds)}}
    # relation between normalized and plain operators
    kf = spectral.sup_inf / spectral.lam
    for b in b_list:
        per_b[b]["normalization_factor"] = kf
    fam = test_set.meta()
    fam["norm_floor"] = float(norm0.min())
    return ScanResult(sigma, A, A_prime, per_b, fam, uni_failed, flags)


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------


def resolvent_norm(system: WorkingSystem, s, N: int = 4096, test_set: TestFamily | None = None,
                   cond_max: float = 1e12, rng: int = 0) -> dict:
    """``sup_v ||(I - U_s)^{-1} v||_b / ||v||_b`` for the Ulam matrix ``U_s``.

    Raises
    ------
    SingularSolve
        When the estimated 1-norm condition number exceeds ``cond_max``.
    """
    s = complex(s)
    U = assemble_ulam(system.fmap, system.roof, s, N)
    M = (sp.identity(N, dtype=complex, format="csc") - U.matrix.tocsc()).tocsc()
    lu = spla.splu(M)
    inv = spla.LinearOperator((N, N), matvec=lambda x: lu.solve(np.asarray(x, dtype=complex)),
                              rmatvec=lambda x: lu.solve(np.asarray(x, dtype=complex), trans="H"),
                              dtype=complex)
    cond = float(spla.norm(M, 1) * spla.onenormest(inv))
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularSolve(f"(I - L_s) is near singular at s = {s}: condition estimate {cond:.3g}", cond)
    if test_set is None:
        test_set = bv_test_family(system, N, rng)
    V = test_set.matrix()
    W = lu.solve(V)
    b = s.imag
    ratios = _b_norms(W, b, U.h) / _b_norms(V, b, U.h)
    return {"s": [s.real, s.imag], "N": N, "norm": float(ratios.max()), "argmax": int(ratios.argmax()),
            "condition": cond, "residual": float(np.max(np.abs(M @ W - V))), "family": test_set.meta()}


def resolvent_scan(system: WorkingSystem, b_list, sigma: float = 0.0, N: int = 4096, rng: int = 0) -> dict:
    """Resolvent norms over ``b_list`` and the log-log slope against ``|b|``."""
    fam = bv_test_family(system, N, rng)
    norms = {float(b): resolvent_norm(system, complex(sigma, b), N, fam)["norm"] for b in b_list}
    bs = np.array(list(norms))
    slope = float(np.polyfit(np.log(np.abs(bs)), np.log(list(norms.values())), 1)[0]) if bs.size > 1 else None
    return {"norms": norms, "slope": slope, "sublinear": bool(slope is not None and slope < 1)}


# ---------------------------------------------------------------------------
# affine interpolation of L~^r v
# ---------------------------------------------------------------------------


def refine_partition(breakpoints: np.ndarray, scale: float) -> tuple[np.ndarray, int]:
    """Split every atom into equal pieces of length in ``(scale / 2, 2 scale)``.

    Atoms shorter than ``scale / 2`` are kept whole; their number is returned.
    """
    out = [breakpoints[0]]
    short = 0
    for a, c in zip(breakpoints[:-1], breakpoints[1:]):
        L = c - a
        q = max(1, int(round(L / scale)))
        if L / q <= scale / 2:
            short += 1
        out.extend(a + L * np.arange(1, q + 1) / q)
    return np.asarray(out), short


def affine_interpolant(g: GridFunction, pieces: np.ndarray) -> np.ndarray:
    """Affine interpolation on each piece matching the one-sided limits of ``g``.

    One-sided limits at a piece end are read from the first and last cells
    whose centres lie inside the piece.
    """
    c = g.centers
    idx = np.searchsorted(pieces, c, side="right") - 1
    w = np.empty_like(g.values)
    for j in np.unique(idx):
        sel = np.nonzero(idx == j)[0]
        a, e = pieces[j], pieces[min(j + 1, pieces.size - 1)]
        left, right = g.values[sel[0]], g.values[sel[-1]]
        if sel.size == 1 or e <= a:
            w[sel] = left
            continue
        t = (c[sel] - a) / (e - a)
        w[sel] = (1 - t) * left + t * right
    return w


def affine_approximation_check(ledger: ConstantLedger, b: float, v: GridFunction, m: int, sigma: float = 0.0,
                   op: NormalizedOperator | None = None) -> dict:
    """Distance from ``g = L~_s^{m n0} v`` to its affine interpolant on a refinement of ``P_{m n0}``.

    Checks ``|g - w|_inf <= 2 C10 rho^{-m n0} |b| |v|_inf`` and ``|w|_inf <= |v|_inf``.
    """
    n0 = ledger.n0
    r = m * n0
    spectral = ledger.spectral(sigma)
    if op is None:
        op = grid_operator(spectral, n0, v.centers)
    g = v
    s = complex(sigma, b)
    for _ in range(m):
        g = GridFunction(op.apply(s, g), v.y_lo, v.y_hi)
    _, bk = image_partition(ledger.system.fmap, r)
    scale = ledger.rho ** (-r)
    pieces, short = refine_partition(np.asarray(bk, dtype=float), scale)
    w = affine_interpolant(g, pieces)
    dist = float(np.max(np.abs(g.values - w)))
    sup_v = float(np.max(np.abs(v.values)))
    bound = 2.0 * ledger.C10 * scale * abs(b) * sup_v
    return {"m": m, "r": r, "distance": dist, "bound": bound, "holds": bool(dist <= bound),
            "w_sup": float(np.max(np.abs(w))), "w_bounded": bool(np.max(np.abs(w)) <= sup_v * (1 + 1e-9)),
            "n_pieces": int(pieces.size - 1), "short_atoms": short}


__all__ = ["UniFailure", "SingularSolve", "TestFamily", "bv_test_family", "ly_fit", "verify_ly", "calibrate_ly",
           "l2_contraction", "l2_beta", "birkhoff_roof", "classify_H", "schedule", "normalized_ulam", "derive_A",
           "n_schedule", "ScanResult", "contraction_scan", "resolvent_norm", "resolvent_scan",
           "refine_partition", "affine_interpolant", "affine_approximation_check"]
