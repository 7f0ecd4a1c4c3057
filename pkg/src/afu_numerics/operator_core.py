"""Twisted transfer operators: pointwise branch sums, Ulam matrices and eigendata.

The twisted operator is ``L_s v = sum_h exp(s phi o h) |h'| v o h`` and the
normalized operator is ``L~_s v = L_s(f_sigma v) / (lambda_sigma f_sigma)``.
Pointwise evaluation enumerates inverse orbits level by level; Ulam
matrices act on cell averages and are used for spectra and long iterates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp

from .bv_space import GridFunction, as_callable
from .interval_map import MapSpec, RoofFunction, WorkingSystem, discontinuity_catalog

#: Default cap on leaves held in memory at once by a branch tree.
LEAF_CHUNK = 1 << 21
#: Default cap on the total number of leaves of one pointwise evaluation.
LEAF_BUDGET = 1 << 27


class BudgetExceeded(RuntimeError):
    """Branch enumeration would exceed the configured budget."""


@dataclass(frozen=True)
class TwistParam:
    """Twist ``s = sigma + i b``."""

    sigma: float
    b: float = 0.0

    @property
    def s(self) -> complex:
        return complex(self.sigma, self.b)

    def check(self, eps: float) -> None:
        if abs(self.sigma) >= eps:
            raise ValueError(f"|sigma| = {abs(self.sigma):.3g} is not below the twist radius {eps:.3g}")


def _twist(s) -> complex:
    if isinstance(s, TwistParam):
        return s.s
    return complex(s)


# ---------------------------------------------------------------------------
# branch trees
# ---------------------------------------------------------------------------


@dataclass
class Leaves:
    """Flat arrays describing the inverse orbits of a block of query points.

    ``point[i]`` is the query index, ``x[i] = h(y)``, ``logw[i] = log|h'(y)|``,
    ``phi[i] = phi_n(h(y))`` and ``word[i]`` encodes the branch word with the
    first inverse step as the most significant digit.  ``dphi[i]`` holds
    ``(phi_n o h)'(y)`` when requested, and ``cyl_lo, cyl_hi`` the ends of
    the range of ``h`` (an ``n``-cylinder) when requested.
    """

    point: np.ndarray
    x: np.ndarray
    logw: np.ndarray
    phi: np.ndarray
    word: np.ndarray
    dphi: np.ndarray | None = None
    cyl_lo: np.ndarray | None = None
    cyl_hi: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.size


def branch_count_estimate(fmap: MapSpec, n: int, n_points: int) -> int:
    """Upper estimate of leaves: points times the maximal branch overlap to the n."""
    imgs = fmap.images
    probe = np.linspace(fmap.y_lo, fmap.y_hi, 257)[:-1]
    overlap = max(1, int(np.max(np.sum((probe[:, None] >= imgs[:, 0]) & (probe[:, None] < imgs[:, 1]), axis=1))))
    return int(n_points) * overlap**n


def expand_tree(fmap: MapSpec, roof: RoofFunction, y: np.ndarray, n: int,
                with_dphi: bool = False, offset: int = 0, with_cyl: bool = False) -> Leaves:
    """Enumerate all inverse orbits of length ``n`` starting at the points ``y``."""
    y = np.asarray(y, dtype=float)
    nb = fmap.n_branches
    cols = {"point": np.arange(y.size) + offset, "x": y.copy(), "logw": np.zeros(y.size),
            "phi": np.zeros(y.size), "word": np.zeros(y.size, dtype=np.int64)}
    if with_dphi:
        cols["jac"] = np.ones(y.size)
        cols["dphi"] = np.zeros(y.size)
    if with_cyl:
        cols["cyl_lo"] = np.full(y.size, fmap.y_lo)
        cols["cyl_hi"] = np.full(y.size, fmap.y_hi)
    img = fmap.images
    for _ in range(n):
        parts = []
        x = cols["x"]
        for bi, br in enumerate(fmap.branches):
            m = (x >= img[bi, 0]) & (x < img[bi, 1])
            if not np.any(m):
                continue
            xn = br.inverse(x[m])
            xn = np.clip(xn, br.lo, np.nextafter(br.hi, -np.inf))
            d = br.deriv(xn)
            rec = {"point": cols["point"][m], "x": xn, "logw": cols["logw"][m] - np.log(np.abs(d)),
                   "phi": cols["phi"][m] + roof.phi(xn), "word": cols["word"][m] * nb + bi}
            if with_dphi:
                jn = cols["jac"][m] / d
                rec["jac"] = jn
                rec["dphi"] = cols["dphi"][m] + roof.dphi(xn) * jn
            if with_cyl:
                lo = br.inverse(np.maximum(cols["cyl_lo"][m], img[bi, 0]))
                hi = br.inverse(np.minimum(cols["cyl_hi"][m], img[bi, 1]))
                rec["cyl_lo"] = np.clip(np.minimum(lo, hi), br.lo, br.hi)
                rec["cyl_hi"] = np.clip(np.maximum(lo, hi), br.lo, br.hi)
            parts.append(rec)
        if not parts:
            cols = {key: val[:0] for key, val in cols.items()}
            break
        cols = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    return Leaves(cols["point"], cols["x"], cols["logw"], cols["phi"], cols["word"],
                  cols.get("dphi"), cols.get("cyl_lo"), cols.get("cyl_hi"))


def follow_word(fmap: MapSpec, roof: RoofFunction, digits, y: np.ndarray) -> dict:
    """Apply one inverse branch, given by its branch digits, to points ``y``.

    ``digits[0]`` is the first inverse step.  Returns ``x``, ``logw``,
    ``phi``, ``dphi`` and a ``valid`` mask marking points in the domain.
    """
    y = np.asarray(y, dtype=float)
    x = y.copy()
    logw = np.zeros(y.size)
    phi = np.zeros(y.size)
    jac = np.ones(y.size)
    dphi = np.zeros(y.size)
    valid = np.ones(y.size, dtype=bool)
    img = fmap.images
    for bi in digits:
        br = fmap.branches[bi]
        valid &= (x >= img[bi, 0]) & (x < img[bi, 1])
        xn = br.inverse(np.clip(x, img[bi, 0], img[bi, 1]))
        xn = np.clip(xn, br.lo, np.nextafter(br.hi, -np.inf))
        d = br.deriv(xn)
        logw = logw - np.log(np.abs(d))
        phi = phi + roof.phi(xn)
        jac = jac / d
        dphi = dphi + roof.dphi(xn) * jac
        x = xn
    return {"x": x, "logw": logw, "phi": phi, "dphi": dphi, "valid": valid}


def word_digits(code: int, n: int, nb: int) -> list[int]:
    """Branch digits of a word code, first inverse step first."""
    out = []
    for _ in range(n):
        out.append(int(code % nb))
        code //= nb
    return out[::-1]


def iter_leaves(fmap: MapSpec, roof: RoofFunction, y: np.ndarray, n: int, with_dphi: bool = False,
                chunk: int = LEAF_CHUNK, budget: int = LEAF_BUDGET, with_cyl: bool = False) -> Iterator[Leaves]:
    """Yield :class:`Leaves` for blocks of query points, bounding memory."""
    y = np.asarray(y, dtype=float)
    est = branch_count_estimate(fmap, n, y.size)
    if est > budget:
        raise BudgetExceeded(f"about {est:.3g} inverse branches needed for n={n} "
                             f"at {y.size} points (budget {budget:.3g})")
    per_point = max(1, est // max(1, y.size))
    block = max(1, chunk // per_point)
    for start in range(0, y.size, block):
        yield expand_tree(fmap, roof, y[start:start + block], n, with_dphi=with_dphi, offset=start,
                          with_cyl=with_cyl)


class BranchTree:
    """Inverse-branch tree of depth ``n`` above fixed query points.

    The tree depends only on the map and roof, so one instance serves every
    twist and every normalization.  Leaves are cached when they fit
    ``cache_limit``; otherwise they are regenerated block by block.
    """

    def __init__(self, system: WorkingSystem, n: int, points, with_dphi: bool = False,
                 cache_limit: int = 1 << 23, budget: int = LEAF_BUDGET):
        self.system = system
        self.n = n
        self.points = np.atleast_1d(np.asarray(points, dtype=float))
        self.with_dphi = with_dphi
        self.budget = budget
        est = branch_count_estimate(system.fmap, n, self.points.size)
        if est > budget:
            raise BudgetExceeded(f"about {est:.3g} inverse branches needed for n={n} (budget {budget:.3g})")
        self._cached = None
        if est <= cache_limit:
            self._cached = list(self._generate())

    def _generate(self) -> Iterator[Leaves]:
        return iter_leaves(self.system.fmap, self.system.roof, self.points, self.n,
                           with_dphi=self.with_dphi, budget=self.budget)

    def blocks(self) -> Iterator[Leaves]:
        if self._cached is not None:
            return iter(self._cached)
        return self._generate()

    @property
    def n_leaves(self) -> int:
        return sum(len(lv) for lv in self.blocks())


def _weighted_sum(leaves: Leaves, weights: np.ndarray, n_points: int) -> np.ndarray:
    if np.iscomplexobj(weights):
        re = np.bincount(leaves.point, weights=weights.real, minlength=n_points)
        im = np.bincount(leaves.point, weights=weights.imag, minlength=n_points)
        return re + 1j * im
    return np.bincount(leaves.point, weights=weights, minlength=n_points).astype(complex)


def apply_pointwise(fmap: MapSpec, roof: RoofFunction, s, n: int, v, at,
                    budget: int = LEAF_BUDGET) -> np.ndarray:
    """Evaluate ``L_s^n v`` at the query points by exact branch sums.

    Parameters
    ----------
    fmap, roof : MapSpec, RoofFunction
        The map and roof defining the operator.
    s : complex or TwistParam
        Twist ``sigma + i b``.
    n : int
        Power of the operator.
    v : callable or GridFunction
        Function evaluated at the leaves of the inverse-branch tree.
    at : array_like
        Query points in ``Y``.

    Returns
    -------
    ndarray of complex
        ``(L_s^n v)(at)``; the Birkhoff sum ``phi_n`` is accumulated along
        each inverse orbit.
    """
    s = _twist(s)
    at = np.atleast_1d(np.asarray(at, dtype=float))
    vf = as_callable(v)
    out = np.zeros(at.size, dtype=complex)
    for lv in iter_leaves(fmap, roof, at, n, budget=budget):
        w = np.exp(lv.logw + s * lv.phi) * vf(lv.x)
        out += _weighted_sum(lv, w, at.size)
    return out


# ---------------------------------------------------------------------------
# Ulam discretisation
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class UlamOperator:
    """Matrix of ``L_s`` acting on cell averages of a uniform grid of ``Y``."""

    matrix: sp.csr_matrix
    N: int
    s: complex
    y_lo: float
    y_hi: float

    @property
    def h(self) -> float:
        return (self.y_hi - self.y_lo) / self.N

    def apply(self, coeffs: np.ndarray, n: int = 1) -> np.ndarray:
        out = np.asarray(coeffs)
        for _ in range(n):
            out = self.matrix @ out
        return out

    def to_grid(self, coeffs: np.ndarray) -> GridFunction:
        return GridFunction(np.asarray(coeffs), self.y_lo, self.y_hi)


def _ulam_pieces(fmap: MapSpec, N: int):
    """Y-pieces on which each branch maps one grid cell into one grid cell.

    Returns arrays ``(a, c, src, dst, branch)`` of piece endpoints, source
    cell, destination cell and branch index.
    """
    key = ("ulam_pieces", N)
    if key in fmap._cache:
        return fmap._cache[key]
    h = fmap.length / N
    edges = fmap.y_lo + h * np.arange(N + 1)
    A, C, S, D, B = [], [], [], [], []
    for bi, br in enumerate(fmap.branches):
        ilo, ihi = br.image
        inner = edges[(edges > ilo) & (edges < ihi)]
        pre = br.inverse(inner) if inner.size else np.array([])
        dom_edges = edges[(edges > br.lo) & (edges < br.hi)]
        cuts = np.unique(np.concatenate([[br.lo, br.hi], dom_edges, pre]))
        cuts = cuts[(cuts >= br.lo) & (cuts <= br.hi)]
        a, c = cuts[:-1], cuts[1:]
        keep = c - a > 1e-16
        a, c = a[keep], c[keep]
        mid = 0.5 * (a + c)
        src = np.clip(((mid - fmap.y_lo) / h).astype(np.int64), 0, N - 1)
        dst = np.clip(((br.forward(mid) - fmap.y_lo) / h).astype(np.int64), 0, N - 1)
        A.append(a); C.append(c); S.append(src); D.append(dst); B.append(np.full(a.size, bi))
    out = tuple(np.concatenate(z) for z in (A, C, S, D, B))
    fmap._cache[key] = out
    return out


def assemble_ulam(fmap: MapSpec, roof: RoofFunction, s, N: int) -> UlamOperator:
    """Ulam matrix of ``L_s`` on ``N`` cells.

    Entry ``(i, j)`` equals ``(1/|cell_i|) * integral`` of ``exp(s phi(y))``
    over the part of ``cell_j`` that is mapped into ``cell_i``; by the change
    of variables ``x = F(y)`` this is the cell average over ``cell_i`` of
    ``L_s 1_{cell_j}``.  Each piece is integrated with 8-point Gauss-Legendre.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    s = _twist(s)
    a, c, src, dst, _ = _ulam_pieces(fmap, N)
    h = fmap.length / N
    if s == 0:
        vals = (c - a) / h
    else:
        half = 0.5 * (c - a)
        mid = 0.5 * (c + a)
        nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = (np.exp(s * roof.phi(nodes)) @ _GL_WEIGHTS) * half / h
    if np.isrealobj(vals) or np.all(np.imag(vals) == 0):
        vals = np.real(vals)
    mat = sp.csr_matrix((vals, (dst, src)), shape=(N, N))
    mat.sum_duplicates()
    return UlamOperator(mat, N, s, fmap.y_lo, fmap.y_hi)


# ---------------------------------------------------------------------------
# eigendata
# ---------------------------------------------------------------------------


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(msg)
        self.residual = residual


@dataclass
class SpectralData:
    """Leading eigendata of ``L_sigma`` on a grid.

    ``f`` is normalized by ``int f dLeb = 1``; ``Lam = lambda_{2 sigma}^{1/2} / lambda_sigma``.
    """

    sigma: float
    lam: float
    f: GridFunction
    inv_f: GridFunction
    Lam: float
    residual: float
    N: int
    iterations: int
    system: WorkingSystem | None = field(default=None, repr=False)
    lam2: float | None = None

    @property
    def sup_inf(self) -> float:
        vals = self.f.values.real
        return float(np.max(vals) / np.min(vals))

    def f_eval(self, x) -> np.ndarray:
        return self.f.evaluate(x).real

    def header(self) -> dict:
        return {"sigma": self.sigma, "lambda": self.lam, "Lambda": self.Lam,
                "residual": self.residual, "N": self.N, "iterations": self.iterations}

    def to_csv(self) -> str:
        centers = self.f.centers
        lines = ["x,f"] + [f"{x:.17g},{v:.17g}" for x, v in zip(centers, self.f.values.real)]
        return "\n".join(lines) + "\n"


def power_iteration(mat: sp.spmatrix, h: float, tol: float = 1e-12, max_iter: int = 10_000,
                    start: np.ndarray | None = None):
    """Dominant eigenpair of a non-negative matrix by power iteration.

    Stops once successive Rayleigh quotients differ by less than ``tol`` and
    the L1 residual is below ``tol``; the vector is normalized to unit
    integral with cell width ``h``.
    """
    n = mat.shape[0]
    f = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    f /= np.sum(f) * h
    lam_old = np.inf
    res = np.inf
    for it in range(1, max_iter + 1):
        g = mat @ f
        lam = float(np.dot(g, f) / np.dot(f, f))
        res = float(np.sum(np.abs(g - lam * f)) * h)
        mass = np.sum(g) * h
        if mass <= 0:
            raise ConvergenceError("power iteration collapsed to zero", res)
        f = g / mass
        if abs(lam - lam_old) < tol and res < tol:
            break
        lam_old = lam
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps", res)
    g = mat @ f
    lam = float(np.dot(g, f) / np.dot(f, f))
    res = float(np.sum(np.abs(g - lam * f)) * h)
    return lam, f, res, it


def _break_points(fmap: MapSpec, depth: int = 8) -> np.ndarray:
    cat = discontinuity_catalog(fmap, depth)
    pts = cat.points_up_to(depth)
    return pts[(pts > fmap.y_lo) & (pts < fmap.y_hi)]


def eigendata(system: WorkingSystem, sigma: float, N: int, with_double: bool = True,
              tol: float = 1e-12, max_iter: int = 10_000) -> SpectralData:
    """Leading eigenvalue and eigenfunction of ``L_sigma`` by Ulam power iteration.

    Parameters
    ----------
    system : WorkingSystem
        Map and roof (usually the expanding iterate).
    sigma : float
        Real twist.
    N : int
        Number of Ulam cells.
    with_double : bool
        Also solve at ``2 sigma`` to report ``Lambda_sigma``.

    Returns
    -------
    SpectralData
        ``f`` is stored as cell averages; pointwise evaluation interpolates
        linearly between cell centres except across image-partition points,
        where ``f`` may jump.
    """
    fmap, roof = system.fmap, system.roof
    U = assemble_ulam(fmap, roof, sigma, N)
    lam, f, res, its = power_iteration(U.matrix, U.h, tol=tol, max_iter=max_iter)
    if np.min(f) <= 0:
        raise ConvergenceError("eigenfunction is not positive on every cell", res)
    breaks = _break_points(fmap)
    fg = GridFunction(f, fmap.y_lo, fmap.y_hi, breaks=breaks)
    inv = GridFunction(1.0 / f, fmap.y_lo, fmap.y_hi, breaks=breaks)
    lam2 = None
    Lam = 1.0
    if with_double and sigma != 0.0:
        U2 = assemble_ulam(fmap, roof, 2.0 * sigma, N)
        lam2, _, _, _ = power_iteration(U2.matrix, U2.h, tol=tol, max_iter=max_iter, start=f)
        Lam = float(np.sqrt(lam2) / lam)
    elif with_double:
        lam2 = lam
        Lam = float(np.sqrt(lam) / lam)
    return SpectralData(sigma, lam, fg, inv, Lam, res, N, its, system=system, lam2=lam2)


# ---------------------------------------------------------------------------
# normalized operators
# ---------------------------------------------------------------------------


def normalized_apply(spectral: SpectralData, s, n: int, v, at, budget: int = LEAF_BUDGET) -> np.ndarray:
    """Evaluate ``L~_s^n v = L_s^n(f_sigma v) / (lambda_sigma^n f_sigma)`` at points.

    ``spectral.sigma`` must equal ``Re s``.
    """
    s = _twist(s)
    if abs(s.real - spectral.sigma) > 1e-14:
        raise ValueError("spectral data computed at a different sigma")
    system = spectral.system
    at = np.atleast_1d(np.asarray(at, dtype=float))
    vf = as_callable(v)
    out = np.zeros(at.size, dtype=complex)
    lognorm = -n * np.log(spectral.lam)
    for lv in iter_leaves(system.fmap, system.roof, at, n, budget=budget):
        w = np.exp(lv.logw + s * lv.phi + lognorm) * spectral.f_eval(lv.x) * vf(lv.x)
        out += _weighted_sum(lv, w, at.size)
    return out / spectral.f_eval(at)


class NormalizedOperator:
    """Evaluate ``L~_s^n`` at the points of a :class:`BranchTree`.

    Leaf values of ``f_sigma`` are cached per tree block, so repeated
    applications with different twists ``s = sigma + i b`` and inputs cost one
    pass over the leaves each.
    """

    def __init__(self, spectral: SpectralData, tree: BranchTree):
        if tree.system is not spectral.system:
            raise ValueError("tree and spectral data belong to different systems")
        self.spectral = spectral
        self.tree = tree
        self.n = tree.n
        self.points = tree.points
        self._f_leaf = None
        if tree._cached is not None:
            self._f_leaf = [spectral.f_eval(lv.x) for lv in tree._cached]
        self._f_at = spectral.f_eval(self.points)

    @classmethod
    def build(cls, spectral: SpectralData, n: int, points, **kw) -> "NormalizedOperator":
        return cls(spectral, BranchTree(spectral.system, n, points, **kw))

    def blocks(self) -> Iterator[tuple[Leaves, np.ndarray]]:
        if self._f_leaf is not None:
            yield from zip(self.tree._cached, self._f_leaf)
            return
        for lv in self.tree.blocks():
            yield lv, self.spectral.f_eval(lv.x)

    def weights(self, lv: Leaves, f_leaf: np.ndarray, s) -> np.ndarray:
        s = _twist(s)
        if abs(s.real - self.spectral.sigma) > 1e-14:
            raise ValueError("spectral data computed at a different sigma")
        lognorm = -self.n * np.log(self.spectral.lam)
        if s.imag == 0.0:
            return np.exp(lv.logw + s.real * lv.phi + lognorm) * f_leaf
        return np.exp(lv.logw + s * lv.phi + lognorm) * f_leaf

    def apply(self, s, v, leaf_factor: Callable[[Leaves], np.ndarray] | None = None) -> np.ndarray:
        """``L~_s^n v`` at the tree points; ``leaf_factor`` multiplies leaf values."""
        vf = as_callable(v)
        out = np.zeros(self.points.size, dtype=complex)
        for lv, fl in self.blocks():
            w = self.weights(lv, fl, s) * vf(lv.x)
            if leaf_factor is not None:
                w = w * leaf_factor(lv)
            out += _weighted_sum(lv, w, self.points.size)
        return out / self._f_at


# ---------------------------------------------------------------------------
# continuity and branch weights
# ---------------------------------------------------------------------------


def continuity_modulus(system: WorkingSystem, sigma_pairs, b_pairs, test_family, N: int = 1024) -> float:
    """Empirical ``sup ||(L_{s1} - L_{s2}) v||_BV / |sigma1 - sigma2|`` over a test family.

    ``||w||_BV = Var w + ||w||_1`` is evaluated on ``N`` grid points from
    pointwise branch sums.  Pairs with equal twists contribute 0.
    """
    from .bv_space import var as _var

    fmap, roof = system.fmap, system.roof
    pts = fmap.y_lo + (np.arange(N) + 0.5) * fmap.length / N
    best = 0.0
    for (s1, s2), (b1, b2) in zip(sigma_pairs, b_pairs):
        ds = abs(s1 - s2)
        if ds == 0.0:
            continue
        for v in test_family:
            w = (apply_pointwise(fmap, roof, complex(s1, b1), 1, v, pts)
                 - apply_pointwise(fmap, roof, complex(s2, b2), 1, v, pts))
            g = GridFunction(w, fmap.y_lo, fmap.y_hi)
            bv = _var(g) + float(np.mean(np.abs(w)) * fmap.length)
            best = max(best, bv / ds)
    return best


def _max_weight_tree(fmap: MapSpec, roof: RoofFunction, sigma: float, n: int, x: np.ndarray,
                     budget: int) -> float:
    best = -np.inf
    for lv in iter_leaves(fmap, roof, x, n, budget=budget):
        if len(lv):
            best = max(best, float(np.max(lv.logw + sigma * lv.phi)))
    return best


def branch_weight_bound(system: WorkingSystem, sigma: float, n: int, lam: float,
                        n_samples: int = 257, budget: int = 1 << 24) -> dict:
    """``sup_{h, x} lambda_sigma^{-n} |h'(x)| exp(sigma phi_n(h x))`` over sampled ``x``.

    Exact enumeration is used when the tree fits ``budget``; otherwise the
    one-step supremum is raised to the ``n``-th power, which is an upper bound
    by submultiplicativity of the weights along inverse orbits.

    Returns
    -------
    dict
        ``value``, ``bound`` (``rho^{-3n}``), ``passes`` and ``method``.
    """
    fmap, roof = system.fmap, system.roof
    rho = fmap.rho0() ** 0.25
    x = np.linspace(fmap.y_lo, fmap.y_hi, n_samples)[:-1]
    try:
        logv = _max_weight_tree(fmap, roof, sigma, n, x, budget) - n * np.log(lam)
        method = "enumeration"
    except BudgetExceeded:
        one = _max_weight_tree(fmap, roof, sigma, 1, x, budget) - np.log(lam)
        logv = n * one
        method = "submultiplicative"
    value = float(np.exp(logv))
    bound = rho ** (-3 * n)
    return {"value": value, "bound": bound, "passes": bool(value <= bound), "method": method,
            "sigma": sigma, "n": n}
