"""Piecewise expanding interval maps, their branches and roof functions.

A map is stored as an ordered tuple of monotone branches.  Each branch is a
composition of elementary C² pieces, which makes iterates ``F^m`` cheap to
build: the branches of ``F^m`` are compositions of base branches restricted
to the corresponding cylinders.

All intervals are half-open ``[a, b)``; a point on a boundary between two
branch domains belongs to the branch on its right.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ArrayFn = Callable[[np.ndarray], np.ndarray]

#: Expansion threshold above which no iterate is taken.
ITERATE_THRESHOLD = 2.0 ** (4.0 / 3.0)
#: Absolute tolerance of the monotone root solver.
ROOT_TOL = 1e-14
#: Cylinders shorter than this are treated as empty.
MIN_CYLINDER = 1e-15


class MapError(ValueError):
    """Raised for invalid map parameters or failed structural checks."""


# ---------------------------------------------------------------------------
# elementary pieces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Piece:
    """Elementary monotone C² map on a closed interval.

    ``inv`` inverts ``f`` on its image; it may be analytic or numeric.
    """

    f: ArrayFn
    df: ArrayFn
    d2f: ArrayFn
    inv: ArrayFn
    name: str = "piece"


def affine_piece(slope: float, offset: float) -> Piece:
    """The affine map ``x -> slope * x + offset``."""

    def f(x):
        return slope * np.asarray(x, dtype=float) + offset

    def df(x):
        return np.full(np.shape(x), float(slope))

    def d2f(x):
        return np.zeros(np.shape(x))

    def inv(y):
        return (np.asarray(y, dtype=float) - offset) / slope

    return Piece(f, df, d2f, inv, name=f"affine({slope:g},{offset:g})")


def monotone_inverse(
    f: ArrayFn,
    df: ArrayFn,
    y: np.ndarray,
    lo: np.ndarray | float,
    hi: np.ndarray | float,
    tol: float = ROOT_TOL,
    max_iter: int = 200,
) -> np.ndarray:
    """Solve ``f(x) = y`` for increasing ``f`` on the bracket ``[lo, hi]``.

    Safeguarded Newton iteration: a Newton step that leaves the current
    bracket is replaced by bisection, so the bracket width shrinks at least
    geometrically and the result is accurate to ``tol``.
    """
    y = np.asarray(y, dtype=float)
    a = np.broadcast_to(np.asarray(lo, dtype=float), y.shape).copy()
    c = np.broadcast_to(np.asarray(hi, dtype=float), y.shape).copy()
    x = 0.5 * (a + c)
    for _ in range(max_iter):
        fx = f(x) - y
        below = fx < 0
        a = np.where(below, x, a)
        c = np.where(below, c, x)
        slope = df(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - fx / slope
        ok = (newton > a) & (newton < c) & np.isfinite(newton)
        x_new = np.where(ok, newton, 0.5 * (a + c))
        step = np.abs(x_new - x)
        x = x_new
        if np.all((step < 0.25 * tol) | (c - a < tol)):
            break
    return x


def mp_left_piece(alpha: float) -> Piece:
    """Left branch ``x -> x (1 + (2x)^alpha)`` of the intermittent map on ``[0, 1/2]``."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return x * (1.0 + (2.0 * x) ** alpha)

    def df(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + (1.0 + alpha) * (2.0 * x) ** alpha

    def d2f(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 2.0 * alpha * (1.0 + alpha) * (2.0 * x) ** (alpha - 1.0)
        return np.where(x > 0, out, 0.0 if alpha >= 1 else np.inf)

    if alpha == 1.0:

        def inv(y):
            y = np.asarray(y, dtype=float)
            return (np.sqrt(1.0 + 8.0 * y) - 1.0) / 4.0

    else:

        def inv(y):
            y = np.asarray(y, dtype=float)
            return monotone_inverse(f, df, y, 0.5 * y, y)

    return Piece(f, df, d2f, inv, name=f"mp_left({alpha:g})")


# ---------------------------------------------------------------------------
# branches and maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    """Monotone C² branch on the half-open domain ``[lo, hi)``.

    The branch is the composition ``pieces[-1] o ... o pieces[0]``.
    """

    lo: float
    hi: float
    pieces: tuple[Piece, ...]
    label: tuple = ()
    orientation: int = 1

    def forward(self, x):
        out = np.asarray(x, dtype=float)
        for p in self.pieces:
            out = p.f(out)
        return out

    def deriv(self, x):
        z = np.asarray(x, dtype=float)
        d = np.ones(z.shape)
        for p in self.pieces:
            d = d * p.df(z)
            z = p.f(z)
        return d

    def derivs(self, x):
        """Return ``(F(x), F'(x), F''(x))`` by the chain rule."""
        z = np.asarray(x, dtype=float)
        d = np.ones(z.shape)
        dd = np.zeros(z.shape)
        for p in self.pieces:
            g1 = p.df(z)
            dd = p.d2f(z) * d * d + g1 * dd
            d = g1 * d
            z = p.f(z)
        return z, d, dd

    def second_deriv(self, x):
        return self.derivs(x)[2]

    def inverse(self, y):
        out = np.asarray(y, dtype=float)
        for p in reversed(self.pieces):
            out = p.inv(out)
        return out

    @property
    def image(self) -> tuple[float, float]:
        a = float(self.forward(self.lo))
        b = float(self.forward(self.hi))
        return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class MapSpec:
    """A piecewise expanding map of ``Y = [y_lo, y_hi)``.

    ``power`` records that the map is the ``power``-th iterate of ``base``.
    ``hole_mass`` is the Lebesgue measure of ``Y`` not covered by branch
    domains (non-zero only for truncated first-return maps).
    """

    y_lo: float
    y_hi: float
    branches: tuple[Branch, ...]
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)
    power: int = 1
    base: "MapSpec | None" = field(default=None, compare=False, repr=False)
    hole_mass: float = 0.0
    analytic_inverse: bool = False
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        los = np.array([b.lo for b in self.branches])
        if np.any(np.diff(los) <= 0):
            raise MapError("branch domains must be sorted and disjoint")
        object.__setattr__(self, "_los", los)
        object.__setattr__(self, "_his", np.array([b.hi for b in self.branches]))
        imgs = np.array([b.image for b in self.branches])
        object.__setattr__(self, "_img_lo", imgs[:, 0])
        object.__setattr__(self, "_img_hi", imgs[:, 1])

    # -- basic geometry --------------------------------------------------
    @property
    def length(self) -> float:
        return self.y_hi - self.y_lo

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def images(self) -> np.ndarray:
        """Array of shape ``(n_branches, 2)`` holding branch images."""
        return np.column_stack([self._img_lo, self._img_hi])

    @property
    def domains(self) -> np.ndarray:
        return np.column_stack([self._los, self._his])

    def branch_index(self, x) -> np.ndarray:
        """Index of the branch whose domain contains ``x``; -1 in holes."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self._los, x, side="right") - 1
        idx = np.clip(idx, 0, self.n_branches - 1)
        inside = (x >= self._los[idx]) & (x < self._his[idx])
        return np.where(inside, idx, -1)

    def forward(self, x) -> np.ndarray:
        """Evaluate ``F`` pointwise (NaN in holes)."""
        x = np.asarray(x, dtype=float)
        idx = self.branch_index(x)
        out = np.full(x.shape, np.nan)
        for i in np.unique(idx):
            if i < 0:
                continue
            m = idx == i
            out[m] = self.branches[i].forward(x[m])
        return out

    def deriv(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = self.branch_index(x)
        out = np.full(x.shape, np.nan)
        for i in np.unique(idx):
            if i < 0:
                continue
            m = idx == i
            out[m] = self.branches[i].deriv(x[m])
        return out

    def sample_branch(self, i: int, n: int = 513) -> np.ndarray:
        """Sample points in the closed domain of branch ``i``."""
        b = self.branches[i]
        return np.linspace(b.lo, b.hi, n)

    def rho0(self, n_samples: int = 257) -> float:
        """Minimal expansion ``inf |F'|`` over sampled domain points."""
        key = ("rho0", n_samples)
        if key not in self._cache:
            self._cache[key] = float(min(np.min(np.abs(b.deriv(np.linspace(b.lo, b.hi, n_samples))))
                                         for b in self.branches))
        return self._cache[key]

    def adler(self, n_samples: int = 257) -> float:
        """Adler constant ``sup |F''| / F'^2`` over sampled domain points."""
        key = ("adler", n_samples)
        if key not in self._cache:
            best = 0.0
            for b in self.branches:
                _, d, dd = b.derivs(np.linspace(b.lo, b.hi, n_samples))
                best = max(best, float(np.max(np.abs(dd) / d**2)))
            self._cache[key] = best
        return self._cache[key]

    def min_image_length(self) -> float:
        return float(np.min(self._img_hi - self._img_lo))

    def is_markov(self, depth: int = 6, tol: float = 1e-12) -> bool:
        """True when no catalog point up to ``depth`` lies in the interior of ``Y``."""
        cat = discontinuity_catalog(self, depth)
        return all(len(cat.interior(j, tol)) == 0 for j in cat.by_depth)


# ---------------------------------------------------------------------------
# construction of the built-in families
# ---------------------------------------------------------------------------


def _shifted_beta(beta: float, alpha: float) -> MapSpec:
    if not beta > 1.0:
        raise MapError(f"shifted_beta needs beta > 1, got {beta}")
    if not 0.0 <= alpha < 1.0:
        raise MapError(f"shifted_beta needs alpha in [0, 1), got {alpha}")
    branches = []
    j = 0
    while True:
        lo = max(0.0, (j - alpha) / beta)
        hi = min(1.0, (j + 1 - alpha) / beta)
        if lo >= 1.0:
            break
        if hi - lo > MIN_CYLINDER:
            branches.append(Branch(lo, hi, (affine_piece(beta, alpha - j),), label=(j,)))
        j += 1
    return MapSpec(0.0, 1.0, tuple(branches), family="shifted_beta",
                   params={"beta": beta, "alpha": alpha}, analytic_inverse=True)


def _mp_first_return(alpha: float, gamma: float, t_max: int = 40, tail_tol: float = 0.05,
                     eps0: float = 0.05, roof_sup: float = 2.0) -> MapSpec:
    """First-return map to ``[1/2, 1)`` of the non-Markov intermittent map."""
    if not alpha > 0:
        raise MapError(f"mp_first_return needs alpha > 0, got {alpha}")
    if not 0.5 < gamma <= 1.0:
        raise MapError(f"mp_first_return needs gamma in (1/2, 1], got {gamma}")
    left = mp_left_piece(alpha)
    right = affine_piece(2.0 * gamma, -gamma)
    # preimages x_tau of 1/2 under the left branch: f_L^{tau-1}[x_tau, x_{tau-1}) = [1/2, 1)
    xs = [1.0, 0.5]
    for _ in range(t_max):
        xs.append(float(left.inv(np.array(xs[-1]))))
    branches = []
    # tau = 1: f_R(y) >= 1/2
    lo1 = 0.5 * (1.0 + 0.5 / gamma)
    branches.append(Branch(lo1, 1.0, (right,), label=(1,)))
    for tau in range(2, t_max + 1):
        lo = 0.5 * (1.0 + xs[tau] / gamma)
        hi = 0.5 * (1.0 + xs[tau - 1] / gamma)
        branches.append(Branch(lo, hi, (right,) + (left,) * (tau - 1), label=(tau,)))
    branches.sort(key=lambda b: b.lo)
    hole = branches[0].lo - 0.5
    # tail sum: dropped branches carry at most the dropped Lebesgue mass
    # (relative to |Y| = 1/2) times the distortion and the roof weight.
    tail = (hole / 0.5) * np.exp(eps0 * roof_sup)
    if tail > tail_tol:
        raise MapError(
            f"mp_first_return truncation at t_max={t_max} leaves tail weight {tail:.3g} > {tail_tol}")
    return MapSpec(0.5, 1.0, tuple(branches), family="mp_first_return",
                   params={"alpha": alpha, "gamma": gamma, "t_max": t_max}, hole_mass=hole)


def build_map(family_tag: str, params: dict | None = None) -> MapSpec:
    """Build one of the built-in map families.

    Parameters
    ----------
    family_tag : str
        ``"shifted_beta"`` (``x -> beta x + alpha mod 1``), ``"doubling"``,
        ``"golden_beta"`` or ``"mp_first_return"`` (first return of the
        intermittent map to ``[1/2, 1)``).
    params : dict
        Family parameters: ``beta, alpha`` or ``alpha, gamma, t_max, tail_tol``.

    Returns
    -------
    MapSpec
        The map with its branch list in increasing domain order.
    """
    params = dict(params or {})
    if family_tag == "doubling":
        return _shifted_beta(2.0, 0.0)
    if family_tag == "golden_beta":
        return _shifted_beta((1.0 + np.sqrt(5.0)) / 2.0, 0.0)
    if family_tag == "shifted_beta":
        return _shifted_beta(float(params.get("beta", 2.0)), float(params.get("alpha", 0.0)))
    if family_tag == "mp_first_return":
        return _mp_first_return(
            float(params.get("alpha", 1.0)), float(params.get("gamma", 0.8)),
            t_max=int(params.get("t_max", 40)), tail_tol=float(params.get("tail_tol", 0.05)),
            eps0=float(params.get("eps0", 0.05)))
    raise MapError(f"unknown family {family_tag!r}")


def compose_branch(first: Branch, second: Branch) -> Branch | None:
    """Branch of ``second o first`` restricted to ``first^{-1}(dom second)``."""
    ilo, ihi = first.image
    a, c = max(ilo, second.lo), min(ihi, second.hi)
    if c - a <= MIN_CYLINDER:
        return None
    ends = np.sort(first.inverse(np.array([a, c])))
    lo = max(first.lo, float(ends[0]))
    hi = min(first.hi, float(ends[1]))
    if hi - lo <= MIN_CYLINDER:
        return None
    return Branch(lo, hi, first.pieces + second.pieces, label=first.label + second.label,
                  orientation=first.orientation * second.orientation)


def iterate_map(fmap: MapSpec, m: int) -> MapSpec:
    """The ``m``-th iterate ``F^m`` with branches indexed by words."""
    if m < 1:
        raise MapError("iterate power must be >= 1")
    if m == 1:
        return fmap
    key = ("iterate", m)
    if key in fmap._cache:
        return fmap._cache[key]
    current = list(fmap.branches)
    for _ in range(m - 1):
        nxt = []
        for br in current:
            for b in fmap.branches:
                c = compose_branch(br, b)
                if c is not None:
                    nxt.append(c)
        current = nxt
    current.sort(key=lambda b: b.lo)
    hole = fmap.length - sum(b.hi - b.lo for b in current)
    out = MapSpec(fmap.y_lo, fmap.y_hi, tuple(current), family=fmap.family, params=fmap.params,
                  power=fmap.power * m, base=fmap, hole_mass=max(0.0, hole),
                  analytic_inverse=fmap.analytic_inverse)
    fmap._cache[key] = out
    return out


def smallest_expanding_power(fmap: MapSpec, threshold: float = ITERATE_THRESHOLD) -> int:
    """Smallest ``m`` with ``inf |(F^m)'| > threshold``."""
    rho0 = fmap.rho0()
    if rho0 <= 1.0:
        raise MapError(f"map is not expanding: inf|F'| = {rho0:.6g}")
    m = 1
    while iterate_map(fmap, m).rho0() <= threshold:
        m += 1
    return m


# ---------------------------------------------------------------------------
# roof functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoofFunction:
    """Roof ``phi >= 1`` with derivative and tail exponent ``eps0``."""

    kind: str
    phi: ArrayFn
    dphi: ArrayFn
    eps0: float = 0.05
    params: dict = field(default_factory=dict, compare=False)
    sup: float = 1.0
    inf: float = 1.0

    def __call__(self, x):
        return self.phi(x)

    @property
    def is_constant(self) -> bool:
        return self.kind == "const"


def make_roof(kind: str, params: dict | None = None, eps0: float = 0.05,
              y_range: tuple[float, float] = (0.0, 1.0)) -> RoofFunction:
    """Build a roof function.

    Kinds: ``const`` (``c``), ``one_plus_x_sq`` (``1 + x^2``), ``linear``
    (``a + c x``) and ``table`` (piecewise-linear interpolation of ``values``
    on a uniform grid of ``Y``).
    """
    params = dict(params or {})
    y0, y1 = y_range
    if kind == "const":
        c = float(params.get("c", 1.0))

        def phi(x):
            return np.full(np.shape(x), c)

        def dphi(x):
            return np.zeros(np.shape(x))

    elif kind == "one_plus_x_sq":

        def phi(x):
            x = np.asarray(x, dtype=float)
            return 1.0 + x * x

        def dphi(x):
            return 2.0 * np.asarray(x, dtype=float)

    elif kind == "linear":
        a = float(params.get("a", 1.0))
        c = float(params.get("c", 1.0))

        def phi(x):
            return a + c * np.asarray(x, dtype=float)

        def dphi(x):
            return np.full(np.shape(x), c)

    elif kind == "table":
        vals = np.asarray(params["values"], dtype=float)
        nodes = np.linspace(y0, y1, len(vals))
        slopes = np.diff(vals) / np.diff(nodes)

        def phi(x):
            return np.interp(np.asarray(x, dtype=float), nodes, vals)

        def dphi(x):
            i = np.clip(np.searchsorted(nodes, np.asarray(x, dtype=float), side="right") - 1,
                        0, len(slopes) - 1)
            return slopes[i]

    else:
        raise MapError(f"unknown roof kind {kind!r}")
    xs = np.linspace(y0, y1, 4097)
    vals_s = phi(xs)
    if np.min(vals_s) < 1.0 - 1e-12:
        raise MapError(f"roof must satisfy phi >= 1, min sampled value {np.min(vals_s):.4g}")
    return RoofFunction(kind, phi, dphi, eps0=eps0, params=params,
                        sup=float(np.max(vals_s)), inf=float(np.min(vals_s)))


def iterated_roof(roof: RoofFunction, fmap: MapSpec, m: int) -> RoofFunction:
    """Birkhoff sum ``phi_m = sum_{j<m} phi o F^j`` as a roof for ``F^m``."""
    if m == 1:
        return roof

    def phi(x):
        z = np.asarray(x, dtype=float)
        out = np.zeros(z.shape)
        for j in range(m):
            out = out + roof.phi(z)
            if j < m - 1:
                z = fmap.forward(z)
        return out

    def dphi(x):
        z = np.asarray(x, dtype=float)
        out = np.zeros(z.shape)
        jac = np.ones(z.shape)
        for j in range(m):
            out = out + roof.dphi(z) * jac
            if j < m - 1:
                jac = jac * fmap.deriv(z)
                z = fmap.forward(z)
        return out

    return RoofFunction(f"{roof.kind}^({m})", phi, dphi, eps0=roof.eps0,
                        params={"base": roof.kind, "power": m, **roof.params},
                        sup=m * roof.sup, inf=m * roof.inf)


@dataclass(frozen=True)
class WorkingSystem:
    """A map and roof after replacing ``(F, phi)`` by ``(F^m, phi_m)``."""

    fmap: MapSpec
    roof: RoofFunction
    power: int
    base_map: MapSpec
    base_roof: RoofFunction


def working_system(fmap: MapSpec, roof: RoofFunction, power: int | None = None) -> WorkingSystem:
    """Pass to the smallest iterate with ``rho0 > 2^{4/3}`` (or a given power)."""
    m = smallest_expanding_power(fmap) if power is None else int(power)
    return WorkingSystem(iterate_map(fmap, m), iterated_roof(roof, fmap, m), m, fmap, roof)


# ---------------------------------------------------------------------------
# inverse branches and catalogs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InverseBranch:
    """Inverse branch ``h: F^n(a) -> a`` of a cylinder ``a`` of depth ``n``."""

    word: tuple
    domain: tuple[float, float]
    branch: Branch

    def __call__(self, y):
        return self.branch.inverse(y)

    def deriv(self, y):
        return 1.0 / np.abs(self.branch.deriv(self.branch.inverse(y)))

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y >= self.domain[0]) & (y < self.domain[1])


def inverse_branches(fmap: MapSpec, n: int, at) -> list[InverseBranch]:
    """Inverse branches of ``F^n`` whose domain contains a point or meets an interval.

    ``at`` is either a float or a pair ``(a, b)`` describing ``[a, b)``.
    """
    if n < 1:
        raise MapError("n must be >= 1")
    itm = iterate_map(fmap, n)
    out = []
    for br in itm.branches:
        lo, hi = br.image
        if np.ndim(at) == 0:
            ok = lo <= float(at) < hi
        else:
            a, b = float(at[0]), float(at[1])
            ok = max(a, lo) < min(b, hi)
        if ok:
            out.append(InverseBranch(br.label, (lo, hi), br))
    return out


@dataclass(frozen=True)
class DiscontinuityCatalog:
    """Image-partition boundary points ``X'_j`` with their depth tags."""

    by_depth: dict
    y_lo: float
    y_hi: float

    @property
    def n1(self) -> int:
        return len(self.by_depth.get(1, ()))

    @property
    def depth(self) -> int:
        return max(self.by_depth) if self.by_depth else 0

    def interior(self, j: int, tol: float = 1e-12) -> np.ndarray:
        pts = np.asarray(self.by_depth.get(j, ()), dtype=float)
        return pts[(pts > self.y_lo + tol) & (pts < self.y_hi - tol)]

    def points_up_to(self, k: int) -> np.ndarray:
        """Sorted union ``X_k`` of the depth sets ``j <= k``."""
        pts = [np.asarray(self.by_depth[j]) for j in self.by_depth if j <= k]
        if not pts:
            return np.array([])
        return _unique_tol(np.concatenate(pts))

    def tagged_points(self, j_min: int = 1, j_max: int | None = None, interior: bool = True):
        """Pairs ``(x, j)`` for all depths in range, one entry per depth tag."""
        j_max = self.depth if j_max is None else j_max
        out = []
        for j in range(j_min, j_max + 1):
            pts = self.interior(j) if interior else np.asarray(self.by_depth.get(j, ()))
            out.extend((float(x), j) for x in pts)
        return out

    def to_csv(self) -> str:
        lines = ["point,depth"]
        for j in sorted(self.by_depth):
            lines.extend(f"{x:.17g},{j}" for x in self.by_depth[j])
        return "\n".join(lines) + "\n"


def _unique_tol(x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=float))
    if x.size == 0:
        return x
    keep = np.concatenate([[True], np.diff(x) > tol])
    return x[keep]


def _snap(x: np.ndarray, y_lo: float, y_hi: float, tol: float = 1e-12) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), y_lo, y_hi)
    x = np.where(np.abs(x - y_lo) < tol, y_lo, x)
    return np.where(np.abs(x - y_hi) < tol, y_hi, x)


def _closed_images(fmap: MapSpec, pts: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """Images of points under every branch whose closed domain contains them.

    Points on a boundary between branches have two one-sided images; both are
    kept because either may carry a discontinuity forward.
    """
    out = []
    for b in fmap.branches:
        m = (pts >= b.lo - tol) & (pts <= b.hi + tol)
        if np.any(m):
            out.append(b.forward(np.clip(pts[m], b.lo, b.hi)))
    if not out:
        return np.array([])
    y = np.concatenate(out)
    y = y[(y >= fmap.y_lo - tol) & (y <= fmap.y_hi + tol)]
    return _unique_tol(_snap(y, fmap.y_lo, fmap.y_hi))


def discontinuity_catalog(fmap: MapSpec, j_max: int) -> DiscontinuityCatalog:
    """``X'_1`` = branch image endpoints and ``X'_j = F(X'_{j-1})`` for ``j <= j_max``."""
    key = ("catalog", j_max)
    if key in fmap._cache:
        return fmap._cache[key]
    x1 = _unique_tol(_snap(fmap.images.ravel(), fmap.y_lo, fmap.y_hi))
    by_depth = {1: tuple(x1)}
    cur = x1
    for j in range(2, j_max + 1):
        cur = _closed_images(fmap, cur)
        by_depth[j] = tuple(cur)
    cat = DiscontinuityCatalog(by_depth, fmap.y_lo, fmap.y_hi)
    fmap._cache[key] = cat
    return cat


def image_partition(fmap: MapSpec, k: int, j_max: int | None = None):
    """Catalog of ``X'_j`` and the breakpoints of the partition ``P_k``.

    Returns
    -------
    catalog : DiscontinuityCatalog
        Depth sets up to ``max(k, j_max)``.
    breakpoints : ndarray
        Sorted points of ``X_k`` together with the endpoints of ``Y``; the
        atoms of ``P_k`` are the gaps between consecutive breakpoints.
    """
    if k < 1:
        raise MapError("k must be >= 1")
    cat = discontinuity_catalog(fmap, max(k, j_max or k))
    pts = cat.points_up_to(k)
    pts = np.concatenate([[fmap.y_lo, fmap.y_hi], pts])
    return cat, _unique_tol(np.clip(pts, fmap.y_lo, fmap.y_hi))


def atoms(breakpoints: np.ndarray) -> list[tuple[float, float]]:
    return [(float(a), float(b)) for a, b in zip(breakpoints[:-1], breakpoints[1:])]


# ---------------------------------------------------------------------------
# interval images and the mixing time
# ---------------------------------------------------------------------------


def _merge(intervals: list[tuple[float, float]], tol: float = 1e-13) -> list[tuple[float, float]]:
    if not intervals:
        return []
    intervals = sorted(intervals)
    out = [list(intervals[0])]
    for a, b in intervals[1:]:
        if a <= out[-1][1] + tol:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


def interval_image(fmap: MapSpec, intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Image under ``F`` of a finite union of intervals, merged.

    For truncated first-return maps the dropped branches near ``y_lo`` are
    all full; an interval meeting that hole in more than the shortest kept
    cylinder therefore contains a dropped full cylinder and its image is
    taken to be ``Y``.
    """
    out = []
    if fmap.hole_mass > 0 and fmap.power == 1:
        first = fmap.branches[0]
        hole_hi = first.lo
        width = first.hi - first.lo
        for a, c in intervals:
            if min(c, hole_hi) - max(a, fmap.y_lo) > width:
                return [(fmap.y_lo, fmap.y_hi)]
    for a, c in intervals:
        for b in fmap.branches:
            lo, hi = max(a, b.lo), min(c, b.hi)
            if hi - lo > MIN_CYLINDER:
                ends = b.forward(np.array([lo, hi]))
                out.append((float(np.min(ends)), float(np.max(ends))))
    return _merge(out)


def covers(intervals: list[tuple[float, float]], y_lo: float, y_hi: float, tol: float = 1e-9) -> bool:
    for a, b in intervals:
        if a <= y_lo + tol and b >= y_hi - tol:
            return True
    return False


def mixing_time(fmap: MapSpec, length: float, n_test: int = 200, cap: int = 40) -> int:
    """Smallest ``k1`` with ``F^{k1}(J) = Y`` for a grid of intervals ``J`` of the given length.

    Raises ``MapError`` when some test interval is not spread over ``Y``
    within ``cap`` iterates.
    """
    # truncated maps leave a hole next to y_lo; test intervals start past it
    first = float(min(b.lo for b in fmap.branches))
    starts = np.linspace(first, fmap.y_hi - length, n_test)
    # images of sets under F^m are m-fold images under the base map, so work
    # with the base map when it is available (it carries the hole geometry)
    step_map, m = (fmap.base, fmap.power // fmap.base.power) if fmap.base is not None else (fmap, 1)
    worst = 0
    for a in starts:
        cur = [(float(a), float(a + length))]
        for step in range(1, cap * m + 1):
            cur = interval_image(step_map, cur)
            if covers(cur, fmap.y_lo, fmap.y_hi):
                worst = max(worst, -(-step // m))
                break
        else:
            raise MapError(f"interval [{a:.4g}, {a + length:.4g}) does not cover Y within {cap} iterates")
    return worst


# ---------------------------------------------------------------------------
# geometric constants
# ---------------------------------------------------------------------------


def roof_derivative_bound(fmap: MapSpec, roof: RoofFunction, n_samples: int = 1025) -> float:
    """``C2 = sup_h sup |(phi o h)'|`` over inverse branches of ``F``."""
    best = 0.0
    for b in fmap.branches:
        # stay inside the half-open domain: iterated roofs use the global map, whose
        # value at b.hi belongs to the next branch
        pad = 1e-12 * (b.hi - b.lo)
        x = np.linspace(b.lo + pad, b.hi - pad, n_samples)
        best = max(best, float(np.max(np.abs(roof.dphi(x) / b.deriv(x)))))
    return best


def tail_sum_bound(fmap: MapSpec, roof: RoofFunction, eps0: float, n_samples: int = 1025) -> float:
    """``C3 = sup_x sum_h |h'(x)| exp(eps0 phi(h x))`` over sampled ``x``."""
    y = np.linspace(fmap.y_lo, fmap.y_hi, n_samples)[:-1]
    total = np.zeros(y.shape)
    for b in fmap.branches:
        lo, hi = b.image
        m = (y >= lo) & (y < hi)
        if np.any(m):
            x = b.inverse(y[m])
            total[m] += np.exp(eps0 * roof.phi(x)) / np.abs(b.deriv(x))
    return float(np.max(total))


def geometric_constants(fmap: MapSpec, roof: RoofFunction, k1_cap: int = 40,
                        n_test: int = 200) -> dict:
    """Constants depending only on the map and roof.

    The map is first replaced by its smallest iterate with
    ``rho0 > 2^{4/3}``; the returned ``power`` records which iterate.

    Returns
    -------
    dict
        ``power, rho0, rho, C1, C2, C2p, C3, K, delta0, N1, k1, hole_mass``.
    """
    ws = working_system(fmap, roof)
    g = ws.fmap
    rho0 = g.rho0()
    c1 = g.adler()
    c2 = roof_derivative_bound(g, ws.roof)
    kk = g.min_image_length()
    delta0 = float(kk * (rho0 - 2.0) / (5.0 * np.exp(c1) * rho0))
    cat = discontinuity_catalog(g, 1)
    k1 = mixing_time(g, delta0, n_test=n_test, cap=k1_cap)
    return {
        "power": ws.power,
        "rho0": rho0,
        "rho": rho0 ** 0.25,
        "C1": c1,
        "C2": c2,
        "C2p": c2 * rho0 / (rho0 - 1.0),
        "C3": tail_sum_bound(g, ws.roof, roof.eps0),
        "K": kk,
        "delta0": delta0,
        "N1": cat.n1,
        "k1": k1,
        "hole_mass": g.hole_mass,
    }


def describe(fmap: MapSpec) -> dict:
    return {"family": fmap.family, "params": dict(fmap.params), "power": fmap.power,
            "n_branches": fmap.n_branches, "Y": [fmap.y_lo, fmap.y_hi]}


def sample_points(fmap: MapSpec, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    if rng is None:
        return fmap.y_lo + (np.arange(n) + 0.5) * fmap.length / n
    return fmap.y_lo + rng.random(n) * fmap.length


__all__: Sequence[str] = [
    "Piece", "Branch", "MapSpec", "RoofFunction", "WorkingSystem", "InverseBranch",
    "DiscontinuityCatalog", "MapError", "build_map", "iterate_map", "make_roof",
    "iterated_roof", "working_system", "inverse_branches", "image_partition",
    "discontinuity_catalog", "geometric_constants", "mixing_time", "atoms",
    "smallest_expanding_power", "interval_image", "covers", "sample_points", "describe",
]
