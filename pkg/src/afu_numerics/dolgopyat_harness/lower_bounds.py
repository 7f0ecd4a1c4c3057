"""Empirical lower bounds: branch mass inside atoms, covering of intervals and preimage mass.

* :func:`check_lem_G` estimates ``C9``: the smallest normalized weight of the
  inverse branches of ``F^{2k}`` whose range lies inside an atom ``p``,
  relative to ``Leb(p)``.
* :func:`gamma0_estimate` and :func:`covering_check` measure the covering
  constant ``eta1``.
* :func:`preimage_mass_check` tests ``||v||_1 <= K1 / Leb(I_r) * int_{F^{-r} I_r} |v|``.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

from ..bv_space import GridFunction, var
from ..interval_map import MapSpec, WorkingSystem, atoms, image_partition
from ..operator_core import (LEAF_CHUNK, BudgetExceeded, SpectralData, assemble_ulam, branch_count_estimate,
                             iter_leaves)

_TOL = 1e-12


# ---------------------------------------------------------------------------
# lower bound on branch weights inside atoms
# ---------------------------------------------------------------------------


def _atom_index(bk: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Index of the atom containing ``[lo, hi]``, or -1 when it straddles a breakpoint."""
    a = np.searchsorted(bk, lo + _TOL, side="right") - 1
    a = np.clip(a, 0, bk.size - 2)
    inside = hi <= bk[a + 1] + _TOL
    return np.where(inside, a, -1)


def _c9_tree(system: WorkingSystem, spectral: SpectralData, n: int, x: np.ndarray,
                bk: np.ndarray, budget: int) -> np.ndarray:
    """Per (point, atom) sums of normalized weights of branches with range inside the atom."""
    fmap, roof = system.fmap, system.roof
    n_atoms = bk.size - 1
    acc = np.zeros(x.size * n_atoms)
    lognorm = -n * math.log(spectral.lam)
    for lv in iter_leaves(fmap, roof, x, n, budget=budget, with_cyl=True):
        a = _atom_index(bk, lv.cyl_lo, lv.cyl_hi)
        ok = a >= 0
        w = np.exp(lv.logw[ok] + spectral.sigma * lv.phi[ok] + lognorm)
        acc += np.bincount(lv.point[ok] * n_atoms + a[ok], weights=w, minlength=acc.size)
    return acc.reshape(x.size, n_atoms)


def _c9_ulam(system: WorkingSystem, spectral: SpectralData, n: int, bk: np.ndarray, N: int) -> np.ndarray:
    """Cell averages of ``lambda^{-n} L_sigma^n 1_p`` for every atom, from a dense Ulam power."""
    fmap = system.fmap
    U = assemble_ulam(fmap, system.roof, spectral.sigma, N)
    dense = U.matrix.toarray() / spectral.lam
    power = np.linalg.matrix_power(dense, n)
    edges = fmap.y_lo + U.h * np.arange(N + 1)
    # fraction of each cell covered by each atom
    lo = np.maximum(edges[:-1, None], bk[None, :-1])
    hi = np.minimum(edges[1:, None], bk[None, 1:])
    cover = np.clip(hi - lo, 0.0, None) / U.h
    return power @ cover


def check_lem_G(system: WorkingSystem, spectral: SpectralData, k: int, n_points: int = 33,
                breakpoints: np.ndarray | None = None, budget: int = 1 << 23, ulam_N: int = 1024) -> dict:
    """Empirical ``C9`` at depth ``n = 2k``.

    Parameters
    ----------
    system : WorkingSystem
    spectral : SpectralData
        Eigendata at the twist ``sigma`` of interest.
    k : int
        Partition depth; the branch depth is ``2k``.
    n_points : int
        Number of sample points ``x``.
    breakpoints : ndarray, optional
        Atoms of ``P_k``; computed from the catalog when omitted.
    budget : int
        Leaf budget for exact enumeration.
    ulam_N : int
        Grid size of the fallback Ulam estimate.

    Returns
    -------
    dict
        ``C9`` (the minimum of sum / ``Leb(p)``), ``method`` (``enumeration``
        or ``ulam``), ``n``, ``worst_atom``, ``n_atoms``, and ``dead_atoms`` /
        ``dead_mass`` for atoms whose mass leaves through a truncation hole
        within ``n`` steps (these are excluded from the minimum).  The Ulam route
        sums over all branches meeting ``p`` and subtracts the at most two
        straddling branches per point using the one-step weight bound.
    """
    fmap = system.fmap
    n = 2 * k
    if breakpoints is None:
        _, breakpoints = image_partition(fmap, k)
    bk = np.asarray(breakpoints, dtype=float)
    lengths = np.diff(bk)
    x = fmap.y_lo + (np.arange(n_points) + 0.5) * fmap.length / n_points
    try:
        if branch_count_estimate(fmap, n, n_points) > budget:
            raise BudgetExceeded("tree too large")
        sums = _c9_tree(system, spectral, n, x, bk, budget)
        dead = np.max(sums, axis=0) <= 0.0
        method = "enumeration"
    except BudgetExceeded:
        sums = _c9_ulam(system, spectral, n, bk, ulam_N)
        dead = np.max(sums, axis=0) <= 0.0
        # the largest one-step normalized weight bounds every straddling branch weight
        xs = np.linspace(fmap.y_lo, fmap.y_hi, 257)[:-1]
        w1 = 0.0
        for lv in iter_leaves(fmap, system.roof, xs, 1):
            w1 = max(w1, float(np.max(np.exp(lv.logw + spectral.sigma * lv.phi))))
        straddle = 2.0 * (w1 / spectral.lam) ** n
        sums = sums - straddle
        method = "ulam"
    # gaps between branch domains carry no mass and are not atoms
    inside = fmap.branch_index(0.5 * (bk[:-1] + bk[1:])) >= 0
    # atoms whose whole mass escapes through a truncation hole within n steps
    dead &= inside
    live = inside & ~dead
    ratio = np.where(live[None, :], sums / lengths[None, :], np.inf)
    worst = np.unravel_index(int(np.argmin(ratio)), ratio.shape)
    return {"C9": float(ratio[worst]) if live.any() else 0.0, "method": method, "n": n,
            "sigma": spectral.sigma, "worst_atom": [float(bk[worst[1]]), float(bk[worst[1] + 1])],
            "n_atoms": int(inside.sum()), "dead_atoms": int(dead.sum()),
            "dead_mass": float(lengths[dead].sum())}


# ---------------------------------------------------------------------------
# covering constant
# ---------------------------------------------------------------------------


def _pullback(fmap: MapSpec, word: tuple, pts: np.ndarray) -> np.ndarray:
    """Apply the inverse of ``F^len(word)`` along a forward branch word."""
    out = np.asarray(pts, dtype=float)
    for bi in reversed(word):
        out = fmap.branches[bi].inverse(out)
    return out


def largest_cylinder(fmap: MapSpec, interval: tuple[float, float], z: float, depth: int,
                     max_depth: int | None = None, max_expansions: int = 20000) -> tuple[float, int]:
    """Largest cylinder of depth in ``[depth, max_depth]`` inside ``interval`` whose image contains ``z``.

    Best-first search over cylinders ordered by length; children are never
    longer than their parent, so the first qualifying cylinder popped is the
    largest.  Returns ``(length, depth)``, or ``(0, -1)`` when none is found
    within ``max_expansions``.
    """
    max_depth = depth if max_depth is None else max_depth
    a, b = interval
    dom = fmap.domains
    img = fmap.images
    # heap entries: (-length, counter, lo, hi, image_lo, image_hi, word)
    heap = [(-fmap.length, 0, fmap.y_lo, fmap.y_hi, fmap.y_lo, fmap.y_hi, ())]
    counter = 1
    expansions = 0
    floor = 0.0  # length of the best qualifying cylinder seen so far
    while heap:
        neg, _, lo, hi, ilo, ihi, word = heapq.heappop(heap)
        if (len(word) >= depth and lo >= a - _TOL and hi <= b + _TOL
                and ilo - _TOL <= z <= ihi + _TOL):
            return -neg, len(word)
        if len(word) >= max_depth:
            continue
        expansions += 1
        if expansions > max_expansions:
            break
        # children: branches whose domain meets the current image
        sel = np.nonzero((dom[:, 1] > ilo + _TOL) & (dom[:, 0] < ihi - _TOL))[0]
        plo = np.maximum(ilo, dom[sel, 0])
        phi = np.minimum(ihi, dom[sel, 1])
        e1, e2 = _pullback(fmap, word, plo), _pullback(fmap, word, phi)
        clo, chi = np.minimum(e1, e2), np.maximum(e1, e2)
        keep = (chi > a + _TOL) & (clo < b - _TOL)
        # full children map onto the branch image; only partial ones need F
        nlo, nhi = img[sel, 0].copy(), img[sel, 1].copy()
        for i in np.nonzero(keep & ((plo > dom[sel, 0]) | (phi < dom[sel, 1])))[0]:
            fe = fmap.branches[sel[i]].forward(np.array([plo[i], phi[i]]))
            nlo[i] = max(float(np.min(fe)), nlo[i])
            nhi[i] = min(float(np.max(fe)), nhi[i])
        length = chi - clo
        nd = len(word) + 1
        good = np.zeros_like(keep)
        if nd >= depth:
            good = keep & (clo >= a - _TOL) & (chi <= b + _TOL) & (nlo - _TOL <= z) & (z <= nhi + _TOL)
            if np.any(good):
                floor = max(floor, float(np.max(length[good])))
        if nd >= max_depth:
            # at the deepest level only the longest qualifying child matters
            keep = np.zeros_like(keep)
            if np.any(good):
                keep[int(np.argmax(np.where(good, length, -1.0)))] = True
        else:
            keep &= length >= floor
        for i in np.nonzero(keep)[0]:
            heapq.heappush(heap, (-float(length[i]), counter, float(clo[i]), float(chi[i]),
                                  float(nlo[i]), float(nhi[i]), word + (int(sel[i]),)))
            counter += 1
    return 0.0, -1


def gamma0_estimate(fmap: MapSpec, delta0: float, k1: int, n_intervals: int = 24, n_z: int = 9,
                    extra_depth: int = 6, max_expansions: int = 20000) -> dict:
    """``gamma0 = min Leb(omega) / (2 delta0)`` over sampled intervals of length ``delta0`` and points ``z``.

    An interval of length ``delta0`` need not contain a whole ``k1``-cylinder
    (alignment), so cylinders of depth up to ``k1 + extra_depth`` are
    admitted; ``omega_depth`` reports the deepest one used.
    """
    first = float(min(br.lo for br in fmap.branches))
    starts = np.linspace(first, fmap.y_hi - delta0, n_intervals)
    zs = fmap.y_lo + (np.arange(n_z) + 0.5) * fmap.length / n_z
    best_min = np.inf
    deepest = k1
    for a in starts:
        for z in zs:
            length, d = largest_cylinder(fmap, (float(a), float(a + delta0)), float(z), k1,
                                         k1 + extra_depth, max_expansions)
            best_min = min(best_min, length)
            deepest = max(deepest, d)
    return {"gamma0": float(best_min / (2.0 * delta0)), "omega_depth": int(deepest),
            "n_samples": int(starts.size * zs.size)}


def covering_depth(geo: dict, tau: float) -> int:
    """Smallest admissible ``n`` for the covering bound at scale ``tau``."""
    rho0, K, C1 = geo["rho0"], geo["K"], geo["C1"]
    k1 = geo.get("omega_depth", geo["k1"])
    extra = math.log(2 * K * (rho0 - 2) / (math.exp(C1) * rho0 * tau)) / math.log(rho0 / 2)
    return int(k1 + max(0, math.ceil(extra)))


def _cylinder_of(fmap: MapSpec, x: float, n: int):
    """``(lo, hi, image_lo, image_hi)`` of the ``n``-cylinder containing ``x``."""
    img_lo, img_hi = fmap.y_lo, fmap.y_hi
    word = []
    for _ in range(n):
        bi = int(fmap.branch_index(np.array([x]))[0])
        if bi < 0:
            return None
        br = fmap.branches[bi]
        plo, phi = max(img_lo, br.lo), min(img_hi, br.hi)
        fe = br.forward(np.array([plo, phi]))
        img_lo, img_hi = float(np.min(fe)), float(np.max(fe))
        x = float(br.forward(np.array([x]))[0])
        word.append(bi)
    ends = _pullback(fmap, tuple(word), np.array([img_lo, img_hi]))
    return float(np.min(ends)), float(np.max(ends)), img_lo, img_hi


def covering_measure(fmap: MapSpec, z: float, J: tuple[float, float], n: int, budget: int = 1 << 22,
                     n_mc: int = 4000, rng: np.random.Generator | None = None) -> dict:
    """``Leb`` of the union of ``n``-cylinders inside ``J`` whose image contains ``z``, over ``Leb(J)``.

    Exhaustive over the inverse orbits of ``z`` when they fit ``budget``;
    otherwise a Monte-Carlo estimate over uniform points of ``J`` with a
    lower 99% Wilson bound.
    """
    a, b = J
    if branch_count_estimate(fmap, n, 1) <= budget:
        total = 0.0
        for lv in iter_leaves(fmap, _unit_roof(), np.array([z]), n, budget=budget, with_cyl=True):
            ok = (lv.cyl_lo >= a - _TOL) & (lv.cyl_hi <= b + _TOL)
            total += float(np.sum(lv.cyl_hi[ok] - lv.cyl_lo[ok]))
        frac = total / (b - a)
        return {"fraction": frac, "lower": frac, "method": "enumeration"}
    rng = np.random.default_rng(0) if rng is None else rng
    xs = a + (b - a) * rng.random(n_mc)
    hits = 0
    for x in xs:
        cyl = _cylinder_of(fmap, float(x), n)
        if cyl is None:
            continue
        lo, hi, ilo, ihi = cyl
        if lo >= a - _TOL and hi <= b + _TOL and ilo - _TOL <= z <= ihi + _TOL:
            hits += 1
    p = hits / n_mc
    zq = 2.576
    denom = 1 + zq**2 / n_mc
    centre = p + zq**2 / (2 * n_mc)
    half = zq * math.sqrt(p * (1 - p) / n_mc + zq**2 / (4 * n_mc**2))
    return {"fraction": p, "lower": max(0.0, (centre - half) / denom), "method": "monte_carlo"}


def _unit_roof():
    from ..interval_map import make_roof
    return make_roof("const", {"c": 1.0})


def covering_check(system: WorkingSystem, geo: dict, eta1: float, tau: float, n_cases: int = 50,
                   seed: int = 0, budget: int = 1 << 22) -> dict:
    """Check ``Leb(union of n-cylinders in J over z) >= eta1 Leb(J)`` at random ``(z, J)``."""
    fmap = system.fmap
    rng = np.random.default_rng(seed)
    n = covering_depth(geo, tau)
    first = float(min(br.lo for br in fmap.branches))
    worst = np.inf
    failures = []
    method = None
    for case in range(n_cases):
        z = float(fmap.y_lo + fmap.length * rng.random())
        length = tau + (fmap.y_hi - first - tau) * rng.random() * 0.5
        a = float(first + (fmap.y_hi - first - length) * rng.random())
        res = covering_measure(fmap, z, (a, a + length), n, budget=budget, rng=rng)
        method = res["method"]
        worst = min(worst, res["lower"])
        if res["lower"] < eta1:
            failures.append({"z": z, "J": [a, a + length], "fraction": res["fraction"]})
    return {"passes": not failures, "n": n, "tau": tau, "eta1": eta1, "worst_fraction": float(worst),
            "failures": failures, "method": method, "n_cases": n_cases}


# ---------------------------------------------------------------------------
# L1 mass seen through preimages of short intervals
# ---------------------------------------------------------------------------


def preimage_depth(geo: dict, k: int, K0: float) -> float:
    rho0, K, C1 = geo["rho0"], geo["K"], geo["C1"]
    k1 = geo.get("omega_depth", geo["k1"])
    return max(float(k), k1 + math.log(108 * K0 * K * (rho0 - 2) / (math.exp(C1) * rho0)) / math.log(rho0 / 2))


def preimage_mass_check(system: WorkingSystem, geo: dict, k: int, eta1: float, tests: list[GridFunction],
                   n_intervals: int = 25, seed: int = 0) -> dict:
    """Check ``||v||_1 <= K1 / Leb(I_r) * int_{I_r} L^r |v|`` on sampled ``I_r``.

    Each test function defines ``K0 = max(1.01, Var v / ||v||_1)``, the depth
    ``r = floor(r0) + 1`` and the interval scale ``rho^{-r}``.  The integral
    over ``F^{-r}(I_r)`` is computed by transfer, ``int_{I_r} L^r |v|``, with
    an Ulam matrix on the grid of the test function.  ``I_r`` is a random
    subinterval of an atom of ``P_r`` with length in ``(rho^{-r}/2, 2 rho^{-r})``.
    """
    fmap = system.fmap
    rng = np.random.default_rng(seed)
    K1 = 6.0 * math.exp(geo["C1"]) / eta1
    rho = geo["rho"]
    records = []
    ulam_cache: dict = {}
    for v in tests:
        absv = np.abs(v.values)
        l1 = float(np.sum(absv) * v.h)
        K0 = max(1.01, var(v) / l1)
        r = int(math.floor(preimage_depth(geo, k, K0))) + 1
        scale = rho ** (-r)
        if scale < 8 * v.h:
            raise ValueError(f"grid too coarse for r={r}: rho^-r = {scale:.3g}, cell {v.h:.3g}")
        if v.N not in ulam_cache:
            ulam_cache[v.N] = assemble_ulam(fmap, system.roof, 0.0, v.N)
        U = ulam_cache[v.N]
        w = U.apply(absv, r)
        _, bk = image_partition(fmap, min(r, 12))
        long_atoms = [(a, b) for a, b in atoms(bk) if b - a > 0.5 * scale]
        for _ in range(n_intervals):
            a, b = long_atoms[int(rng.integers(len(long_atoms)))]
            length = min(b - a, scale * (0.5 + 1.5 * rng.random()))
            length = max(length, 0.5 * scale * 1.001)
            start = a + (b - a - length) * rng.random()
            lo, hi = start, start + length
            cells = np.arange(v.N)
            el = fmap.y_lo + cells * v.h
            frac = np.clip(np.minimum(el + v.h, hi) - np.maximum(el, lo), 0.0, None)
            integral = float(np.dot(w, frac))
            rhs = K1 / length * integral
            records.append({"r": r, "K0": K0, "I": [lo, hi], "lhs": l1, "rhs": rhs, "holds": l1 <= rhs})
    n_fail = sum(not rec["holds"] for rec in records)
    worst = min(rec["rhs"] / rec["lhs"] for rec in records) if records else np.inf
    return {"passes": n_fail == 0, "n_instances": len(records), "n_failures": n_fail, "K1": K1,
            "worst_margin": float(worst), "records": records}


__all__ = ["check_lem_G", "largest_cylinder", "gamma0_estimate", "covering_depth", "covering_measure",
           "covering_check", "preimage_depth", "preimage_mass_check"]
