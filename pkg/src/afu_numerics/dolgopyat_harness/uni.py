"""Uniform non-integrability: search for branch pairs with ``|psi'|`` bounded below.

For inverse branches ``h1, h2`` of ``F^{n0}`` defined on an atom ``p`` the
temporal distance is ``psi = phi_{n0} o h1 - phi_{n0} o h2``; its derivative
is assembled from the chain rule along the inverse orbits.
"""
from __future__ import annotations

import numpy as np

from ..interval_map import WorkingSystem
from ..operator_core import LEAF_BUDGET, iter_leaves, word_digits


def atom_grid(atom: tuple[float, float], n: int) -> np.ndarray:
    """``n`` points spanning the closed atom, nudged inside by a relative ``1e-10``."""
    lo, hi = atom
    pad = 1e-10 * (hi - lo)
    return np.linspace(lo + pad, hi - pad, n)


def branch_derivatives(system: WorkingSystem, n0: int, points: np.ndarray,
                       budget: int = LEAF_BUDGET) -> tuple[np.ndarray, np.ndarray]:
    """Word codes defined at every point and the matrix of ``(phi_{n0} o h)'`` values.

    Returns
    -------
    codes : ndarray of int64, shape (n_words,)
    dphi : ndarray, shape (n_words, n_points)
    """
    points = np.asarray(points, dtype=float)
    words, pidx, vals = [], [], []
    for lv in iter_leaves(system.fmap, system.roof, points, n0, with_dphi=True, budget=budget):
        words.append(lv.word)
        pidx.append(lv.point)
        vals.append(lv.dphi)
    if not words:
        return np.zeros(0, dtype=np.int64), np.zeros((0, points.size))
    word = np.concatenate(words)
    pidx = np.concatenate(pidx)
    vals = np.concatenate(vals)
    codes, inv, counts = np.unique(word, return_inverse=True, return_counts=True)
    full = counts == points.size
    mat = np.full((codes.size, points.size), np.nan)
    mat[inv, pidx] = vals
    return codes[full], mat[full]


def check_uni(system: WorkingSystem, k: int, n0: int, atom: tuple[float, float], n_grid: int = 65,
              top: int = 64, budget: int = LEAF_BUDGET) -> dict:
    """Best UNI pair on one atom.

    Parameters
    ----------
    system : WorkingSystem
    k : int
        Partition depth; ``n0`` must be a multiple of ``k``.
    n0 : int
        Branch depth.
    atom : (float, float)
        Closed atom ``p`` of ``P_k``.
    n_grid : int
        Grid on which the infimum of ``|psi'|`` is taken.
    top : int
        When there are more than ``2 top`` branches, only pairs made of one of
        the ``top`` words with largest mean ``(phi_{n0} o h)'`` and one of the
        ``top`` with smallest mean are compared; otherwise all pairs are.

    Returns
    -------
    dict
        ``D_best``, ``C0`` (``sup |psi'|`` of the chosen pair on the grid),
        ``h1``, ``h2`` (branch digits, first inverse step first), the word
        codes ``code1, code2``, ``n_words`` and ``exhaustive``.
    """
    if n0 % k:
        raise ValueError(f"n0={n0} is not a multiple of k={k}")
    pts = atom_grid(atom, n_grid)
    codes, d = branch_derivatives(system, n0, pts, budget=budget)
    nb = system.fmap.n_branches
    out = {"atom": [float(atom[0]), float(atom[1])], "n0": n0, "n_words": int(codes.size)}
    if codes.size < 2:
        return {**out, "D_best": 0.0, "C0": 0.0, "h1": None, "h2": None, "code1": None, "code2": None,
                "exhaustive": True}
    exhaustive = codes.size <= 2 * top
    if exhaustive:
        ii, jj = np.triu_indices(codes.size, k=1)
    else:
        order = np.argsort(d.mean(axis=1))
        hi_set, lo_set = order[-top:], order[:top]
        ii = np.repeat(hi_set, lo_set.size)
        jj = np.tile(lo_set, hi_set.size)
    best_val, best_pair = -1.0, (0, 1)
    chunk = max(1, (1 << 22) // n_grid)
    for s in range(0, ii.size, chunk):
        a, b = ii[s:s + chunk], jj[s:s + chunk]
        inf_abs = np.min(np.abs(d[a] - d[b]), axis=1)
        j = int(np.argmax(inf_abs))
        if inf_abs[j] > best_val:
            best_val, best_pair = float(inf_abs[j]), (int(a[j]), int(b[j]))
    i1, i2 = best_pair
    psi_p = d[i1] - d[i2]
    return {**out, "D_best": best_val, "C0": float(np.max(np.abs(psi_p))),
            "h1": word_digits(int(codes[i1]), n0, nb), "h2": word_digits(int(codes[i2]), n0, nb),
            "code1": int(codes[i1]), "code2": int(codes[i2]), "exhaustive": bool(exhaustive)}


def uni_report(system: WorkingSystem, k: int, n0: int, atom_list, **kw) -> dict:
    """UNI pairs on every atom; ``D = min D_best`` and ``C0 = max sup |psi'|``."""
    per_atom = [check_uni(system, k, n0, p, **kw) for p in atom_list]
    D = min(r["D_best"] for r in per_atom) if per_atom else 0.0
    C0 = max(r["C0"] for r in per_atom) if per_atom else 0.0
    return {"n0": n0, "D": float(D), "C0": float(C0), "atoms": per_atom, "holds": bool(D > 0)}


__all__ = ["atom_grid", "branch_derivatives", "check_uni", "uni_report"]
