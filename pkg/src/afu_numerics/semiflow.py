"""Suspension semiflows over expanding interval maps and Monte-Carlo correlations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bv_space import GridFunction, var
from .interval_map import MapSpec, RoofFunction

MIN_SAMPLES = 1000
N_BATCHES = 32


# ---------------------------------------------------------------------------
# the flow
# ---------------------------------------------------------------------------


def flow_point(y, u, t, fmap: MapSpec, roof: RoofFunction, max_steps: int = 10_000):
    """Advance ``(y, u)`` by time ``t`` under the suspension semiflow.

    The height grows at unit speed and ``(y, phi(y))`` is identified with
    ``(F y, 0)``.  Arrays broadcast; points whose orbit enters a hole of the
    map become NaN.

    Parameters
    ----------
    y, u : array_like
        Base points and heights with ``0 <= u < phi(y)``.
    t : float or array_like
        Flow time (non-negative).

    Returns
    -------
    (ndarray, ndarray)
        The new base points and heights.
    """
    y, u, t = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(u, dtype=float),
                                  np.asarray(t, dtype=float))
    y = y.astype(float).copy()
    h = (u + t).astype(float)
    for _ in range(max_steps):
        ph = roof.phi(np.nan_to_num(y, nan=fmap.y_lo))
        jump = (h >= ph) & ~np.isnan(y)
        if not np.any(jump):
            break
        h = np.where(jump, h - ph, h)
        y = np.where(jump, fmap.forward(np.where(jump, y, fmap.y_lo)), y)
    else:
        raise RuntimeError("flow_point exceeded max_steps identifications")
    h = np.where(np.isnan(y), np.nan, h)
    return y, h


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------


@dataclass
class SuspensionObservable:
    """``v(y, u)`` stored as grid functions in ``y`` at sampled heights ``u``.

    Values between heights use local cubic interpolation in ``u`` (four
    neighbouring heights); in ``y`` the grid functions are evaluated as steps.
    ``order`` is the smoothness order ``m`` used by :meth:`bv_norm`.
    """

    heights: np.ndarray
    layers: list
    order: int = 2

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=float)
        if self.heights.size != len(self.layers) or self.heights.size < 4:
            raise ValueError("need at least four height samples, one grid function each")
        if np.any(np.diff(self.heights) <= 0):
            raise ValueError("heights must increase")

    @classmethod
    def from_function(cls, func: Callable, N: int, heights, y_lo: float = 0.0, y_hi: float = 1.0,
                      order: int = 2) -> "SuspensionObservable":
        heights = np.asarray(heights, dtype=float)
        ys = y_lo + (y_hi - y_lo) * (np.arange(N) + 0.5) / N
        layers = [GridFunction(np.asarray(func(ys, np.full(N, h)), dtype=float), y_lo, y_hi) for h in heights]
        return cls(heights, layers, order)

    def _table(self) -> np.ndarray:
        return np.stack([np.real(g.values) for g in self.layers])

    def __call__(self, y, u) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        g0 = self.layers[0]
        ok = ~(np.isnan(y) | np.isnan(u))
        cells = g0.cell(np.where(ok, y, g0.y_lo))
        tab = self._table()
        uu = np.clip(np.where(ok, u, self.heights[0]), self.heights[0], self.heights[-1])
        # cubic interpolation in u, cell by cell
        idx = np.clip(np.searchsorted(self.heights, uu, side="right") - 1, 0, self.heights.size - 2)
        out = np.empty(uu.shape)
        for i in np.unique(idx):
            sel = idx == i
            lo = max(0, min(i - 1, self.heights.size - 4))
            hs = self.heights[lo:lo + 4]
            cs = tab[lo:lo + 4][:, cells[sel]]
            x = uu[sel]
            w = np.ones((4, x.size))
            for a in range(4):
                for c in range(4):
                    if a != c:
                        w[a] *= (x - hs[c]) / (hs[a] - hs[c])
            out[sel] = np.sum(w * cs, axis=0)
        return np.where(ok, out, np.nan)

    def bv_norm(self) -> float:
        """``sum_{j <= m} sup_u ||d^j v / du^j (., u)||_BV`` from finite differences in ``u``."""
        tab = self._table()
        total = 0.0
        deriv = tab
        hs = self.heights
        for j in range(self.order + 1):
            norms = [var(GridFunction(row, self.layers[0].y_lo, self.layers[0].y_hi))
                     + float(np.max(np.abs(row))) for row in deriv]
            total += max(norms)
            if j < self.order:
                deriv = np.gradient(deriv, hs, axis=0)
        return float(total)


# ---------------------------------------------------------------------------
# sampling and correlations
# ---------------------------------------------------------------------------


def sample_suspension(n: int, fmap: MapSpec, roof: RoofFunction, density: GridFunction,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` points from ``mu^phi``: base density ``f0 phi / phibar`` by rejection, height uniform."""
    f_sup = float(np.max(np.real(density.values)))
    bound = f_sup * roof.sup
    ys, out = [], 0
    while out < n:
        m = max(2 * (n - out), 1024)
        y = rng.uniform(fmap.y_lo, fmap.y_hi, m)
        keep = rng.uniform(0.0, bound, m) < np.real(density.evaluate(y)) * roof.phi(y)
        ys.append(y[keep])
        out += int(keep.sum())
    y = np.concatenate(ys)[:n]
    u = rng.uniform(0.0, 1.0, n) * roof.phi(y)
    return y, u


@dataclass
class CorrelationSeries:
    """Estimated correlations on a time grid with batch-means standard errors."""

    t: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray
    sample_size: int
    seed: int | None = None
    fit: dict | None = None

    def to_csv(self) -> str:
        lines = ["t,rho,stderr"] + [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in zip(self.t, self.rho, self.stderr)]
        return "\n".join(lines) + "\n"

    def fit_json(self) -> str:
        return json.dumps(self.fit, indent=2, sort_keys=True)


def correlation(v, w, t_grid, sample_size: int, seed: int, fmap: MapSpec, roof: RoofFunction,
                density: GridFunction, n_batches: int = N_BATCHES) -> CorrelationSeries:
    """Monte-Carlo estimate of ``rho_t(v, w) = int v w o F_t dmu^phi - int v int w``.

    Parameters
    ----------
    v, w : callable
        Observables ``(y, u) -> value``.
    t_grid : array_like
        Non-negative times.
    sample_size : int
        Total number of points (at least 1000), split into ``n_batches``
        batches with independent substreams of ``seed``.
    fmap, roof : MapSpec, RoofFunction
        The base map and roof of the flow.
    density : GridFunction
        Invariant density ``f0`` of ``fmap``.

    Returns
    -------
    CorrelationSeries
        Batch-mean estimates and standard errors; deterministic for a fixed seed.
    """
    if sample_size < MIN_SAMPLES:
        raise ValueError(f"sample_size must be at least {MIN_SAMPLES}")
    t_grid = np.asarray(t_grid, dtype=float)
    streams = np.random.SeedSequence(seed).spawn(n_batches)
    sizes = np.full(n_batches, sample_size // n_batches)
    sizes[: sample_size % n_batches] += 1
    est = np.empty((n_batches, t_grid.size))
    for bi, (ss, m) in enumerate(zip(streams, sizes)):
        rng = np.random.default_rng(ss)
        y, u = sample_suspension(int(m), fmap, roof, density, rng)
        vv = np.asarray(v(y, u), dtype=float)
        for ti, t in enumerate(t_grid):
            yt, ut = flow_point(y, u, t, fmap, roof)
            ww = np.asarray(w(yt, ut), dtype=float)
            ok = ~np.isnan(ww)
            est[bi, ti] = np.mean(vv[ok] * ww[ok]) - np.mean(vv[ok]) * np.mean(ww[ok])
    rho = np.average(est, axis=0, weights=sizes)
    se = np.std(est, axis=0, ddof=1) / math.sqrt(n_batches)
    return CorrelationSeries(t_grid, rho, se, int(sample_size), seed)


# ---------------------------------------------------------------------------
# exponential fit
# ---------------------------------------------------------------------------


def _ols(X: np.ndarray, y: np.ndarray):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(y) - X.shape[1], 1)
    s2 = float(resid @ resid / dof)
    cov = np.linalg.pinv(X.T @ X) * s2
    return coef, cov, resid


def tail_envelope(rho) -> np.ndarray:
    """``E(t_i) = max_{j >= i} |rho(t_j)|``, a non-increasing envelope of an oscillating series."""
    a = np.abs(np.asarray(rho, dtype=float))
    return np.maximum.accumulate(a[::-1])[::-1]


def fit_exponential(series: CorrelationSeries, min_points: int = 8, noise_factor: float = 3.0,
                    curvature_sigma: float = 3.0, curvature_tol: float = 0.05) -> dict:
    """Fit ``|rho_t| <= a0 exp(-a1 t)`` on the window above the noise floor.

    The window ends at the last time with ``|rho| > noise_factor * stderr``.
    Correlations of flows oscillate, so the fit uses the tail envelope
    ``max_{s >= t} |rho_s|``; ``log`` of the envelope is fitted by least
    squares in ``t`` with residual-based standard errors.  A quadratic term is
    fitted as well: the decay is called curved when that term changes the
    log-envelope by more than ``curvature_tol`` over the window and is
    ``curvature_sigma`` standard errors away from zero.

    Returns
    -------
    dict
        ``status`` (``ok`` or ``inconclusive``), ``a0``, ``a1``, the 95%
        interval ``ci``, ``residual``, ``curved``, ``a1_significant`` and
        ``exponential`` (significant decay without curvature).
    """
    t, rho, se = (np.asarray(x, dtype=float) for x in (series.t, series.rho, series.stderr))
    above = np.nonzero((np.abs(rho) > noise_factor * se) & (np.abs(rho) > 0))[0]
    n = int(above[-1]) + 1 if above.size else 0
    if above.size < min_points:
        return {"status": "inconclusive", "n_points": int(above.size), "a0": None, "a1": None, "ci": None,
                "residual": None, "curved": None, "a1_significant": False, "exponential": False}
    tt = t[:n]
    yy = np.log(tail_envelope(rho[:n]))
    coef, cov, resid = _ols(np.column_stack([np.ones(n), tt]), yy)
    a1 = -float(coef[1])
    a1_se = float(math.sqrt(max(cov[1, 1], 0.0)))
    ci = (a1 - 1.96 * a1_se, a1 + 1.96 * a1_se)
    cq, covq, _ = _ols(np.column_stack([np.ones(n), tt, tt**2]), yy)
    span = float(tt.max() - tt.min())
    bend = abs(float(cq[2])) * span**2
    bend_se = math.sqrt(max(covq[2, 2], 0.0)) * span**2
    curved = bool(bend > curvature_tol and bend > curvature_sigma * bend_se)
    significant = bool(ci[0] > 0)
    return {"status": "ok", "n_points": n, "a0": float(math.exp(coef[0])), "a1": a1, "a1_se": a1_se,
            "ci": [float(ci[0]), float(ci[1])], "residual": float(math.sqrt(np.mean(resid**2))),
            "curvature": float(cq[2]), "curved": curved, "a1_significant": significant,
            "exponential": bool(significant and not curved)}


__all__ = ["MIN_SAMPLES", "flow_point", "SuspensionObservable", "sample_suspension", "CorrelationSeries",
           "correlation", "tail_envelope", "fit_exponential"]
