"""Constant ledger: every constant entering the cone and cancellation argument.

Two depth choices are recorded.  The *reference* choice takes the smallest
multiple of ``2 k1`` satisfying the three depth displays

* ``min_p Leb(p) > (16 C8 / C9) C5 rho^{-k}`` (atom length),
* ``rho^k (rho - 1) > 12 N1 C8`` (extra-term growth),
* ``rho^{-2k} (sup f0 + Var f0)(1/inf f0 + Var 1/f0) < 1`` (density regularity),

and derives ``n0`` from ``C10 rho0^{-n0} 4 pi / D <= (2 - 2 cos(pi/12))^{1/2} / 4``.
These values are usually far beyond what branch enumeration can reach, so
the *operational* choice used by the numerics takes the smallest ``k`` for
which the displays that are not vacuous for the given map hold, and the
smallest multiple ``n0`` of it meeting the ``n0`` display with the measured
``D``.  Both are reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from ..bv_space import GridFunction, var
from ..interval_map import WorkingSystem, discontinuity_catalog, geometric_constants, image_partition
from ..operator_core import (LEAF_BUDGET, BudgetExceeded, ConvergenceError, SpectralData, branch_weight_bound,
                             eigendata, power_iteration, assemble_ulam)
from .lower_bounds import check_lem_G, gamma0_estimate
from .uni import uni_report

#: Cancellation factor ``(sqrt 7 - 1) / 2``.
ETA0 = (math.sqrt(7.0) - 1.0) / 2.0
#: Right-hand side of the ``n0`` display.
N0_RHS = 0.25 * math.sqrt(2.0 - 2.0 * math.cos(math.pi / 12.0))


class LedgerInfeasible(RuntimeError):
    """No admissible depth within the cap; ``display`` names the failing inequality."""

    def __init__(self, display: str, msg: str):
        super().__init__(msg)
        self.display = display


@dataclass
class LedgerConfig:
    """Numerical settings of :func:`build_ledger`."""

    N: int = 1024
    eps: float | None = None
    sigma_test: float | None = None
    k_cap: int = 64
    n0_cap: int = 12
    extra_depth: int = 8
    uni_grid: int = 65
    uni_top: int = 64
    uni_budget: int = 1 << 23
    c9_points: int = 33
    c9_budget: int = 1 << 22
    gamma_intervals: int = 16
    gamma_points: int = 7
    strict: bool = False


@dataclass
class ConstantLedger:
    """Measured and derived constants; ``k`` and ``n0`` are the operational choices."""

    power: int
    rho0: float
    rho: float
    C1: float
    C2: float
    C2p: float
    C3: float
    K: float
    delta0: float
    N1: int
    k1: int
    eps0: float
    eps: float
    eps_binding: str
    sigma_test: float
    C5: float
    C6: float
    C7: float
    C8: float
    C9: float
    C9_formula: float
    C9_method: str
    C10: float
    C11: float | None
    c_ly: float | None
    eta0: float
    eta1: float
    gamma0: float
    omega_depth: int
    K1: float
    K2: float
    k: int
    k_ly: int
    n0: int | None
    D: float
    C0: float
    Delta: float
    delta: float
    delta_p: float
    sup_f0: float
    inf_f0: float
    var_f0: float
    var_inv_f0: float
    sup_inf: dict
    vacuous_extra: bool
    markov: bool
    status: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    uni: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    breakpoints: np.ndarray | None = field(default=None, repr=False)
    spectra: dict = field(default_factory=dict, repr=False)
    system: WorkingSystem | None = field(default=None, repr=False)

    def __getitem__(self, name: str):
        return getattr(self, name)

    def delta_pp(self, M: float) -> float:
        """``delta'' = delta' / (2 M)`` for a ratio bound ``M``."""
        return self.delta_p / (2.0 * M)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return atoms_of(self.system, self.breakpoints)

    def spectral(self, sigma: float) -> SpectralData:
        """Eigendata at ``sigma`` (computed once and cached)."""
        key = round(float(sigma), 14)
        if key not in self.spectra:
            N = next(iter(self.spectra.values())).N if self.spectra else 1024
            self.spectra[key] = eigendata(self.system, float(sigma), N)
        return self.spectra[key]

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name in ("spectra", "system", "breakpoints"):
                continue
            out[f.name] = _jsonable(getattr(self, f.name))
        out["atoms"] = [list(a) for a in self.atoms] if self.breakpoints is not None else []
        return out


def _jsonable(val):
    if isinstance(val, dict):
        return {str(k): _jsonable(v) for k, v in val.items()}
    if isinstance(val, (list, tuple)):
        return [_jsonable(v) for v in val]
    if isinstance(val, np.ndarray):
        return val.tolist()
    if isinstance(val, (np.floating,)):
        val = float(val)
    if isinstance(val, (np.integer,)):
        return int(val)
    if isinstance(val, (np.bool_,)):
        return bool(val)
    if isinstance(val, float) and not math.isfinite(val):
        return str(val)
    return val


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------


def partition_breakpoints(system: WorkingSystem, k: int, merge_tol: float = 1e-9) -> np.ndarray:
    """Breakpoints of ``P_k`` restricted to the union of branch domains.

    Points closer than ``merge_tol`` are merged, and the part of ``Y`` outside
    every branch domain (the truncation hole of first-return maps) is removed.
    """
    fmap = system.fmap
    _, bk = image_partition(fmap, k)
    first = float(min(br.lo for br in fmap.branches))
    last = float(max(br.hi for br in fmap.branches))
    bk = bk[(bk > first + merge_tol) & (bk < last - merge_tol)]
    bk = np.concatenate([[first], bk, [last]])
    keep = np.concatenate([[True], np.diff(bk) > merge_tol])
    bk = bk[keep]
    bk[-1] = last
    return bk


def atom_mask(system: WorkingSystem, bk: np.ndarray) -> np.ndarray:
    """True for the atoms between consecutive breakpoints that lie inside some branch domain."""
    mid = 0.5 * (bk[:-1] + bk[1:])
    return system.fmap.branch_index(mid) >= 0


def atoms_of(system: WorkingSystem, bk: np.ndarray) -> list[tuple[float, float]]:
    """Atoms of the partition, skipping gaps between branch domains."""
    keep = atom_mask(system, bk)
    return [(float(a), float(b)) for a, b, ok in zip(bk[:-1], bk[1:], keep) if ok]


def _min_leb(system: WorkingSystem, bk: np.ndarray) -> float:
    return float(np.min(np.diff(bk)[atom_mask(system, bk)]))


def new_points_beyond(system: WorkingSystem, k: int, extra: int) -> int:
    """Catalog points of depth ``k < j <= k + extra`` in the interior, not already in ``X_k``."""
    fmap = system.fmap
    cat = discontinuity_catalog(fmap, k + extra)
    xk = cat.points_up_to(k)
    count = 0
    for j in range(k + 1, k + extra + 1):
        pts = cat.interior(j)
        if pts.size == 0:
            continue
        if xk.size:
            d = np.min(np.abs(pts[:, None] - xk[None, :]), axis=1)
            count += int(np.sum(d > 1e-10))
        else:
            count += int(pts.size)
    return count


# ---------------------------------------------------------------------------
# twist radius
# ---------------------------------------------------------------------------


def select_eps(system: WorkingSystem, N: int = 1024, n_list=(1, 2, 3), j_max: int = 24) -> dict:
    """Largest ``2^{-j} < eps0`` passing the branch-weight and eigenvalue checks at ``+-eps``.

    The checks are ``sup lambda^{-n} |h'| e^{sigma phi_n} <= rho^{-3n}`` for
    ``n`` in ``n_list``, a positive eigenfunction and ``lambda_sigma > rho^{-1/4}``.
    """
    eps0 = system.roof.eps0
    rho = system.fmap.rho0() ** 0.25
    table = []
    binding = "eps0"
    for j in range(1, j_max + 1):
        eps = 2.0 ** (-j)
        if eps >= eps0:
            continue
        failed = None
        for sigma in (eps, -eps):
            try:
                sd = eigendata(system, sigma, N, with_double=False)
            except ConvergenceError:
                failed = "positive eigenfunction"
                break
            if not sd.lam > rho ** (-0.25):
                failed = "lambda_sigma > rho^{-1/4}"
                break
            for n in n_list:
                if not branch_weight_bound(system, sigma, n, sd.lam)["passes"]:
                    failed = f"branch weight bound n={n}"
                    break
            if failed:
                break
        table.append({"eps": eps, "failed": failed})
        if failed is None:
            return {"eps": eps, "binding": binding, "table": table}
        binding = failed
    raise LedgerInfeasible("eps", f"no twist radius 2^-j, j <= {j_max}, passes the checks")


def spectral_family(system: WorkingSystem, sigma_test: float, N: int) -> dict:
    """Eigendata at ``0, +-sigma_test, +-2 sigma_test`` with ``Lambda`` filled in."""
    sig = [0.0, sigma_test, -sigma_test, 2 * sigma_test, -2 * sigma_test]
    fam = {round(s, 14): eigendata(system, s, N, with_double=False) for s in sig}
    for s in sig:
        sd = fam[round(s, 14)]
        two = round(2 * s, 14)
        if two in fam:
            lam2 = fam[two].lam
        else:
            U = assemble_ulam(system.fmap, system.roof, 2 * s, N)
            lam2, _, _, _ = power_iteration(U.matrix, U.h, start=sd.f.values.real)
        sd.lam2 = lam2
        sd.Lam = float(math.sqrt(lam2) / sd.lam)
    return fam


# ---------------------------------------------------------------------------
# depth displays
# ---------------------------------------------------------------------------


def display_atoms(min_leb: float, k: int, C5: float, C8: float, C9: float, rho: float) -> bool:
    return C9 > 0 and min_leb > 16.0 * C8 / C9 * C5 * rho ** (-k)


def display_extra(k: int, N1: int, C8: float, rho: float) -> bool:
    return rho**k * (rho - 1.0) > 12.0 * N1 * C8


def display_density(k: int, rho: float, sup_f0: float, var_f0: float, inf_f0: float, var_inv: float) -> bool:
    return rho ** (-2 * k) * (sup_f0 + var_f0) * (1.0 / inf_f0 + var_inv) < 1.0


def c10_value(C1: float, C2p: float, C6: float, eps0: float, rho0: float, k: int) -> float:
    denom = 2.0 * ETA0 - 4.0 * rho0 ** (-k)
    if denom <= 0:
        return math.inf
    return (C1 * math.exp(C1) + 2 * (1 + eps0) * math.exp(eps0 * C2p) * C2p + 2 * C6) / denom


def display_n0(C10: float, rho0: float, n0: int, D: float) -> bool:
    return D > 0 and C10 * rho0 ** (-n0) * 4 * math.pi / D <= N0_RHS


def n0_from_display(C10: float, rho0: float, D: float, k: int) -> int | None:
    """Smallest multiple of ``k`` meeting the ``n0`` display for a given ``D``."""
    if not D > 0 or not math.isfinite(C10):
        return None
    need = math.log(C10 * 4 * math.pi / (D * N0_RHS)) / math.log(rho0)
    return int(k * max(1, math.ceil(need / k - 1e-12)))


def _c9_min(system, spectra: dict, k: int, bk: np.ndarray, cfg: LedgerConfig) -> dict:
    """``C9`` as the minimum over the spectral family at ``0`` and ``+-sigma_test``."""
    best = None
    keys = sorted(spectra, key=abs)[:3]
    for key in keys:
        res = check_lem_G(system, spectra[key], k, n_points=cfg.c9_points, breakpoints=bk,
                          budget=cfg.c9_budget, ulam_N=min(cfg.N, 1024))
        if best is None or res["C9"] < best["C9"]:
            best = res
    return best


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def build_ledger(system: WorkingSystem, config: LedgerConfig | None = None, spectra: dict | None = None) -> ConstantLedger:
    """Assemble the constant ledger for a working system.

    Parameters
    ----------
    system : WorkingSystem
        Map and roof after passing to the expanding iterate.
    config : LedgerConfig, optional
    spectra : dict, optional
        Precomputed eigendata keyed by ``sigma``; must contain the family
        ``0, +-sigma_test, +-2 sigma_test`` when given.

    Returns
    -------
    ConstantLedger
        ``status`` holds each display's verdict at the operational ``k`` and
        ``reference`` the reference depth choice; with ``config.strict`` an
        infeasible reference depth raises :class:`LedgerInfeasible`.
    """
    cfg = config or LedgerConfig()
    flags: list[str] = []
    geo = geometric_constants(system.base_map, system.base_roof) if system.power == smallest_power(system) \
        else _geo_for_power(system)
    rho0, rho, C1, C2p = geo["rho0"], geo["rho"], geo["C1"], geo["C2p"]
    eps0 = system.roof.eps0

    # twist radius and spectral family
    if cfg.eps is None:
        sel = select_eps(system, N=cfg.N)
        eps, binding = sel["eps"], sel["binding"]
    else:
        eps, binding = float(cfg.eps), "configured"
    sigma_test = cfg.sigma_test if cfg.sigma_test is not None else 0.4 * eps
    if spectra is None:
        spectra = spectral_family(system, sigma_test, cfg.N)
    sd0 = spectra[0.0]
    f0 = sd0.f.values.real
    sup_f0, inf_f0 = float(np.max(f0)), float(np.min(f0))
    var_f0 = var(GridFunction(f0, sd0.f.y_lo, sd0.f.y_hi))
    var_inv = var(GridFunction(1.0 / f0, sd0.f.y_lo, sd0.f.y_hi))
    sup_inf = {str(s): spectra[s].sup_inf for s in sorted(spectra)}
    C5 = max(spectra[s].sup_inf for s in spectra)
    C6 = (eps * C2p + C1) * C5
    C7 = rho**3 * C5
    C8 = 3.0 * C7 / ETA0
    K2 = C5 * sup_f0 / inf_f0

    # covering constant
    g0 = gamma0_estimate(system.fmap, geo["delta0"], geo["k1"], n_intervals=cfg.gamma_intervals,
                         n_z=cfg.gamma_points)
    gamma0, omega_depth = g0["gamma0"], g0["omega_depth"]
    if omega_depth > geo["k1"]:
        flags.append(f"covering cylinders of depth {omega_depth} > k1 = {geo['k1']} were needed")
    eta1 = gamma0 / (2.0 * math.exp(C1))
    C9_formula = eta1 * math.exp(-C1) / 2.0
    K1 = 6.0 * math.exp(C1) / eta1 if eta1 > 0 else math.inf
    N1 = geo["N1"]
    markov = system.fmap.is_markov()

    # reference depth: multiples of 2 k1
    reference = _reference_depth(system, spectra, geo, cfg, C5, C8, sup_f0, var_f0, inf_f0, var_inv)
    if cfg.strict and reference["k"] is None:
        raise LedgerInfeasible(reference["failing"], f"no reference depth <= {cfg.k_cap}: "
                               f"{reference['failing']} fails")

    # operational depth
    k_op, op_status, C9_res, vac = _operational_depth(system, spectra, geo, cfg, C5, C8, sup_f0, var_f0,
                                                      inf_f0, var_inv, flags)
    bk = partition_breakpoints(system, k_op)
    C9 = C9_res["C9"]
    if C9_res.get("dead_atoms"):
        flags.append(f"{C9_res['dead_atoms']} atoms (Lebesgue mass {C9_res['dead_mass']:.3g}) lose all mass "
                     f"through the truncation hole and are excluded from C9")
    C10 = c10_value(C1, C2p, C6, eps0, rho0, k_op)

    # UNI and n0
    uni, n0 = _operational_n0(system, k_op, bk, C10, rho0, cfg, flags)
    measured = uni.get("measured", True)
    D = uni.get("D", 0.0) if measured else 0.0
    C0 = uni.get("C0", 0.0) if measured else 0.0
    k_ly = ly_depth(spectra, rho, cfg.k_cap)
    if reference["k"] is not None:
        C10_ref = c10_value(C1, C2p, C6, eps0, rho0, reference["k"])
        reference["C10"] = C10_ref
        reference["n0"] = n0_from_display(C10_ref, rho0, D, reference["k"])
        reference["n0_note"] = "uses D measured at the operational n0"
    if D > 0:
        Delta = 2 * math.pi / D
        delta = 0.9 * min(Delta, 4 * math.pi / (3 * D), math.pi / (6 * C0))
        delta_p = delta / (4 * delta + 6 * Delta)
    else:
        Delta = delta = delta_p = math.inf
        if measured:
            flags.append("UNI fails: D = 0, no cancellation available")
    status = dict(op_status)
    status["n0 phase bound"] = n0 is not None
    status["uni"] = bool(D > 0) if measured else None
    if D > 0:
        status["delta bounds"] = bool(delta * D / (16 * math.pi) < 1 / 12 and C0 * delta < math.pi / 6)
    led = ConstantLedger(
        power=system.power, rho0=rho0, rho=rho, C1=C1, C2=geo["C2"], C2p=C2p, C3=geo["C3"], K=geo["K"],
        delta0=geo["delta0"], N1=N1, k1=geo["k1"], eps0=eps0, eps=eps, eps_binding=binding,
        sigma_test=sigma_test, C5=C5, C6=C6, C7=C7, C8=C8, C9=C9, C9_formula=C9_formula,
        C9_method=C9_res["method"], C10=C10, C11=None, c_ly=None, eta0=ETA0, eta1=eta1, gamma0=gamma0,
        omega_depth=omega_depth, K1=K1, K2=K2, k=k_op, k_ly=k_ly, n0=n0, D=D, C0=C0, Delta=Delta, delta=delta,
        delta_p=delta_p, sup_f0=sup_f0, inf_f0=inf_f0, var_f0=var_f0, var_inv_f0=var_inv, sup_inf=sup_inf,
        vacuous_extra=vac, markov=markov, status=status, reference=reference, uni=uni, flags=flags,
        breakpoints=bk, spectra=spectra, system=system)
    return led


def set_ly_constant(ledger: ConstantLedger, c: float) -> ConstantLedger:
    """Record the fitted Lasota-Yorke remainder constant and the derived ``C11``.

    ``C11 = 64 (1 + c)^2 C5^2 (sup f_{2 sigma} / inf f_{2 sigma}) K2^2``.
    """
    ratio_2s = max(ledger.spectra[s].sup_inf for s in ledger.spectra)
    ledger.c_ly = float(c)
    ledger.C11 = float(64.0 * (1.0 + c) ** 2 * ledger.C5**2 * ratio_2s * ledger.K2**2)
    return ledger


def smallest_power(system: WorkingSystem) -> int:
    from ..interval_map import smallest_expanding_power
    return smallest_expanding_power(system.base_map)


def _geo_for_power(system: WorkingSystem) -> dict:
    """Geometric constants when the working power differs from the default."""
    from ..interval_map import mixing_time, roof_derivative_bound, tail_sum_bound

    g = system.fmap
    rho0 = g.rho0()
    c1 = g.adler()
    c2 = roof_derivative_bound(g, system.roof)
    kk = g.min_image_length()
    delta0 = float(kk * (rho0 - 2.0) / (5.0 * math.exp(c1) * rho0)) if rho0 > 2 else float("nan")
    cat = discontinuity_catalog(g, 1)
    k1 = mixing_time(g, delta0) if rho0 > 2 else 0
    return {"power": system.power, "rho0": rho0, "rho": rho0**0.25, "C1": c1, "C2": c2,
            "C2p": c2 * rho0 / (rho0 - 1.0), "C3": tail_sum_bound(g, system.roof, system.roof.eps0),
            "K": kk, "delta0": delta0, "N1": cat.n1, "k1": k1, "hole_mass": g.hole_mass}


def _reference_depth(system, spectra, geo, cfg, C5, C8, sup_f0, var_f0, inf_f0, var_inv) -> dict:
    rho, N1, k1 = geo["rho"], geo["N1"], geo["k1"]
    step = 2 * k1
    C9_proxy = None
    last_fail = None
    for k in range(step, cfg.k_cap + 1, step):
        if not display_extra(k, N1, C8, rho):
            last_fail = "extra-term growth rho^k(rho-1) > 12 N1 C8"
            continue
        if not display_density(k, rho, sup_f0, var_f0, inf_f0, var_inv):
            last_fail = "density regularity rho^{-2k}(...) < 1"
            continue
        bk = partition_breakpoints(system, k)
        min_leb = _min_leb(system, bk)
        if C9_proxy is None:
            C9_proxy = _c9_min(system, spectra, k, bk, cfg)["C9"]
        if not display_atoms(min_leb, k, C5, C8, C9_proxy, rho):
            last_fail = "atom length min Leb(p) > (16 C8/C9) C5 rho^{-k}"
            continue
        res = _c9_min(system, spectra, k, bk, cfg)
        if display_atoms(min_leb, k, C5, C8, res["C9"], rho):
            return {"k": k, "C9": res["C9"], "C9_method": res["method"], "min_leb": min_leb,
                    "failing": None, "cap": cfg.k_cap}
        last_fail = "atom length min Leb(p) > (16 C8/C9) C5 rho^{-k}"
    return {"k": None, "failing": last_fail or "no multiple of 2 k1 below the cap", "cap": cfg.k_cap}


def _operational_depth(system, spectra, geo, cfg, C5, C8, sup_f0, var_f0, inf_f0, var_inv, flags):
    rho, rho0, N1 = geo["rho"], geo["rho0"], geo["N1"]
    with_atoms = True
    for attempt in range(2):
        C9_proxy = None
        for k in range(1, cfg.k_cap + 1):
            vac = new_points_beyond(system, k, cfg.extra_depth) == 0
            st = {"positivity 2 eta0 - 4 rho0^-k > 0": 2 * ETA0 - 4 * rho0 ** (-k) > 0,
                  "density regularity": display_density(k, rho, sup_f0, var_f0, inf_f0, var_inv)}
            if not vac:
                st["extra-term growth"] = display_extra(k, N1, C8, rho)
            if not all(st.values()):
                continue
            bk = partition_breakpoints(system, k)
            min_leb = _min_leb(system, bk)
            if not vac and with_atoms:
                if C9_proxy is None:
                    C9_proxy = _c9_min(system, spectra, k, bk, cfg)["C9"]
                if not display_atoms(min_leb, k, C5, C8, C9_proxy, rho):
                    continue
            res = _c9_min(system, spectra, k, bk, cfg)
            if res["C9"] <= 0:
                continue
            if not vac:
                st["atom length"] = display_atoms(min_leb, k, C5, C8, res["C9"], rho)
                if with_atoms and not st["atom length"]:
                    continue
            st["C9 > 0"] = True
            return k, st, res, vac
        if not with_atoms:
            break
        with_atoms = False
        flags.append("atom-length display infeasible below the cap; k chosen without it and the "
                     "jump bounds that depend on it are unverified hypotheses")
    raise LedgerInfeasible("operational k", f"no operational depth <= {cfg.k_cap}")


def ly_depth(spectra: dict, rho: float, k_cap: int = 64) -> int:
    """Smallest ``k`` with ``rho^{-2k}(sup f + Var f)(1/inf f + Var 1/f) < 1`` for every ``f_sigma``."""
    worst = 0.0
    for sd in spectra.values():
        f = sd.f.values.real
        g = GridFunction(f, sd.f.y_lo, sd.f.y_hi)
        gi = GridFunction(1.0 / f, sd.f.y_lo, sd.f.y_hi)
        worst = max(worst, (f.max() + var(g)) * (1.0 / f.min() + var(gi)))
    for k in range(1, k_cap + 1):
        if rho ** (-2 * k) * worst < 1.0:
            return k
    raise LedgerInfeasible("Lasota-Yorke depth", f"density display fails for k <= {k_cap}")


def _operational_n0(system, k, bk, C10, rho0, cfg, flags):
    atom_list = atoms_of(system, bk)
    last = {"D": None, "C0": None, "atoms": [], "holds": None, "measured": False}
    if k > cfg.n0_cap:
        flags.append(f"UNI not measured: k = {k} exceeds the n0 cap {cfg.n0_cap}")
        return last, None
    for n0 in range(k, cfg.n0_cap + 1, k):
        try:
            rep = uni_report(system, k, n0, atom_list, n_grid=cfg.uni_grid, top=cfg.uni_top,
                             budget=cfg.uni_budget)
        except BudgetExceeded:
            what = "UNI not measured" if not last["measured"] else "n0 search stopped"
            flags.append(f"{what} at n0={n0}: branch enumeration over budget")
            return last, None
        rep["measured"] = True
        last = rep
        if rep["D"] <= 0:
            return rep, None
        if display_n0(C10, rho0, n0, rep["D"]):
            return rep, n0
    flags.append(f"n0 display not met for n0 <= {cfg.n0_cap}")
    return last, None


__all__ = ["ETA0", "N0_RHS", "LedgerInfeasible", "LedgerConfig", "ConstantLedger", "build_ledger",
           "set_ly_constant", "select_eps", "spectral_family", "partition_breakpoints", "atom_mask", "atoms_of", "new_points_beyond",
           "display_atoms", "display_extra", "ly_depth", "display_density", "display_n0", "c10_value", "n0_from_display"]
