"""Command-line experiments.

Usage::

    afu <command> [--config PATH] [--out DIR] [--threads N] [--seed U64] [--grid N]

Commands: ``density``, ``ledger``, ``uni``, ``scan``, ``l2``, ``cone``,
``correlation``, ``resolvent``.  Each writes ``<command>.json`` (plus CSV
files where relevant) into the output directory and exits with status 0 iff
every check asserted by the command passes.

The config is a YAML file; every key is optional::

    map:
      family: doubling          # doubling | golden_beta | shifted_beta | mp_first_return
      params: {}                # beta, alpha | alpha, gamma, t_max, tail_tol
    roof:
      kind: one_plus_x_sq       # const | one_plus_x_sq | linear | table
      params: {}                # c | a, c | values
      eps0: 0.05
    power: null                 # iterate of the map; null picks the smallest expanding one
    grid: 1024                  # Ulam cells for eigendata
    seed: 0
    ledger: {N: 1024, k_cap: 64}
    tolerances: {residual: 1.0e-8, lambda: 1.0e-6}
    scan: {sigma: 0.0, b: [20, 40, 80], N: 4096}
    l2: {b: 50, m_max: 8, N: 2048, beta_max: 0.98, allow_uni_failure: false}
    cone: {b: 50, sigma: 0.0, pairs: 16, iterations: 3, N: 2048}
    correlation: {samples: 1000000, t_max: 8.0, dt: 0.25, control: true, control_c: 1.0}
    resolvent: {sigma: 0.0, b: [20, 40, 80, 160], N: 4096}
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1

DEFAULTS = {
    "map": {"family": "doubling", "params": {}},
    "roof": {"kind": "one_plus_x_sq", "params": {}, "eps0": 0.05},
    "power": None,
    "grid": 1024,
    "seed": 0,
    "ledger": {"N": 1024, "k_cap": 64},
    "tolerances": {"residual": 1e-8, "lambda": 1e-6},
    "scan": {"sigma": 0.0, "b": [20, 40, 80], "N": 4096},
    "l2": {"b": 50.0, "m_max": 8, "N": 2048, "beta_max": 0.98, "allow_uni_failure": False},
    "cone": {"b": 50.0, "sigma": 0.0, "pairs": 16, "iterations": 3, "N": 2048},
    "correlation": {"samples": 1_000_000, "t_max": 8.0, "dt": 0.25, "control": True, "control_c": 1.0},
    "resolvent": {"sigma": 0.0, "b": [20, 40, 80, 160], "N": 4096},
}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in (over or {}).items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def load_config(path: str | None, seed: int | None = None, grid: int | None = None) -> dict:
    """Read a YAML config and fill in defaults; ``seed`` and ``grid`` override the file."""
    cfg = dict(DEFAULTS)
    if path:
        with open(path) as fh:
            cfg = _merge(DEFAULTS, yaml.safe_load(fh) or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    if grid is not None:
        cfg["grid"] = int(grid)
    return cfg


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_report(out: Path, name: str, payload: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.json"
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def make_system(cfg: dict, power=None):
    from .interval_map import build_map, make_roof, working_system

    fmap = build_map(cfg["map"]["family"], cfg["map"].get("params"))
    roof = make_roof(cfg["roof"]["kind"], cfg["roof"].get("params"), eps0=cfg["roof"].get("eps0", 0.05),
                     y_range=(fmap.y_lo, fmap.y_hi))
    return working_system(fmap, roof, power=cfg.get("power") if power is None else power)


def make_ledger(cfg: dict, system=None):
    from .dolgopyat_harness.ledger import LedgerConfig, build_ledger

    system = system or make_system(cfg)
    lc = LedgerConfig(**cfg.get("ledger", {}))
    return build_ledger(system, lc)


def _base(cfg: dict, command: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_density(cfg: dict, out: Path) -> dict:
    from .operator_core import eigendata

    system = make_system(cfg)
    sd = eigendata(system, 0.0, int(cfg["grid"]))
    out.mkdir(parents=True, exist_ok=True)
    (out / "density.csv").write_text(sd.to_csv())
    tol = cfg["tolerances"]
    checks = {"residual": sd.residual <= tol["residual"], "lambda": abs(sd.lam - 1.0) <= tol["lambda"]}
    return {**_base(cfg, "density"), "ledger": None, "spectral": sd.header(),
            "hole_mass": system.fmap.hole_mass, "checks": checks}


def cmd_ledger(cfg: dict, out: Path) -> dict:
    led = make_ledger(cfg)
    return {**_base(cfg, "ledger"), "ledger": led.to_dict(), "checks": {"ledger complete": True}}


def cmd_uni(cfg: dict, out: Path) -> dict:
    led = make_ledger(cfg)
    status = led.status.get("uni")
    if status is None:
        check = False
        note = "UNI not measured"
    else:
        check = bool(status)
        note = "UNI holds" if check else "UNI failed"
    return {**_base(cfg, "uni"), "ledger": led.to_dict(), "uni": led.uni, "D": led.D, "n0": led.n0,
            "note": note, "checks": {"uni": check}}


def cmd_scan(cfg: dict, out: Path) -> dict:
    from .dolgopyat_harness.contraction import bv_test_family, calibrate_ly, contraction_scan

    sc = cfg["scan"]
    led = make_ledger(cfg)
    if led.status.get("uni"):
        calibrate_ly(led, bv_test_family(led.system, 8192, cfg["seed"]))
    fam = bv_test_family(led.system, int(sc["N"]), cfg["seed"])
    res = contraction_scan(led, sc["b"], fam, sigma=float(sc["sigma"]), N=int(sc["N"]))
    rows = ["b,n,log_ratio,gamma_fit"]
    for b, r in res.per_b.items():
        for i, lr in enumerate(r["log_ratios"]):
            rows.append(f"{b:.17g},{r['n_used'] + i},{lr:.17g},{r['gamma_fit']:.17g}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "scan.csv").write_text("\n".join(rows) + "\n")
    n_used = [res.per_b[b]["n_used"] for b in sorted(res.per_b, key=abs)]
    checks = {"uni": not res.uni_failed,
              "gamma_fit < 1": all(r["gamma_fit"] < 1 for r in res.per_b.values()),
              "n_used monotone": all(a <= c for a, c in zip(n_used, n_used[1:])),
              "schedule terminates": all(r["schedule"]["shrink_ok"] for r in res.per_b.values())}
    return {**_base(cfg, "scan"), "ledger": led.to_dict(), "scan": res.to_dict(), "checks": checks,
            "note": "UNI failed" if res.uni_failed else None}


def cmd_l2(cfg: dict, out: Path) -> dict:
    from .bv_space import GridFunction
    from .dolgopyat_harness.contraction import l2_contraction

    p = cfg["l2"]
    led = make_ledger(cfg)
    lo, hi = led.system.fmap.y_lo, led.system.fmap.y_hi
    v = GridFunction(np.ones(int(p["N"]), dtype=complex), lo, hi)
    res = l2_contraction(led, float(p["b"]), int(p["m_max"]), v, allow_uni_failure=bool(p["allow_uni_failure"]))
    checks = {"uni": not res["uni_failed"], "beta < beta_max": res["beta"] < p["beta_max"],
              "monotone": res["monotone"], "dominated": res["dominated"]}
    return {**_base(cfg, "l2"), "ledger": led.to_dict(), "l2": res, "checks": checks,
            "note": "UNI failed" if res["uni_failed"] else None}


def cmd_cone(cfg: dict, out: Path) -> dict:
    from .bv_space import cone_check
    from .dolgopyat_harness.cancellation import grid_operator, iterate_pair, random_cone_pair
    from .interval_map import discontinuity_catalog

    p = cfg["cone"]
    led = make_ledger(cfg)
    b, sigma, N = float(p["b"]), float(p["sigma"]), int(p["N"])
    sd = led.spectral(sigma)
    cat = discontinuity_catalog(led.system.fmap, led.k + 12)
    rng = np.random.default_rng(cfg["seed"])
    lo, hi = led.system.fmap.y_lo, led.system.fmap.y_hi
    op = grid_operator(sd, led.n0, lo + (hi - lo) * (np.arange(N) + 0.5) / N)
    runs = []
    for _ in range(int(p["pairs"])):
        pair = random_cone_pair(led, b, rng, N=N, catalog=cat)
        start = cone_check(pair, cat, led, breakpoints=led.breakpoints)["in_cone"]
        steps = []
        for _ in range(int(p["iterations"])):
            pair, rep = iterate_pair(pair, sd, complex(sigma, b), led, catalog=cat, op=op)
            steps.append({"cancellation": rep.cancellation["holds"], "max_violation": rep.cancellation["max_violation"],
                          "in_cone": rep.cone["in_cone"], "jump_bounds": rep.jump_bounds["holds"],
                          "atom_ratio_max": max(rep.atom_ratios) if rep.atom_ratios else None})
        runs.append({"start_in_cone": start, "steps": steps})
    flat = [s for r in runs for s in r["steps"]]
    checks = {"start in cone": all(r["start_in_cone"] for r in runs),
              "cancellation": all(s["cancellation"] for s in flat),
              "cone invariance": all(s["in_cone"] for s in flat),
              "jump bounds": all(s["jump_bounds"] for s in flat)}
    return {**_base(cfg, "cone"), "ledger": led.to_dict(), "runs": runs, "checks": checks}


def default_observables(fmap, roof):
    """``v = 1{y < mid} - 1/2 + cos(2 pi u) / 2`` and ``w = sin(2 pi y') + cos(2 pi u)``."""
    from .semiflow import SuspensionObservable

    lo, hi = fmap.y_lo, fmap.y_hi
    mid = 0.5 * (lo + hi)
    hs = np.linspace(0.0, roof.sup, 17)

    def v(y, u):
        return (y < mid) - 0.5 + 0.5 * np.cos(2 * np.pi * u)

    def w(y, u):
        return np.sin(2 * np.pi * (y - lo) / (hi - lo)) + np.cos(2 * np.pi * u)

    return (SuspensionObservable.from_function(v, 2048, hs, lo, hi),
            SuspensionObservable.from_function(w, 2048, hs, lo, hi))


def run_correlation(cfg: dict, roof_cfg: dict, seed: int):
    from .interval_map import build_map, make_roof, working_system
    from .operator_core import eigendata
    from .semiflow import correlation, fit_exponential

    p = cfg["correlation"]
    fmap = build_map(cfg["map"]["family"], cfg["map"].get("params"))
    roof = make_roof(roof_cfg["kind"], roof_cfg.get("params"), eps0=roof_cfg.get("eps0", 0.05),
                     y_range=(fmap.y_lo, fmap.y_hi))
    sd = eigendata(working_system(fmap, roof, power=1), 0.0, int(cfg["grid"]), with_double=False)
    v, w = default_observables(fmap, roof)
    t = np.arange(0.0, float(p["t_max"]) + 1e-9, float(p["dt"]))
    series = correlation(v, w, t, int(p["samples"]), seed, fmap, roof, sd.f)
    series.fit = fit_exponential(series)
    return series


def cmd_correlation(cfg: dict, out: Path) -> dict:
    p = cfg["correlation"]
    led = make_ledger(cfg)
    out.mkdir(parents=True, exist_ok=True)
    main = run_correlation(cfg, cfg["roof"], cfg["seed"])
    (out / "correlation.csv").write_text(main.to_csv())
    payload = {**_base(cfg, "correlation"), "ledger": led.to_dict(), "fit": main.fit}
    checks = {"a1 > 0 (95% CI)": bool(main.fit["a1_significant"])}
    if p["control"]:
        ctrl = run_correlation(cfg, {"kind": "const", "params": {"c": p["control_c"]}}, cfg["seed"])
        (out / "correlation_control.csv").write_text(ctrl.to_csv())
        payload["control_fit"] = ctrl.fit
        checks["control without exponential decay"] = not ctrl.fit["exponential"]
    payload["checks"] = checks
    return payload


def cmd_resolvent(cfg: dict, out: Path) -> dict:
    from .dolgopyat_harness.contraction import resolvent_scan

    p = cfg["resolvent"]
    led = make_ledger(cfg)
    res = resolvent_scan(led.system, p["b"], sigma=float(p["sigma"]), N=int(p["N"]), rng=cfg["seed"])
    return {**_base(cfg, "resolvent"), "ledger": led.to_dict(), "resolvent": res,
            "checks": {"log-log slope < 1": res["sublinear"]}}


COMMANDS = {"density": cmd_density, "ledger": cmd_ledger, "uni": cmd_uni, "scan": cmd_scan, "l2": cmd_l2,
            "cone": cmd_cone, "correlation": cmd_correlation, "resolvent": cmd_resolvent}


def _limit_threads(n: int | None):
    if not n:
        return None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="afu", description="Twisted transfer operator experiments.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    ap.add_argument("--seed", type=int, default=None, help="random seed (unsigned 64-bit)")
    ap.add_argument("--grid", type=int, default=None, help="Ulam cells for eigendata")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    _limit_threads(args.threads)
    cfg = load_config(args.config, args.seed, args.grid)
    out = Path(args.out)
    from .dolgopyat_harness.ledger import LedgerInfeasible

    try:
        payload = COMMANDS[args.command](cfg, out)
    except LedgerInfeasible as exc:
        write_report(out, args.command, {**_base(cfg, args.command), "error": str(exc), "checks": {}})
        print(f"FAIL {args.command}: ledger infeasible: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # report the failing step, then exit nonzero
        msg = str(exc)
        write_report(out, args.command, {**_base(cfg, args.command), "error": msg, "checks": {}})
        print(f"FAIL {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    failed = [name for name, ok in payload["checks"].items() if not ok]
    payload["passed"] = not failed
    write_report(out, args.command, payload)
    if payload.get("note"):
        print(payload["note"], flush=True)
    if failed:
        print(f"FAIL {args.command}: {failed[0]}", file=sys.stderr)
        return 1
    print(f"PASS {args.command}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
