import numpy as np
import pytest

from afu_numerics.bv_space import GridFunction
from afu_numerics.dolgopyat_harness.lower_bounds import (check_lem_G, covering_depth, covering_measure,
                                                     gamma0_estimate, preimage_mass_check)
from afu_numerics.interval_map import build_map, geometric_constants
from afu_numerics.operator_core import eigendata
from conftest import system_for


def test_c9_doubling_square_is_one():
    # every branch of the full doubling map lands inside the single atom, so the sum is exactly Leb(p)
    ws = system_for("doubling")
    res = check_lem_G(ws, eigendata(ws, 0.0, 256), 1)
    assert res["method"] == "enumeration"
    assert res["C9"] == pytest.approx(1.0, abs=1e-9)
    assert res["dead_atoms"] == 0


def test_c9_ulam_route_is_a_lower_estimate():
    ws = system_for("doubling")
    sd = eigendata(ws, 0.0, 256)
    exact = check_lem_G(ws, sd, 1)["C9"]
    approx = check_lem_G(ws, sd, 1, budget=1)
    assert approx["method"] == "ulam"
    assert 0 < approx["C9"] <= exact + 1e-9


def test_covering_measure_full_branches():
    d = build_map("doubling")
    for z in (0.1, 0.77):
        res = covering_measure(d, z, (0.25, 0.5), 3)
        assert res["method"] == "enumeration"
        assert res["fraction"] == pytest.approx(1.0, abs=1e-12)
    mc = covering_measure(d, 0.3, (0.25, 0.5), 3, budget=1, n_mc=500)
    assert mc["method"] == "monte_carlo" and mc["lower"] <= mc["fraction"] <= 1.0


def test_covering_depth_grows_as_tau_shrinks():
    geo = geometric_constants(build_map("shifted_beta", {"beta": 3.0, "alpha": 0.0}),
                              system_for("beta3").base_roof)
    depths = [covering_depth(geo, tau) for tau in (0.5, 0.1, 0.01)]
    assert depths == sorted(depths) and depths[-1] > depths[0]


def test_gamma0_positive():
    d = build_map("doubling")
    res = gamma0_estimate(d, 0.1, 1, n_intervals=6, n_z=3)
    assert res["gamma0"] > 0 and res["omega_depth"] >= 1


def test_preimage_mass_doubling(ledgers):
    led = ledgers("doubling")
    geo = {"rho0": led.rho0, "rho": led.rho, "K": led.K, "C1": led.C1, "k1": led.k1,
           "omega_depth": led.omega_depth}
    N = 2**14
    x = (np.arange(N) + 0.5) / N
    tests = [GridFunction(np.ones(N)), GridFunction(1.0 + (x > 0.3))]
    res = preimage_mass_check(led.system, geo, led.k, led.eta1, tests, n_intervals=10)
    assert res["passes"] and res["n_instances"] == 20
