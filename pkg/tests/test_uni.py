import numpy as np
import pytest

from afu_numerics.dolgopyat_harness.uni import atom_grid, branch_derivatives, check_uni, uni_report
from conftest import system_for


def test_doubling_first_level_pair():
    # (phi o h)' = h for phi = 1 + x^2 and h(x) = (x + i)/2, so psi' = -1/2
    ws = system_for("doubling", power=1)
    res = check_uni(ws, 1, 1, (0.0, 1.0))
    assert res["D_best"] == pytest.approx(0.5, abs=1e-12)
    assert res["C0"] == pytest.approx(0.5, abs=1e-12)
    assert sorted([tuple(res["h1"]), tuple(res["h2"])]) == [(0,), (1,)]
    assert res["exhaustive"]


def test_branch_derivatives_doubling():
    ws = system_for("doubling", power=1)
    pts = atom_grid((0.0, 1.0), 9)
    codes, d = branch_derivatives(ws, 1, pts)
    assert codes.size == 2
    np.testing.assert_allclose(np.sort(d, axis=0), np.vstack([pts / 2, pts / 2 + 0.5]), atol=1e-12)


@pytest.mark.parametrize("kind,params", [("const", {"c": 1.0}), ("linear", {"a": 1.0, "c": 1.0})])
def test_degenerate_roofs_have_no_uni(kind, params):
    # phi = a x + c on the doubling map is cohomologous to a constant
    ws = system_for("doubling", kind, params, power=1)
    for n0 in (1, 2, 3):
        assert check_uni(ws, 1, n0, (0.0, 1.0))["D_best"] == pytest.approx(0.0, abs=1e-10)


def test_uni_report_and_multiple_check():
    ws = system_for("doubling", power=1)
    rep = uni_report(ws, 1, 2, [(0.0, 0.5), (0.5, 1.0)])
    assert rep["holds"] and rep["D"] == min(a["D_best"] for a in rep["atoms"])
    with pytest.raises(ValueError):
        check_uni(ws, 2, 3, (0.0, 1.0))
