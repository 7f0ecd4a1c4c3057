import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afu_numerics.interval_map import (MapError, atoms, build_map, covers, discontinuity_catalog,
                                       geometric_constants, image_partition, interval_image, inverse_branches,
                                       iterate_map, iterated_roof, make_roof, mixing_time,
                                       smallest_expanding_power, working_system)
from afu_numerics.operator_core import apply_pointwise


def test_doubling_branches():
    d = build_map("shifted_beta", {"beta": 2.0, "alpha": 0.0})
    assert d.n_branches == 2
    assert d.rho0() == pytest.approx(2.0)
    assert d.min_image_length() == pytest.approx(1.0)
    x = np.array([0.1, 0.6])
    np.testing.assert_allclose(d.forward(x), [0.2, 0.2])


def test_shifted_beta_is_non_markov():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    assert f.n_branches == 3
    last = f.branches[-1]
    lo, hi = last.image
    assert hi - lo < 1.0
    # breakpoints of 2.5 x + 0.3 mod 1
    np.testing.assert_allclose(f.domains[1:, 0], [0.7 / 2.5, 1.7 / 2.5])
    assert not f.is_markov()


@pytest.mark.parametrize("params", [{"beta": 1.0, "alpha": 0.0}, {"beta": 0.5, "alpha": 0.1}])
def test_rejects_non_expanding(params):
    with pytest.raises(MapError):
        build_map("shifted_beta", params)


def test_mp_rejects_bad_gamma():
    with pytest.raises(MapError):
        build_map("mp_first_return", {"alpha": 1.0, "gamma": 0.4})


def _mp_base(x, alpha, gamma):
    return np.where(x < 0.5, x * (1 + (2 * x) ** alpha), 2 * gamma * x - gamma)


def test_mp_first_return_matches_brute_force():
    alpha, gamma = 1.0, 0.8
    fmap = build_map("mp_first_return", {"alpha": alpha, "gamma": gamma})
    y = np.linspace(0.5, 1.0, 4001)[:-1]
    idx = fmap.branch_index(y)
    y = y[idx >= 0]
    x = _mp_base(y, alpha, gamma)
    tau = np.ones_like(y, dtype=int)
    for _ in range(60):
        out = x < 0.5
        if not out.any():
            break
        x = np.where(out, _mp_base(x, alpha, gamma), x)
        tau += out
    np.testing.assert_allclose(fmap.forward(y), x, atol=1e-10)
    labels = np.array([fmap.branches[i].label[0] for i in fmap.branch_index(y)])
    np.testing.assert_array_equal(labels, tau)
    assert 0 < fmap.hole_mass < 1e-2


def test_mp_branch_count_grows_with_depth():
    counts = [build_map("mp_first_return", {"alpha": 1.0, "gamma": 0.8, "t_max": t}).n_branches
              for t in (30, 40, 50)]
    assert counts[0] < counts[1] < counts[2]


def test_inverse_branches_doubling():
    d = build_map("doubling")
    hs = inverse_branches(d, 1, 0.3)
    assert len(hs) == 2
    np.testing.assert_allclose(sorted(float(h(0.3)) for h in hs), [0.15, 0.65])
    hs2 = inverse_branches(d, 2, 0.77)
    assert len(hs2) == 4
    np.testing.assert_allclose([float(h.deriv(0.77)) for h in hs2], 0.25)


def test_inverse_branches_shifted_beta_at_095():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    hs = inverse_branches(f, 1, 0.95)
    images = [br.image for br in f.branches]
    expected = sum(lo <= 0.95 < hi for lo, hi in images)
    assert len(hs) == expected < 3


@pytest.mark.parametrize("tag,params", [("doubling", {}), ("shifted_beta", {"beta": 2.5, "alpha": 0.3}),
                                        ("golden_beta", {})])
def test_inverse_branch_identity_and_contraction(tag, params):
    f = build_map(tag, params)
    rng = np.random.default_rng(0)
    for n in (1, 2, 3):
        for x in rng.random(20):
            for h in inverse_branches(f, n, x):
                y = float(h(x))
                z = y
                for _ in range(n):
                    z = float(f.forward(np.array([z]))[0])
                assert z == pytest.approx(x, abs=1e-10)
                assert h.deriv(x) <= f.rho0() ** (-n) * (1 + 1e-12)


def test_distortion_bound():
    f = build_map("mp_first_return", {"alpha": 1.0, "gamma": 0.8})
    C1 = f.adler()
    rng = np.random.default_rng(1)
    for br in f.branches[:10]:
        lo, hi = br.image
        x, xp = lo + (hi - lo) * rng.random((2, 50))
        hx = 1 / np.abs(br.deriv(br.inverse(x)))
        hxp = 1 / np.abs(br.deriv(br.inverse(xp)))
        assert np.all(hx / hxp <= np.exp(C1 * np.abs(x - xp)) * (1 + 1e-8))


def test_branch_sum_matches_operator():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    roof = make_roof("const", {"c": 1.0})
    rng = np.random.default_rng(2)
    x = rng.random(1000)
    for n in (1, 2, 3, 4):
        itm = iterate_map(f, n)
        total = np.zeros_like(x)
        for br in itm.branches:
            lo, hi = br.image
            inside = (x >= lo) & (x < hi)
            total[inside] += 1 / np.abs(br.deriv(br.inverse(x[inside])))
        np.testing.assert_allclose(apply_pointwise(f, roof, 0.0, n, 1.0, x).real, total, atol=1e-10)


def test_catalog_doubling_is_markov():
    cat, bk = image_partition(build_map("doubling"), 4)
    for j in cat.by_depth:
        assert np.all(np.isin(np.round(cat.by_depth[j], 12), [0.0, 1.0]))
    np.testing.assert_allclose(bk, [0.0, 1.0])


def test_catalog_shifted_beta_counts():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    cat = discontinuity_catalog(f, 10)
    N1 = cat.n1
    assert N1 > 0
    for j in cat.by_depth:
        assert len(cat.by_depth[j]) <= j * N1
    # X'_2 is the image of X'_1 (one-sided limits at breakpoints included)
    x1 = np.asarray(cat.by_depth[1])
    inside = x1[(x1 > 0) & (x1 < 1)]
    images = f.forward(inside)
    assert np.all(np.min(np.abs(np.asarray(cat.by_depth[2])[:, None] - images[None, :]), axis=0) < 1e-12)
    _, bk = image_partition(f, 2)
    assert min(b - a for a, b in atoms(bk)) > 0


def test_catalog_csv():
    cat = discontinuity_catalog(build_map("golden_beta"), 3)
    lines = cat.to_csv().strip().splitlines()
    assert lines[0] == "point,depth"
    assert len(lines) == 1 + sum(len(v) for v in cat.by_depth.values())


def test_geometric_constants_doubling():
    geo = geometric_constants(build_map("doubling"), make_roof("one_plus_x_sq"))
    assert geo["power"] == 2
    assert geo["rho0"] == pytest.approx(4.0)
    assert geo["rho"] == pytest.approx(math.sqrt(2))
    assert geo["C1"] == pytest.approx(0.0, abs=1e-12)
    # roof phi + phi o F on F^2: for h(x) = (x + 3)/4 the derivative (x + 3)/8 + (x + 1)/2 tends to 3/2
    assert geo["C2"] == pytest.approx(1.5, rel=1e-3)
    assert geo["C2"] <= 1.5
    assert geo["C2p"] == pytest.approx(geo["C2"] * 4 / 3)
    assert geo["delta0"] == pytest.approx(1.0 * 2 / (5 * 4))


def test_geometric_constants_beta3_const_roof():
    roof = make_roof("const", {"c": 1.0}, eps0=0.1)
    geo = geometric_constants(build_map("shifted_beta", {"beta": 3.0, "alpha": 0.0}), roof)
    assert geo["C2"] == pytest.approx(0.0, abs=1e-12)
    assert geo["C3"] == pytest.approx(math.exp(0.1 * geo["power"]), rel=1e-9)


def test_mp_tail_constant_finite():
    fmap = build_map("mp_first_return", {"alpha": 1.0, "gamma": 0.8})
    geo = geometric_constants(fmap, make_roof("one_plus_x_sq", y_range=(fmap.y_lo, fmap.y_hi)))
    assert np.isfinite(geo["C3"]) and geo["C3"] > 0


def test_working_system_power():
    ws = working_system(build_map("doubling"), make_roof("one_plus_x_sq"))
    assert ws.power == 2 and ws.fmap.rho0() > 2 ** (4 / 3)
    assert smallest_expanding_power(build_map("shifted_beta", {"beta": 3.0, "alpha": 0.0})) == 1


def test_iterated_roof_is_birkhoff_sum():
    d = build_map("doubling")
    roof = make_roof("one_plus_x_sq")
    r2 = iterated_roof(roof, d, 2)
    x = np.array([0.1, 0.4, 0.9])
    np.testing.assert_allclose(r2.phi(x), roof.phi(x) + roof.phi(d.forward(x)))


def test_mixing_and_images():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    k1 = mixing_time(f, 0.05)
    J = [(0.41, 0.46)]
    for _ in range(k1):
        J = interval_image(f, J)
    assert covers(J, 0.0, 1.0)


def test_roof_kinds():
    roof = make_roof("table", {"values": [1.0, 2.0, 1.5, 3.0]})
    assert roof.inf >= 1.0
    assert roof.sup == pytest.approx(3.0)
    lin = make_roof("linear", {"a": 1.0, "c": 1.0})
    np.testing.assert_allclose(lin.phi(np.array([0.0, 0.5])), [1.0, 1.5])
    with pytest.raises(Exception):
        make_roof("nonsense")


@settings(max_examples=40, deadline=None)
@given(beta=st.floats(2.05, 4.5), alpha=st.floats(0.0, 0.95), x=st.floats(0.0, 0.999999))
def test_property_inverse_branch_roundtrip(beta, alpha, x):
    f = build_map("shifted_beta", {"beta": beta, "alpha": alpha})
    for h in inverse_branches(f, 1, x):
        assert float(f.forward(np.array([float(h(x))]))[0]) == pytest.approx(x, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(2.05, 4.5), alpha=st.floats(0.0, 0.95), j=st.integers(1, 8))
def test_property_catalog_growth(beta, alpha, j):
    cat = discontinuity_catalog(build_map("shifted_beta", {"beta": beta, "alpha": alpha}), j)
    for d in cat.by_depth:
        assert len(cat.by_depth[d]) <= d * cat.n1
