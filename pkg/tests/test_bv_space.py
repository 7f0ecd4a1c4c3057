import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afu_numerics.bv_space import (ConePair, GridFunction, Jump, b_norm, cone_check, extra_term,
                                   extra_term_remainder, jump_size, jumps_to_csv, keller_var, osc, var)
from afu_numerics.interval_map import build_map, discontinuity_catalog

N = 1024


def indicator(a, b, n=N):
    return GridFunction.step([(a, 1.0), (b, -1.0)], n)


def test_var_examples():
    assert var(indicator(0.25, 0.5)) == pytest.approx(2.0)
    lin = GridFunction.from_function(lambda t: t, N)
    assert var(lin) == pytest.approx(1 - 1 / N)
    steps = [(0.1, 0.5), (0.3, 1.5), (0.6, 0.25)]
    assert var(GridFunction.step(steps, N)) == pytest.approx(2.25)


def test_var_mixed_signs_direct_sum():
    steps = [(0.1, 0.5), (0.3, -1.5), (0.6, 0.25), (0.8, -2.0)]
    g = GridFunction.step(steps, N)
    expected = sum(abs(a) for _, a in steps)
    assert var(g) == pytest.approx(expected)
    assert var(g) == pytest.approx(float(np.sum(np.abs(np.diff(g.values)))))


def test_var_on_subinterval():
    g = indicator(0.25, 0.5)
    assert var(g, (0.0, 0.4)) == pytest.approx(1.0)
    assert var(g, (0.3, 0.45)) == pytest.approx(0.0)


def test_keller_examples():
    assert keller_var(GridFunction(np.full(N, 3.0))) == 0.0
    assert 1.0 <= keller_var(indicator(0.25, 0.5, 2**12)) <= 6.0
    value = keller_var(GridFunction.from_function(lambda t: t, 2**14))
    assert 0.5 <= value <= 3.0


def test_jump_size_examples():
    g = GridFunction.step([(0.2, 0.7), (0.55, -1.3)], N)
    assert jump_size(g, 0.2) == pytest.approx(0.7)
    assert jump_size(g, 0.55) == pytest.approx(1.3)
    assert jump_size(g, 0.4) == 0.0
    smooth = GridFunction.from_function(lambda t: np.sin(3 * t), N)
    assert jump_size(smooth, 0.41) <= 3.0 / N


def test_jump_catalog_reproduces_differences():
    steps = [(0.25, 0.7 + 0.1j), (576 / N, -1.3)]
    g = GridFunction.step(steps, N)
    for x, a in steps:
        i = int(g.cell(np.array([x]))[0])
        assert g.values[i] - g.values[i - 1] == pytest.approx(a)
    text = jumps_to_csv(g.jumps)
    assert text.splitlines()[0].split(",")[:3] == ["x", "re", "im"]


def test_b_norm_examples():
    assert b_norm(GridFunction(np.ones(N)), 17.0) == pytest.approx(1.0)
    assert b_norm(indicator(0.25, 0.5), 3.0) == pytest.approx(0.75)
    lin = GridFunction.from_function(lambda t: t, N)
    assert b_norm(lin, 0.0) == pytest.approx(1 - 1 / N + 0.5)


@settings(max_examples=50, deadline=None)
@given(c=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       seed=st.integers(0, 2**32 - 1), b=st.floats(-100, 100))
def test_property_b_norm_homogeneous(c, seed, b):
    v = GridFunction(np.random.default_rng(seed).normal(size=64) + 0j)
    assert b_norm(v * c, b) == pytest.approx(abs(c) * b_norm(v, b), rel=1e-12, abs=1e-300)


def _random_function(rng, n):
    x = (np.arange(n) + 0.5) / n
    out = np.zeros(n)
    kind = rng.integers(3)
    if kind != 1:
        for xi in rng.random(rng.integers(1, 6)):
            out += rng.normal() * (x >= xi)
    if kind != 0:
        for j in range(1, 4):
            out += rng.normal() / j * np.cos(2 * np.pi * j * x + rng.random())
    return GridFunction(out)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_property_seminorm_equivalence(seed):
    n = 1024
    v = _random_function(np.random.default_rng(seed), n)
    V, K = var(v), keller_var(v)
    slack = 1 + 10 / n
    assert 0.5 * V <= K * slack
    assert K <= 3 * V * slack


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_property_osc_size(seed):
    rng = np.random.default_rng(seed)
    pts = np.sort(rng.choice(np.arange(1, 64), size=4, replace=False) / 64)
    g = GridFunction.step([(p, complex(*rng.normal(size=2))) for p in pts], 256)
    x, y = pts[0], pts[2]
    closed = osc(g, (x, y), closed=True)
    opened = osc(g, (x, y), closed=False)
    assert closed <= opened + jump_size(g, x) + jump_size(g, y) + 1e-12


def test_extra_term_markov_is_zero():
    cat = discontinuity_catalog(build_map("doubling"), 10)
    assert extra_term(GridFunction(np.ones(N)), None, cat, 1, 2**0.5) == 0.0


def test_extra_term_shifted_beta_direct_sum():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    cat = discontinuity_catalog(f, 12)
    rho = f.rho0() ** 0.25
    expected = 0.0
    for j in range(3, 13):
        pts = np.asarray(cat.by_depth[j])
        expected += rho ** (-j) * np.sum((pts > 1e-12) & (pts < 1 - 1e-12))
    u = GridFunction(np.ones(2**14))
    assert extra_term(u, None, cat, 2, rho) == pytest.approx(expected)
    assert extra_term_remainder(u, cat, rho) == pytest.approx(cat.n1 * rho**-12 / (rho - 1))


def test_extra_term_small_inside_atoms(ledgers):
    led = ledgers("shifted")
    cat = discontinuity_catalog(led.system.fmap, led.k + 12)
    rng = np.random.default_rng(4)
    u = GridFunction(1.0 + 0.3 * rng.random(2**12))
    for a, b in led.atoms[:: max(1, len(led.atoms) // 20)]:
        sup_u = float(np.max(np.real(u.values)[u.cell(np.array([a]))[0]:u.cell(np.array([b]))[0] + 1]))
        assert led.C8 * extra_term(u, (a, b), cat, led.k, led.rho) <= sup_u / 12


def test_cone_examples(ledgers):
    led = ledgers("doubling")
    cat = discontinuity_catalog(led.system.fmap, led.k + 12)
    one = GridFunction(np.ones(2048))
    half = GridFunction(np.full(2048, 0.5 + 0j))
    assert cone_check(ConePair(one, half, 50.0), cat, led, breakpoints=led.breakpoints)["in_cone"]
    bad = GridFunction(0.5 * ((one.centers >= 0.3) & (one.centers < 0.6)) + 0j)
    res = cone_check(ConePair(one, bad, 50.0), cat, led, breakpoints=led.breakpoints)
    assert not res["in_cone"]
    assert any(v["kind"].startswith("jump_outside_catalog") for v in res["violations"])
    over = GridFunction(np.full(2048, 1.5 + 0j))
    res = cone_check(ConePair(one, over, 50.0), cat, led, breakpoints=led.breakpoints)
    assert any(v["kind"] == "domination" for v in res["violations"])


def test_cone_reports_positivity(ledgers):
    led = ledgers("doubling")
    cat = discontinuity_catalog(led.system.fmap, led.k + 12)
    u = GridFunction(np.r_[np.zeros(8), np.ones(248)])
    res = cone_check(ConePair(u, GridFunction(np.zeros(256) + 0j), 50.0), cat, led, breakpoints=led.breakpoints)
    assert not res["in_cone"]
    assert res["violations"][0]["kind"] == "positivity"


def test_csv_roundtrip():
    g = GridFunction(np.array([1.0 + 2j, -0.5, 3.25j]))
    back = GridFunction.from_csv(g.to_csv())
    np.testing.assert_array_equal(back.values, g.values)


def test_jump_dataclass():
    j = Jump(0.5, 1 + 1j, 3)
    assert j.depth == 3 and abs(j.size) == pytest.approx(2**0.5)


@pytest.mark.parametrize("beta", [2.0, 3.0])
def test_var_contracts_under_full_branch_operator(beta):
    from afu_numerics.interval_map import make_roof
    from afu_numerics.operator_core import apply_pointwise

    fmap = build_map("shifted_beta", {"beta": beta, "alpha": 0.0})
    roof = make_roof("const", {"c": 1.0})
    rng = np.random.default_rng(int(beta))
    n = 2048
    x = (np.arange(n) + 0.5) / n
    for _ in range(32):
        v = _random_function(rng, n)
        out = GridFunction(apply_pointwise(fmap, roof, 0.0, 1, v, x).real)
        # full affine branches: Var(L v) <= Var(v) / beta up to one grid cell per branch
        assert var(out) <= var(v) / beta + 2 * np.max(np.abs(v.values)) / n
