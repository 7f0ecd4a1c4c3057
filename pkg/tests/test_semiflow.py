import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import ks_2samp

from afu_numerics.bv_space import GridFunction
from afu_numerics.interval_map import build_map, make_roof
from afu_numerics.semiflow import (CorrelationSeries, SuspensionObservable, correlation, fit_exponential,
                                   flow_point, sample_suspension, tail_envelope)

D = build_map("doubling")
QUAD = make_roof("one_plus_x_sq")
ONES = GridFunction(np.ones(256))


def v_obs(y, u):
    return np.cos(2 * np.pi * y) * (1 + u)


def w_obs(y, u):
    return np.sin(2 * np.pi * y) + y**2 + 0.3 * u


def test_flow_examples():
    y, u = flow_point(0.3, 0.2, 0.0, D, QUAD)
    assert (float(y), float(u)) == (0.3, pytest.approx(0.2))
    y, u = flow_point(0.3, 0.0, 1.09 + 0.1, D, QUAD)
    assert float(y) == pytest.approx(0.6) and float(u) == pytest.approx(0.1)
    const = make_roof("const", {"c": 1.0})
    y, u = flow_point(0.3, 0.25, 2.5, D, const)
    assert float(y) == pytest.approx(0.2) and float(u) == pytest.approx(0.75)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(0.0, 4.0), t=st.floats(0.0, 4.0))
def test_property_flow_composition(seed, s, t):
    rng = np.random.default_rng(seed)
    y0, u0 = sample_suspension(1000, D, QUAD, ONES, rng)
    y1, u1 = flow_point(*flow_point(y0, u0, s, D, QUAD), t, D, QUAD)
    y2, u2 = flow_point(y0, u0, s + t, D, QUAD)
    # rounding can move a point across an identification; such points are rare
    close = (np.abs(y1 - y2) < 1e-9) & (np.abs(u1 - u2) < 1e-9)
    assert close.mean() >= 0.99


@pytest.mark.parametrize("t", [0.7, 1.3])
def test_measure_invariance(t):
    n = 20000
    rng = np.random.default_rng(5)
    y0, u0 = sample_suspension(n, D, QUAD, ONES, rng)
    yt, ut = flow_point(y0, u0, t, D, QUAD)
    y_ref, u_ref = sample_suspension(n, D, QUAD, ONES, rng)
    assert ks_2samp(yt, y_ref).statistic < 4 / np.sqrt(n)
    assert ks_2samp(ut, u_ref).statistic < 4 / np.sqrt(n)


def test_correlation_centering_and_constants():
    t = np.array([0.0, 0.5, 1.0])
    base = correlation(v_obs, w_obs, t, 2000, 3, D, QUAD, ONES)
    shifted = correlation(lambda y, u: v_obs(y, u) + 5.0, w_obs, t, 2000, 3, D, QUAD, ONES)
    np.testing.assert_allclose(shifted.rho, base.rho, atol=1e-12)
    flat = correlation(lambda y, u: np.full_like(y, 2.0), w_obs, t, 2000, 3, D, QUAD, ONES)
    np.testing.assert_allclose(flat.rho, 0.0, atol=1e-12)


def test_correlation_at_zero_is_variance():
    res = correlation(v_obs, v_obs, [0.0], 40000, 1, D, QUAD, ONES)
    y, u = sample_suspension(200000, D, QUAD, ONES, np.random.default_rng(9))
    ref = float(np.var(v_obs(y, u)))
    assert res.rho[0] == pytest.approx(ref, abs=4 * res.stderr[0] + 0.01)


def test_correlation_deterministic_and_validated():
    t = [0.0, 1.0]
    a = correlation(v_obs, w_obs, t, 1000, 42, D, QUAD, ONES)
    b = correlation(v_obs, w_obs, t, 1000, 42, D, QUAD, ONES)
    np.testing.assert_array_equal(a.rho, b.rho)
    assert a.to_csv() == b.to_csv()
    with pytest.raises(ValueError):
        correlation(v_obs, w_obs, t, 999, 42, D, QUAD, ONES)


def _series(rho, se=1e-4):
    t = np.linspace(0.0, 10.0, len(rho))
    return CorrelationSeries(t, np.asarray(rho), np.full(len(rho), se), 10**6)


def test_fit_recovers_exponential():
    t = np.linspace(0.0, 10.0, 30)
    fit = fit_exponential(_series(2 * np.exp(-0.5 * t)))
    assert fit["status"] == "ok" and fit["exponential"]
    assert fit["a0"] == pytest.approx(2.0, rel=1e-6) and fit["a1"] == pytest.approx(0.5, rel=1e-6)


def test_fit_flags_power_law_as_curved():
    t = np.linspace(0.0, 10.0, 30)
    fit = fit_exponential(_series(1 / (1 + t)))
    assert fit["curved"] and not fit["exponential"]


def test_fit_inconclusive_with_few_points():
    fit = fit_exponential(_series(np.r_[np.exp(-np.arange(5)), np.zeros(10)], se=1e-3))
    assert fit["status"] == "inconclusive" and not fit["exponential"]


def test_series_export():
    s = _series(2 * np.exp(-0.5 * np.linspace(0, 10, 12)))
    s.fit = fit_exponential(s)
    assert s.to_csv().splitlines()[0] == "t,rho,stderr"
    assert len(s.to_csv().splitlines()) == 13
    assert json.loads(s.fit_json())["status"] == "ok"


def test_tail_envelope():
    np.testing.assert_array_equal(tail_envelope([1.0, -3.0, 0.5, 2.0, 0.1]), [3.0, 3.0, 2.0, 2.0, 0.1])


def test_suspension_observable():
    heights = np.linspace(0.0, 2.0, 9)
    obs = SuspensionObservable.from_function(lambda y, u: y + u**3 - u, 512, heights)
    y = np.array([0.1, 0.5, 0.9])
    u = np.array([0.13, 1.07, 1.9])
    # cubic in u is reproduced exactly; y is a step of width 1/512
    np.testing.assert_allclose(obs(y, u), y + u**3 - u, atol=1 / 512)
    assert np.isnan(obs(np.array([np.nan]), np.array([0.5])))[0]
    assert obs.bv_norm() > 0
    with pytest.raises(ValueError):
        SuspensionObservable(heights[:3], obs.layers[:3])
    with pytest.raises(ValueError):
        SuspensionObservable(heights[::-1], obs.layers)
