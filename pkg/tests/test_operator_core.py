import json
import math

import numpy as np
import pytest

from afu_numerics.bv_space import GridFunction, var
from afu_numerics.interval_map import build_map, make_roof, working_system
from afu_numerics.operator_core import (BudgetExceeded, TwistParam, apply_pointwise, assemble_ulam,
                                        branch_weight_bound, continuity_modulus, eigendata, normalized_apply,
                                        power_iteration)

CONST = make_roof("const", {"c": 1.0})
QUAD = make_roof("one_plus_x_sq")


def doubling():
    return build_map("doubling")


def test_pointwise_doubling_examples():
    x = np.linspace(0, 1, 11)[:-1]
    np.testing.assert_allclose(apply_pointwise(doubling(), QUAD, 0.0, 1, 1.0, x), 1.0, atol=1e-14)
    np.testing.assert_allclose(apply_pointwise(doubling(), QUAD, 0.0, 1, lambda t: t, x), x / 2 + 0.25, atol=1e-14)
    b = 3.7
    lhs = apply_pointwise(doubling(), CONST, 1j * b, 1, lambda t: np.cos(5 * t), x)
    rhs = np.exp(1j * b) * apply_pointwise(doubling(), CONST, 0.0, 1, lambda t: np.cos(5 * t), x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)


def test_budget_exceeded():
    with pytest.raises(BudgetExceeded):
        apply_pointwise(doubling(), QUAD, 0.0, 20, 1.0, np.linspace(0, 1, 64), budget=1000)


def test_ulam_small_matrices():
    np.testing.assert_allclose(assemble_ulam(doubling(), QUAD, 0.0, 2).matrix.toarray(), 0.5, atol=1e-14)
    beta3 = build_map("shifted_beta", {"beta": 3.0, "alpha": 0.0})
    np.testing.assert_allclose(assemble_ulam(beta3, CONST, 0.0, 3).matrix.toarray(), 1 / 3, atol=1e-14)


def test_ulam_preserves_integrals_and_eigenvalue():
    f = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    U = assemble_ulam(f, CONST, 0.0, 1024)
    np.testing.assert_allclose(np.asarray(U.matrix.sum(axis=0)).ravel(), 1.0, atol=1e-12)
    lam, *_ = power_iteration(U.matrix, U.h)
    assert lam == pytest.approx(1.0, abs=1e-6)


def test_eigendata_doubling():
    sd = eigendata(working_system(doubling(), QUAD), 0.0, 512)
    assert sd.lam == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.real(sd.f.values), 1.0, atol=1e-10)
    assert sd.residual <= 1e-8


def test_golden_density_two_levels():
    g = (1 + math.sqrt(5)) / 2
    sd = eigendata(working_system(build_map("golden_beta"), CONST, power=1), 0.0, 1000)
    c = 1 / (1 / g + 1 / g**3)
    np.testing.assert_allclose(sd.f_eval(np.array([0.1, 0.5])), c, rtol=1e-3)
    np.testing.assert_allclose(sd.f_eval(np.array([0.7, 0.95])), c / g, rtol=1e-3)


def test_eigenvalue_first_order_in_sigma():
    ws = working_system(doubling(), QUAD, power=1)
    sigma = 0.01
    sd = eigendata(ws, sigma, 1024)
    assert sd.lam > 1
    # d log(lambda)/d sigma at 0 is the mean roof 4/3 under Lebesgue
    assert math.log(sd.lam) == pytest.approx(sigma * 4 / 3, rel=0.2)


def test_big_lambda_quadratic():
    ws = working_system(doubling(), QUAD)
    lams = {s: eigendata(ws, s, 512).Lam for s in (0.005, 0.01, 0.02)}
    assert all(v >= 1 - 1e-12 for v in lams.values())
    r = (lams[0.02] - 1) / (lams[0.01] - 1)
    assert 2.5 < r < 6.0


@pytest.mark.parametrize("sigma", [-0.01, -0.005, 0.0, 0.005, 0.01])
def test_eigen_residual(sigma):
    sd = eigendata(working_system(build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3}), QUAD), sigma, 1024)
    assert sd.residual <= 1e-8
    assert np.all(np.real(sd.f.values) > 0)


def test_spectral_export():
    sd = eigendata(working_system(doubling(), QUAD), 0.01, 256)
    head = json.loads(json.dumps(sd.header()))
    assert {"sigma", "lambda", "Lambda", "residual"} <= set(head)
    lines = sd.to_csv().strip().splitlines()
    assert len(lines) == 257


def test_normalized_examples():
    # f_sigma is a step function, so L~_sigma 1 = 1 holds pointwise up to the grid error O(1/N)
    x = np.random.default_rng(0).random(500)
    for tag, params, tol_max, tol_mean in (("doubling", {}, 0.02, 0.01), ("shifted_beta", {"beta": 2.5, "alpha": 0.3},
                                                                          100.0, 1.0)):
        ws = working_system(build_map(tag, params), QUAD)
        for N in (1024, 4096):
            err = np.abs(normalized_apply(eigendata(ws, 0.01, N), 0.01, 2, 1.0, x) - 1)
            assert err.max() <= tol_max / N and err.mean() <= tol_mean / N
    wc = working_system(doubling(), CONST, power=1)
    sd0 = eigendata(wc, 0.0, 256)
    b = 2.3
    for n in (1, 3):
        np.testing.assert_allclose(normalized_apply(sd0, 1j * b, n, 1.0, x), np.exp(1j * b * n), atol=1e-12)


def test_conjugation_identity():
    ws = working_system(build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3}), QUAD)
    sd = eigendata(ws, 0.01, 1024)
    s = complex(0.01, 3.0)
    x = np.random.default_rng(1).random(100)

    def v(t):
        return np.cos(3 * t) + 1j * (t > 0.4)

    for n, m in ((1, 1), (1, 2), (2, 1)):
        direct = normalized_apply(sd, s, n + m, v, x)
        inner = normalized_apply(sd, s, m, lambda t: normalized_apply(sd, s, n, v, t), x)
        np.testing.assert_allclose(inner, direct, rtol=1e-8, atol=1e-12)


def test_normalized_pointwise_vs_ulam():
    ws = working_system(build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3}), QUAD)
    N = 2**14
    sd = eigendata(ws, 0.01, N)
    s = complex(0.01, 2.0)
    U = assemble_ulam(ws.fmap, ws.roof, s, N)
    f = np.real(sd.f.values)
    centers = (np.arange(N) + 0.5) / N
    v = (centers < 0.5).astype(float)
    ulam = U.apply(f * v, 2) / (sd.lam**2 * f)
    exact = normalized_apply(sd, s, 2, lambda t: (t < 0.5).astype(float), centers)
    l1 = float(np.mean(np.abs(ulam - exact)))
    bv = 2.0 + 0.5
    assert l1 <= 20 * bv / N


def test_duality():
    rng = np.random.default_rng(3)
    fmap = build_map("shifted_beta", {"beta": 2.5, "alpha": 0.3})
    for N in (2**8, 2**12):
        x = (np.arange(N) + 0.5) / N
        worst = 0.0
        for _ in range(64):
            a, c = rng.normal(size=2)
            xi = rng.random()
            v = lambda t, a=a, xi=xi: np.sin(2 * np.pi * a * t) + (t > xi)
            w = lambda t, c=c: np.cos(3 * c * t)
            lhs = np.mean(apply_pointwise(fmap, CONST, 0.0, 1, v, x).real * w(x))
            rhs = np.mean(v(x) * w(fmap.forward(x)))
            worst = max(worst, abs(lhs - rhs))
        assert worst <= 40 / N


def test_ulam_error_order():
    ws = working_system(doubling(), QUAD, power=1)
    s = complex(0.01, 2.0)
    errs = []
    for N in (256, 512, 1024, 2048):
        fine = 16
        xf = (np.arange(N * fine) + 0.5) / (N * fine)
        v = lambda t: np.exp(t) * np.cos(4 * t)
        cell_v = v(xf).reshape(N, fine).mean(axis=1)
        ref = apply_pointwise(ws.fmap, ws.roof, s, 1, v, xf).reshape(N, fine).mean(axis=1)
        U = assemble_ulam(ws.fmap, ws.roof, s, N)
        errs.append(float(np.mean(np.abs(U.apply(cell_v) - ref))))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 2 / 1.5) & (ratios < 2 * 1.5))


def test_continuity_modulus():
    ws = working_system(doubling(), QUAD)
    x = (np.arange(512) + 0.5) / 512
    fam = [GridFunction(np.cos(2 * np.pi * j * x)) for j in (1, 2, 3)] + [GridFunction((x > 0.3) * 1.0)]
    assert continuity_modulus(ws, [(0.01, 0.01)], [(0.5, 0.5)], fam, N=512) == 0.0
    r1 = continuity_modulus(ws, [(0.0, 0.01)], [(0.5, 0.5)], fam, N=512)
    r2 = continuity_modulus(ws, [(0.0, 0.005)], [(0.5, 0.5)], fam, N=512)
    assert np.isfinite(r1) and r1 > 0
    assert abs(r1 - r2) <= 0.25 * r2


def test_continuity_modulus_constant_roof():
    c = 1.5
    wc = working_system(doubling(), make_roof("const", {"c": c}), power=1)
    x = (np.arange(512) + 0.5) / 512
    fam = [GridFunction(np.cos(2 * np.pi * x)), GridFunction((x > 0.3) * 1.0)]
    ratio = continuity_modulus(wc, [(0.0, 0.01)], [(0.0, 0.0)], fam, N=512)
    L_bv = max(var(GridFunction(apply_pointwise(wc.fmap, CONST, 0.0, 1, v, x))) +
               float(np.mean(np.abs(apply_pointwise(wc.fmap, CONST, 0.0, 1, v, x)))) for v in fam)
    assert ratio <= c * math.exp(0.01 * c) * L_bv * (1 + 1e-9)


def test_branch_weight_bound_doubling():
    ws = working_system(doubling(), QUAD)
    res = branch_weight_bound(ws, 0.0, 1, 1.0)
    assert res["value"] == pytest.approx(0.25, rel=1e-12)
    assert res["passes"] and res["bound"] == pytest.approx(2 ** -1.5)
    # without the eigenvalue normalization a negative twist shrinks every weight
    assert branch_weight_bound(ws, -0.05, 1, 1.0)["value"] < res["value"]
    # with it, lambda_sigma < 1 can outweigh exp(sigma phi); the bound still holds
    neg = branch_weight_bound(ws, -0.05, 1, eigendata(ws, -0.05, 512).lam)
    assert neg["passes"]


def test_twist_param_check():
    TwistParam(0.001, 5.0).check(0.01)
    with pytest.raises(ValueError):
        TwistParam(0.02, 5.0).check(0.01)
    assert TwistParam(0.1, 2.0).s == complex(0.1, 2.0)
