import json
import math

import pytest

from afu_numerics.dolgopyat_harness.ledger import (ETA0, N0_RHS, LedgerConfig, LedgerInfeasible, build_ledger,
                                                  c10_value, display_density, display_extra, display_n0,
                                                  n0_from_display)
from conftest import system_for


def test_eta0_value():
    assert ETA0 == pytest.approx(0.8228756555322953, rel=1e-15)
    assert N0_RHS == pytest.approx(math.sqrt(2 - 2 * math.cos(math.pi / 12)) / 4)


def test_delta_prime_formula(ledgers):
    # delta' = delta / (4 delta + 6 Delta); with delta = 0.1 and Delta = 1 this is 1/64
    assert 0.1 / (4 * 0.1 + 6 * 1.0) == pytest.approx(0.015625)
    led = ledgers("doubling")
    assert led.delta_p == pytest.approx(led.delta / (4 * led.delta + 6 * led.Delta))
    assert led.delta_pp(2.0) == pytest.approx(led.delta_p / 4)


def test_markov_ledger_complete(ledgers):
    led = ledgers("doubling")
    assert led.markov and led.vacuous_extra
    assert led.k == 1 and led.n0 is not None and led.n0 % led.k == 0
    assert led.D > 0 and led.C0 >= led.D
    assert all(v for v in led.status.values() if v is not None)
    assert led.delta * led.D / (16 * math.pi) < 1 / 12
    assert led.C0 * led.delta < math.pi / 6
    assert led.reference["k"] is not None and led.reference["k"] % (2 * led.k1) == 0
    payload = json.loads(json.dumps(led.to_dict()))
    assert payload["n0"] == led.n0 and len(payload["atoms"]) == len(led.atoms)


def test_n0_display_is_tight(ledgers):
    led = ledgers("doubling")
    n0 = n0_from_display(led.C10, led.rho0, led.D, led.k)
    assert n0 == led.n0
    assert display_n0(led.C10, led.rho0, n0, led.D)
    if n0 > led.k:
        assert not display_n0(led.C10, led.rho0, n0 - led.k, led.D)
    assert n0_from_display(led.C10, led.rho0, 0.0, led.k) is None


def test_c10_needs_positive_denominator():
    assert c10_value(0.0, 1.0, 0.0, 0.1, 4.0, 1) == pytest.approx(2 * 1.1 * math.exp(0.1) / (2 * ETA0 - 1.0))
    assert math.isinf(c10_value(0.0, 1.0, 0.0, 0.1, 2.0, 1))


def test_depth_displays_monotone_in_k():
    assert not display_extra(1, 3, 10.0, 1.5)
    assert display_extra(20, 3, 10.0, 1.5)
    assert not display_density(1, 1.2, 2.0, 1.0, 0.5, 1.0)
    assert display_density(30, 1.2, 2.0, 1.0, 0.5, 1.0)


def test_strict_ledger_infeasible_with_tiny_cap():
    with pytest.raises(LedgerInfeasible) as err:
        build_ledger(system_for("doubling"), LedgerConfig(strict=True, k_cap=1))
    assert err.value.display


def test_non_markov_ledger_records_flags(ledgers):
    led = ledgers("shifted")
    assert not led.markov
    assert led.k >= 1 and led.C9 > 0
    if led.n0 is None:
        assert led.status["uni"] is None or not led.status["n0 phase bound"]
