"""Shared fixtures: working systems and ledgers are expensive, so they are built once per session."""

import numpy as np
import pytest

from afu_numerics.interval_map import build_map, make_roof, working_system
from afu_numerics.dolgopyat_harness.ledger import build_ledger

MAPS = {
    "doubling": ("doubling", {}),
    "beta3": ("shifted_beta", {"beta": 3.0, "alpha": 0.0}),
    "golden": ("golden_beta", {}),
    "shifted": ("shifted_beta", {"beta": 2.5, "alpha": 0.3}),
    "mp": ("mp_first_return", {"alpha": 1.0, "gamma": 0.8}),
}

ACCEPTANCE_LINES: list[str] = []


def system_for(name, roof_kind="one_plus_x_sq", roof_params=None, power=None):
    tag, params = MAPS[name]
    fmap = build_map(tag, params)
    roof = make_roof(roof_kind, roof_params or {}, y_range=(fmap.y_lo, fmap.y_hi))
    return working_system(fmap, roof, power)


class _LedgerCache:
    def __init__(self):
        self._store = {}

    def __call__(self, name, roof_kind="one_plus_x_sq", roof_params=None):
        key = (name, roof_kind, tuple(sorted((roof_params or {}).items())))
        if key not in self._store:
            self._store[key] = build_ledger(system_for(name, roof_kind, roof_params))
        return self._store[key]


@pytest.fixture(scope="session")
def ledgers():
    return _LedgerCache()


@pytest.fixture(scope="session")
def doubling_system():
    return system_for("doubling")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def report():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def _report(number: int, passed: bool, detail: str = ""):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
