from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meshft.mesher import periodic_delaunay, periodic_grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid32():
    return periodic_grid(32, 32)


@pytest.fixture(scope="session")
def grid8():
    return periodic_grid(8, 8)


@pytest.fixture(scope="session")
def delaunay64():
    return periodic_delaunay(64, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria: one PASS/FAIL line each, repeated in the terminal summary
_ACCEPTANCE: dict = {}


@pytest.fixture
def accept():
    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
