from __future__ import annotations

import numpy as np
import pytest

from texro._accel import ENV_FLAG
from texro.fixtures import make_icosphere, make_quad, make_uv_sphere


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request, monkeypatch):
    """Run a test once per kernel implementation."""
    if request.param == "numpy":
        monkeypatch.setenv(ENV_FLAG, "1")
    else:
        monkeypatch.delenv(ENV_FLAG, raising=False)
    return request.param


@pytest.fixture
def numpy_only(monkeypatch):
    monkeypatch.setenv(ENV_FLAG, "1")


@pytest.fixture(scope="session")
def uv_sphere():
    return make_uv_sphere()


@pytest.fixture(scope="session")
def icosphere2():
    return make_icosphere(2)


@pytest.fixture(scope="session")
def quad():
    return make_quad()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Store a criterion verdict; printed now and again in the terminal summary."""
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
