"""Shared fixtures: default tables, seeded bodies and cached flow traces."""

from __future__ import annotations

import numpy as np
import pytest

from widthflow.flow_engine import run_flow
from widthflow.sphere_grid import default_table
from widthflow.width_body import WidthBody, make_zonal_reuleaux, random_body

DESK_TAU = 0.05
DESK_STEPS = 200

_TRACES: dict = {}


def desk_trace(seed: int, tau: float = DESK_TAU, n_steps: int = DESK_STEPS):
    """Flow of ``random_body(9, 0.05, seed)``, computed once per session."""
    key = (seed, tau, n_steps)
    if key not in _TRACES:
        _TRACES[key] = run_flow(random_body(9, 0.05, seed), tau, n_steps)
    return _TRACES[key]


@pytest.fixture(scope="session")
def table():
    return default_table(9)


@pytest.fixture(scope="session")
def ball(table):
    return WidthBody.ball(table=table)


@pytest.fixture(scope="session")
def zonal(table):
    return make_zonal_reuleaux(9, table)


@pytest.fixture(scope="session")
def body7():
    return random_body(9, 0.05, 7)


@pytest.fixture(scope="session")
def trace7():
    return desk_trace(7)


@pytest.fixture(scope="session")
def short_trace():
    """Ten steps from seed 3, enough for cheap diagnostics tests."""
    return run_flow(random_body(9, 0.05, 3), DESK_TAU, 10)


@pytest.fixture(scope="session")
def ball_trace(ball):
    return run_flow(ball, DESK_TAU, 5)


def unit_vectors(rng, n):
    u = rng.standard_normal((n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number:2d} [{status}] {name}" + (f": {detail}" if detail else "")
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
