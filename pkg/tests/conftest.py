from __future__ import annotations

import numpy as np
import pytest

from nonlocal_diffusion import AtomicMeasure, DomainSpec, build_operator, builtin_operator
from nonlocal_diffusion.workflows import Context
from nonlocal_diffusion.config import load_preset


@pytest.fixture(scope="session")
def half_line():
    return DomainSpec.half_line(1.0)


@pytest.fixture(scope="session")
def exterior2d():
    return DomainSpec.ball_exterior(1.0, 2)


@pytest.fixture(scope="session")
def delta2():
    return AtomicMeasure.dirac([2.0])


@pytest.fixture(scope="session")
def ou_op(half_line, delta2):
    """1D OU with return to 2, truncation n=6, h=0.05."""
    return build_operator(half_line, builtin_operator("ou"), delta2, 6, 0.05)


@pytest.fixture(scope="session")
def bm_op(half_line, delta2):
    return build_operator(half_line, builtin_operator("brownian"), delta2, 6, 0.05)


@pytest.fixture(scope="session")
def ou1d_ctx():
    return Context.from_config(load_preset("ou1d"))


@pytest.fixture(scope="session")
def ou2d_ctx():
    return Context.from_config(load_preset("ou2d"))


@pytest.fixture(scope="session")
def bm1d_ctx():
    return Context.from_config(load_preset("bm1d"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
