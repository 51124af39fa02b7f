from __future__ import annotations

import numpy as np
import pytest

from pclindex.engine import horizon_for_tolerance
from pclindex.models import ChannelParams, channel_project


@pytest.fixture(scope="session")
def params() -> ChannelParams:
    return ChannelParams(0.2, 0.3, 0.8)


@pytest.fixture(scope="session")
def channel(params):
    return channel_project(params)


@pytest.fixture(scope="session")
def k_fine(channel, params) -> int:
    """Horizon certifying index accuracy 1e-8 with the analytic floor ``g >= 1 - beta``."""
    return horizon_for_tolerance(channel, 1e-8, 1.0 - params.beta, 1.0)


@pytest.fixture(scope="session")
def grid201() -> np.ndarray:
    return np.linspace(0.0, 1.0, 201)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
