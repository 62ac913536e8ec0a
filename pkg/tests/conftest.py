import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mgtmem.kernels import make_exponential, make_oscillating, make_staircase
from mgtmem.kernels import ScaledKernel

settings.register_profile("ci", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def builtin_kernels():
    return {
        "exponential": make_exponential(1.0, 1.0),
        "oscillating": make_oscillating(),
        "oscillating_scaled": ScaledKernel(make_oscillating(), 0.2),
        "staircase": make_staircase(),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the summary printed after the run."""

    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
