import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_CRITERIA: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(label: str, passed: bool, detail: str, soft: bool = False):
        status = "PASS" if passed else ("WARN" if soft else "FAIL")
        line = f"{status}  {label}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
