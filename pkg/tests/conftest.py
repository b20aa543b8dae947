import numpy as np
import pytest

from covert_qcd.model import reference_channel, reference_scenario


@pytest.fixture(scope="session")
def channel():
    return reference_channel()


@pytest.fixture(scope="session")
def scenario_factory():
    return reference_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Print one PASS/FAIL line per criterion and assert it."""

    def report(number: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
