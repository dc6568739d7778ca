import numpy as np
import pytest

from srn_mpis.network import ReactionNetwork


@pytest.fixture
def death():
    return ReactionNetwork([[1]], [[0]], [1.0], ("X",))


@pytest.fixture
def birth():
    return ReactionNetwork([[0]], [[1]], [5.0], ("X",))


@pytest.fixture
def birth_death():
    return ReactionNetwork([[0], [1]], [[1], [0]], [2.0, 0.2], ("X",))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
