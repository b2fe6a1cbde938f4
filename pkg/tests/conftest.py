from pathlib import Path

import pytest

from coalition_ne.scenario import random_toy_game, toy_topology

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def toy_game():
    return random_toy_game(0)


@pytest.fixture(scope="session")
def toy_topo():
    return toy_topology()


@pytest.fixture(scope="session")
def scenario_dir():
    return SCENARIOS


# -- acceptance summary -------------------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion; returns ``ok``."""
    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
