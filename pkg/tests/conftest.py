import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dae_cct.cct import find_cct_event  # noqa: E402
from dae_cct.model import smib_scenario  # noqa: E402
from dae_cct.simulator import integrate_fault_with_shadow  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def base():
    return smib_scenario()


@pytest.fixture(scope="session")
def base_fault(base):
    return integrate_fault_with_shadow(base)


@pytest.fixture(scope="session")
def base_cct(base):
    return find_cct_event(base)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
