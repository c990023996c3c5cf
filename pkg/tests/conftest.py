import json
from pathlib import Path

import numpy as np
import pytest

ORACLES = Path(__file__).parent / "oracles"


@pytest.fixture(scope="session")
def special_oracle():
    return json.loads((ORACLES / "special_functions.json").read_text())


@pytest.fixture(scope="session")
def scalar_oracle():
    return json.loads((ORACLES / "scalars.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# filled by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
