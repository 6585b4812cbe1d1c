import json
from pathlib import Path

import numpy as np
import pytest

from agps import env as envmod

GOLDEN = Path(__file__).parent / "golden"


def golden_text(name):
    return (GOLDEN / name).read_text()


def golden_json(name):
    return json.loads(golden_text(name))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ins_cfg():
    return envmod.insertion_config()


@pytest.fixture(scope="session")
def hang_cfg():
    return envmod.hanging_config()


@pytest.fixture(scope="session")
def ins_demos(ins_cfg):
    return envmod.generate_demos(ins_cfg, 5, np.random.default_rng(0))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
