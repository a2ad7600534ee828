import json
import os
import sys

import pytest

# tests import the loop-based oracles as a plain module
sys.path.insert(0, os.path.dirname(__file__))

DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture(scope="session")
def toy_calibration():
    with open(os.path.join(DATA, "toy_calibration.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def default_runs():
    """Regular and Armour trained once at the committed default budget."""
    from armour.toy_train import train

    return {v: train(v) for v in ("regular", "armour")}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
