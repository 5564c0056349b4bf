import numpy as np
import pytest
import torch

from pedattr import load_schema


@pytest.fixture(scope="session")
def schema():
    return load_schema("msp60k")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# -- acceptance summary: one pass/fail line per criterion ---------------

_criteria = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::test_criterion_")[1]
        number = int(name.split("_")[0])
        _criteria[number] = (report.outcome == "passed", name.split("_", 1)[1].replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        ok, label = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {label}")
