import json
from importlib import resources

import pytest

from gridmfg.config import load_scenario, parse_scenario


def shipped(name: str):
    return load_scenario(str(resources.files("gridmfg") / "scenarios" / f"{name}.json"))


def shipped_tree(name: str) -> dict:
    return json.loads((resources.files("gridmfg") / "scenarios" / f"{name}.json").read_text())


@pytest.fixture
def one_region():
    return shipped("one_region")


@pytest.fixture
def zero():
    return shipped("zero")


@pytest.fixture
def two_zones():
    return shipped("two_zones")


def variant(name: str, edit) -> object:
    tree = shipped_tree(name)
    edit(tree)
    return parse_scenario(tree)


ACCEPTANCE: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
